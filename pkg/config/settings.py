# config/settings.py

# ------------------------------------------------------------
# Exact enumeration
# ------------------------------------------------------------

# Largest q**M the oracle will enumerate (M = 26 binary).
ENUMERATION_BUDGET = 2**26

# Low-order variables enumerated as one vectorized block.
ENUMERATION_BLOCK_BITS = 16

# Energy levels closer than 10**-LEVEL_DECIMALS are merged.
LEVEL_DECIMALS = 9

HISTOGRAM_BINS = 100


# ------------------------------------------------------------
# Samplers
# ------------------------------------------------------------

# Below this p_flip a state is treated as absorbing.
P_FLIP_FLOOR = 1e-300

DEFAULT_TABU_RULE = "masked-assumed"

# Annealing schedule used by event-driven annealing experiments.
EDA_BETA_START = 0.001


# ------------------------------------------------------------
# Estimators
# ------------------------------------------------------------

SMC_RESAMPLE_THRESHOLD = 0.5

# Warn when N**2 * M * q sweep-density work exceeds this.
PAIR_WORK_BUDGET = 5e9


# ------------------------------------------------------------
# Experiments
# ------------------------------------------------------------

DEFAULT_SEED = 42
