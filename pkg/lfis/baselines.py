# lfis/baselines.py

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from config.settings import EDA_BETA_START, SMC_RESAMPLE_THRESHOLD
from lfis.model import PairwiseModel, check_beta, energy
from lfis.nfw import eda_run, linear_schedule

logger = logging.getLogger(__name__)

__all__ = [
    "ParticlePopulation",
    "systematic_resample",
    "smc_run",
    "anneal",
    "eda_run",
    "linear_schedule",
]


@dataclass
class ParticlePopulation:
    """
    N particles with normalized log-weights at inverse temperature beta.

    states holds domain positions, shape (N, M); log_Z is the running
    log-normalizer estimate.
    """

    model: PairwiseModel
    states: np.ndarray
    log_weights: np.ndarray
    beta: float
    log_Z: float
    energies: np.ndarray

    @property
    def N(self) -> int:
        return int(self.states.shape[0])

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(np.exp(2.0 * self.log_weights)))

    @property
    def values(self) -> np.ndarray:
        return self.model.values_of(self.states)


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """
    Systematic resampling: one uniform offset, N evenly spaced pointers.

    Returns ancestor indices, nondecreasing.
    """
    w = np.asarray(weights, dtype=float)
    N = w.size
    c = np.cumsum(w / w.sum())
    c[-1] = 1.0
    positions = (rng.random() + np.arange(N)) / N
    return np.searchsorted(c, positions, side="right").clip(max=N - 1)


def _gibbs_moves(model: PairwiseModel, beta: float, S: np.ndarray, n_moves: int,
                 rng: np.random.Generator):
    """n_moves random-site Gibbs updates applied to every particle, in place."""
    N = S.shape[0]
    rows = np.arange(N)
    for _ in range(n_moves):
        sites = rng.integers(model.num_variables, size=N)
        z = beta * model.site_fields(S, sites)
        p = np.exp(z - z.max(axis=1, keepdims=True))
        c = np.cumsum(p, axis=1)
        u = rng.random(N) * c[:, -1]
        S[rows, sites] = (c < u[:, None]).sum(axis=1).clip(max=model.q - 1)


def smc_run(model: PairwiseModel, beta_target: float, N: int, steps: int,
            resample_threshold: float = SMC_RESAMPLE_THRESHOLD,
            rng: np.random.Generator | None = None,
            moves_per_level: int = 1) -> tuple[ParticlePopulation, float]:
    """
    Annealed SMC estimate of log Z(beta_target).

    Particles start uniform (log Z_0 = M log q) and are tempered along a
    linear beta schedule from 0 to beta_target over `steps` levels. At each
    level the log-weights gain -(beta_t - beta_{t-1}) E(x), the running
    log Z absorbs the log-mean incremental weight, the population is
    resampled systematically when ESS / N < resample_threshold, and each
    particle takes `moves_per_level` random-site Gibbs steps at beta_t.

    Returns
    -------
    (ParticlePopulation, log Z_hat)
    """
    beta_target = check_beta(beta_target)
    if int(N) < 2:
        raise ValueError(f"Need at least 2 particles, got {N}")
    if int(steps) < 1:
        raise ValueError(f"Need at least 1 annealing step, got {steps}")
    if not 0.0 <= resample_threshold <= 1.0:
        raise ValueError(f"Resample threshold must lie in [0, 1], got {resample_threshold}")
    if int(moves_per_level) < 0:
        raise ValueError(f"moves_per_level must be >= 0, got {moves_per_level}")
    if rng is None:
        rng = np.random.default_rng()
    N, steps = int(N), int(steps)
    M, q = model.num_variables, model.q

    S = rng.integers(q, size=(N, M))
    E = model.energies(S)
    logw = np.full(N, -math.log(N))
    log_Z = M * math.log(q)
    n_resample = 0

    betas = np.linspace(0.0, beta_target, steps + 1)
    for t in range(1, steps + 1):
        inc = -(betas[t] - betas[t - 1]) * E
        step = float(logsumexp(logw + inc))
        log_Z += step
        logw = logw + inc - step

        ess = 1.0 / np.sum(np.exp(2.0 * logw))
        if ess / N < resample_threshold:
            ancestors = systematic_resample(np.exp(logw), rng)
            S, E = S[ancestors], E[ancestors]
            logw = np.full(N, -math.log(N))
            n_resample += 1

        if moves_per_level:
            _gibbs_moves(model, betas[t], S, moves_per_level, rng)
            E = model.energies(S)

    logger.info("SMC beta=%s N=%d steps=%d: log Z_hat = %.6f, %d resamplings",
                beta_target, N, steps, log_Z, n_resample)
    population = ParticlePopulation(model=model, states=S, log_weights=logw,
                                    beta=beta_target, log_Z=log_Z, energies=E)
    return population, log_Z


def anneal(model: PairwiseModel, beta_end: float, T: int, rng: np.random.Generator,
           beta_start: float = EDA_BETA_START, x0=None) -> tuple[np.ndarray, float]:
    """EDA over a linear schedule from beta_start to beta_end; returns (state, energy)."""
    if x0 is None:
        x0 = model.values_of(rng.integers(model.q, size=model.num_variables))
    state = eda_run(model, linear_schedule(beta_start, beta_end, max(int(T), 1)), x0, T, rng)
    return state, energy(model, state)
