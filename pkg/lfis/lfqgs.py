# lfis/lfqgs.py

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from config.settings import DEFAULT_TABU_RULE
from lfis.model import FieldCache, PairwiseModel, SpinState, check_beta
from lfis.nfw import FlipDistribution, _sample_change, flip_distribution_from_cache
from utils.loaders import state_digest

logger = logging.getLogger(__name__)


class TabuRule(str, Enum):
    """Which (variable, value) pair a flip puts on the tabu list."""

    MASKED_ASSUMED = "masked-assumed"     # the value just taken
    MASKED_PREVIOUS = "masked-previous"   # the value just left


class ExhaustedNeighborhoodError(RuntimeError):
    """Every change candidate is tabu; carries the trajectory so far."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# ------------------------------------------------------------
# 1. Records
# ------------------------------------------------------------

@dataclass
class LfMoveRecord:
    """One LF move: declared size gamma and the ordered (variable, value) flips."""

    gamma: int
    flips: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.flips)

    @property
    def complete(self) -> bool:
        return len(self.flips) >= self.gamma


class TabuSet:
    """
    Pairs (variable, domain position) taken during the current LF move.

    Kept both as a set (membership) and a boolean (M, q) mask (vectorized
    masking of the flip distribution).
    """

    def __init__(self, num_variables: int, q: int):
        self.mask = np.zeros((num_variables, q), dtype=bool)
        self._pairs = set()

    @classmethod
    def from_values(cls, model: PairwiseModel, pairs) -> "TabuSet":
        tabu = cls(model.num_variables, model.q)
        for i, v in pairs:
            tabu.add(model.check_index(i), model.value_index(v))
        return tabu

    def add(self, i: int, a: int):
        self._pairs.add((int(i), int(a)))
        self.mask[i, a] = True

    def clear(self):
        for i, a in self._pairs:
            self.mask[i, a] = False
        self._pairs.clear()

    def __contains__(self, pair) -> bool:
        return (int(pair[0]), int(pair[1])) in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)


class DistinctStateSet:
    """
    Distinct visited states with their energies, keyed by a 128-bit digest;
    digest hits are confirmed by full comparison.
    """

    def __init__(self, model: PairwiseModel):
        self.model = model
        self._slots = {}
        self._positions = []
        self._energies = []

    def add(self, idx: np.ndarray, energy: float) -> bool:
        """Insert a state (domain positions); False if already present."""
        key = state_digest(idx)
        slots = self._slots.setdefault(key, [])
        for s in slots:
            if np.array_equal(self._positions[s], idx):
                return False
        slots.append(len(self._positions))
        self._positions.append(np.array(idx, copy=True))
        self._energies.append(float(energy))
        return True

    def __len__(self) -> int:
        return len(self._positions)

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self._positions).reshape(len(self), self.model.num_variables)

    @property
    def states(self) -> np.ndarray:
        return self.model.values_of(self.positions)

    @property
    def energies(self) -> np.ndarray:
        return np.asarray(self._energies)


@dataclass
class LfqgsTrajectory:
    """
    Compact LFQGS history: the initial state and the LF moves. Replaying the
    moves from x0 reconstructs every visited state.
    """

    x0: np.ndarray
    moves: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    states: DistinctStateSet | None = None

    @property
    def num_flips(self) -> int:
        return sum(len(m) for m in self.moves)

    @property
    def num_samples(self) -> int:
        return self.num_flips + 1

    def flips(self):
        for move in self.moves:
            yield from move.flips

    def replay(self):
        """X_0 ... X_{T-1} as arrays of domain values."""
        x = np.array(self.x0, copy=True)
        yield x.copy()
        for i, v in self.flips():
            x[i] = v
            yield x.copy()


# ------------------------------------------------------------
# 2. Move sizes and tabu-constrained flips
# ------------------------------------------------------------

def default_lf_bounds(M: int) -> tuple[int, int]:
    """(floor(M/8), floor(M/6)), each clamped below at 1."""
    return max(1, M // 8), max(1, M // 6)


def sample_lf_size(gamma_min: int, gamma_max: int, rng: np.random.Generator) -> int:
    """Uniform integer in [gamma_min, gamma_max]."""
    if not 1 <= gamma_min <= gamma_max:
        raise ValueError(f"Need 1 <= gamma_min <= gamma_max, got [{gamma_min}, {gamma_max}]")
    return int(rng.integers(gamma_min, gamma_max + 1))


def tabu_flip_distribution(model: PairwiseModel, beta: float, state: SpinState,
                           tabu: TabuSet) -> FlipDistribution:
    """
    Flip distribution with tabu candidates removed: alpha, p_flip and nu are
    taken over the surviving changes only (zeta keeps the raw masses).
    """
    beta = check_beta(beta)
    dist = flip_distribution_from_cache(FieldCache(model, state), beta, mask=tabu.mask)
    if dist.log_p_flip == -np.inf:
        raise ExhaustedNeighborhoodError("Every change candidate is tabu")
    return dist


# ------------------------------------------------------------
# 3. Sampler
# ------------------------------------------------------------

def lfqgs_run(model: PairwiseModel, beta: float, x0: SpinState, T: int,
              gamma_min: int | None = None, gamma_max: int | None = None,
              rng: np.random.Generator | None = None,
              tabu_rule: TabuRule | str = DEFAULT_TABU_RULE,
              collect_states: bool = False) -> LfqgsTrajectory:
    """
    Large-Flip Quasi-Gibbs Sampler: T samples (T - 1 flips) grouped into LF
    moves of random size. A move starts by drawing its size and clearing the
    tabu set; every flip is drawn from the tabu-masked change distribution.
    The last move may be cut short by the flip budget.

    With collect_states the distinct visited states are gathered on the fly
    into `trajectory.states`.
    """
    beta = check_beta(beta)
    if rng is None:
        rng = np.random.default_rng()
    M, q = model.num_variables, model.q
    if int(T) < 1:
        raise ValueError(f"Sample count T must be >= 1, got {T}")
    lo, hi = default_lf_bounds(M)
    gamma_min = lo if gamma_min is None else int(gamma_min)
    gamma_max = hi if gamma_max is None else int(gamma_max)
    if not 1 <= gamma_min <= gamma_max:
        raise ValueError(f"Need 1 <= gamma_min <= gamma_max, got [{gamma_min}, {gamma_max}]")
    if gamma_max > (q - 1) * M:
        raise ValueError(f"gamma_max = {gamma_max} exceeds (q - 1) * M = {(q - 1) * M}")
    rule = TabuRule(tabu_rule)

    cache = FieldCache(model, x0)
    tabu = TabuSet(M, q)
    traj = LfqgsTrajectory(x0=np.array(x0, copy=True), energies=[cache.energy])
    if collect_states:
        traj.states = DistinctStateSet(model)
        traj.states.add(cache.idx, cache.energy)

    move = None
    for _ in range(int(T) - 1):
        if move is None or move.complete:
            move = LfMoveRecord(gamma=sample_lf_size(gamma_min, gamma_max, rng))
            tabu.clear()
            traj.moves.append(move)

        i, a, log_p = _sample_change(cache, beta, tabu.mask, rng)
        if log_p == -math.inf:
            raise ExhaustedNeighborhoodError(
                f"All candidates tabu after {traj.num_flips} flips (move size {move.gamma})",
                trajectory=traj,
            )
        previous = cache.idx[i]
        cache.flip(i, a)
        tabu.add(i, a if rule is TabuRule.MASKED_ASSUMED else previous)
        move.flips.append((i, model.domain_values[a].item()))
        traj.energies.append(cache.energy)
        if collect_states:
            traj.states.add(cache.idx, cache.energy)

    logger.debug("LFQGS: %d flips in %d moves", traj.num_flips, len(traj.moves))
    return traj


def distinct_states(traj: LfqgsTrajectory, model: PairwiseModel) -> DistinctStateSet:
    """Replay the trajectory and collect each distinct state once with its energy."""
    cache = FieldCache(model, traj.x0)
    out = DistinctStateSet(model)
    out.add(cache.idx, cache.energy)
    for i, v in traj.flips():
        cache.flip(i, model.value_index(v))
        out.add(cache.idx, cache.energy)
    return out
