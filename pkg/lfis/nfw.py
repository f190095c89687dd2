# lfis/nfw.py

import bisect
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config.settings import P_FLIP_FLOOR
from lfis.model import FieldCache, PairwiseModel, SpinState, check_beta, conditional

logger = logging.getLogger(__name__)


# ------------------------------------------------------------
# 1. Flip distributions
# ------------------------------------------------------------

@dataclass
class FlipDistribution:
    """
    Event-driven view of one random-site Gibbs step from state x.

    zeta[i, a]  : (1/M) * pi_i(a | x_rest), stay entries included
    alpha[i]    : mass of changing variable i
    p_flip      : total change probability, sum(alpha)
    nu[i, a]    : change-conditional distribution, zero on stay entries
    """

    zeta: np.ndarray
    alpha: np.ndarray
    p_flip: float
    nu: np.ndarray
    log_p_flip: float
    current: np.ndarray

    @property
    def p_stay(self) -> float:
        """Probability the kernel leaves x unchanged, sum_i zeta_i(x_i; x)."""
        return float(self.zeta[np.arange(self.zeta.shape[0]), self.current].sum())


def _change_log_masses(cache: FieldCache, beta: float, mask: np.ndarray | None = None) -> np.ndarray:
    """log zeta_i(a; x) on changing candidates, -inf on stay and masked entries."""
    M = cache.idx.size
    logz = cache.log_conditionals(beta) - math.log(M)
    logz[np.arange(M), cache.idx] = -np.inf
    if mask is not None:
        logz[mask] = -np.inf
    return logz


def _sample_change(cache: FieldCache, beta: float, mask: np.ndarray | None,
                   rng: np.random.Generator) -> tuple[int, int, float]:
    """
    Draw one change from nu without building the full bundle.

    Returns (i, a, log p_flip); log p_flip is -inf when nothing can change.
    """
    logz = _change_log_masses(cache, beta, mask)
    m = logz.max()
    if m == -np.inf:
        return -1, -1, -np.inf
    c = np.cumsum(np.exp(logz - m).ravel())
    total = c[-1]
    k = min(int(np.searchsorted(c, rng.random() * total, side="right")), c.size - 1)
    i, a = divmod(k, logz.shape[1])
    return i, a, float(m + math.log(total))


def flip_distribution_from_cache(cache: FieldCache, beta: float,
                                 mask: np.ndarray | None = None) -> FlipDistribution:
    M = cache.idx.size
    zeta = np.exp(cache.log_conditionals(beta)) / M
    logz = _change_log_masses(cache, beta, mask)
    m = logz.max()
    if m == -np.inf:
        nu = np.zeros_like(zeta)
        log_p = -np.inf
    else:
        w = np.exp(logz - m)
        total = w.sum()
        nu = w / total
        log_p = float(m + math.log(total))
    alpha = np.where(np.isfinite(logz), zeta, 0.0).sum(axis=1)
    return FlipDistribution(
        zeta=zeta,
        alpha=alpha,
        p_flip=math.exp(log_p),
        nu=nu,
        log_p_flip=log_p,
        current=cache.idx.copy(),
    )


def flip_distribution(model: PairwiseModel, beta: float, state: SpinState) -> FlipDistribution:
    """zeta / alpha / p_flip / nu for one event-driven step from `state`."""
    beta = check_beta(beta)
    return flip_distribution_from_cache(FieldCache(model, state), beta)


# ------------------------------------------------------------
# 2. Random-site Gibbs and waiting times
# ------------------------------------------------------------

def gibbs_random_site_step(model: PairwiseModel, beta: float, state: SpinState,
                           rng: np.random.Generator) -> SpinState:
    """Pick i uniformly and resample x_i from its full conditional."""
    i = int(rng.integers(model.num_variables))
    p = conditional(model, beta, state, i)
    new = np.array(state, copy=True)
    new[i] = model.domain_values[rng.choice(model.q, p=p)]
    return new


def sample_geometric(p: float, rng: np.random.Generator) -> int:
    """
    Waiting time tau >= 1 with P(tau = k) = (1 - p)**(k - 1) * p, by inversion.

    Returns a Python int, so astronomically long waits do not overflow.
    """
    p = float(p)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"Geometric parameter must lie in (0, 1], got {p}")
    if p == 1.0:
        return 1
    u = rng.random()
    return int(math.floor(math.log1p(-u) / math.log1p(-p))) + 1


# ------------------------------------------------------------
# 3. N-Fold Way
# ------------------------------------------------------------

@dataclass
class NfwTrajectory:
    """
    Flip-indexed NFW history: x0 plus one (site, value, tau, energy) per flip.

    State X_n occupies Monte-Carlo times Theta_n ... Theta_{n+1} - 1.
    """

    model: PairwiseModel
    x0: np.ndarray
    energy0: float
    sites: list = field(default_factory=list)
    values: list = field(default_factory=list)
    taus: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    status: str = "complete"

    @property
    def num_flips(self) -> int:
        return len(self.sites)

    @property
    def times(self) -> list[int]:
        """Theta_0 = 0, Theta_n = Theta_{n-1} + tau_n."""
        return [0] + list(itertools.accumulate(self.taus))

    @property
    def effective_length(self) -> int:
        """Theta_T, the length of the equivalent direct Gibbs run."""
        return int(sum(self.taus))

    def states(self):
        """Replay X_0 ... X_T as arrays of domain values."""
        x = np.array(self.x0, copy=True)
        yield x.copy()
        for i, v in zip(self.sites, self.values):
            x[i] = v
            yield x.copy()

    @property
    def final_state(self) -> SpinState:
        x = np.array(self.x0, copy=True)
        for i, v in zip(self.sites, self.values):
            x[i] = v
        return x


def nfw_run(model: PairwiseModel, beta: float, x0: SpinState, T: int,
            rng: np.random.Generator, floor: float = P_FLIP_FLOOR) -> NfwTrajectory:
    """
    N-Fold Way: T rejection-free flips, each preceded by a geometric wait.

    Stops early with status "absorbed" if p_flip drops below `floor`.
    """
    beta = check_beta(beta)
    if int(T) < 0:
        raise ValueError(f"Flip count must be >= 0, got {T}")
    cache = FieldCache(model, x0)
    traj = NfwTrajectory(model=model, x0=np.array(x0, copy=True), energy0=cache.energy)
    log_floor = math.log(floor)

    for n in range(int(T)):
        i, a, log_p = _sample_change(cache, beta, None, rng)
        if log_p < log_floor:
            traj.status = "absorbed"
            logger.warning("NFW absorbed after %d flips: log p_flip = %.3g", n, log_p)
            break
        tau = sample_geometric(math.exp(log_p), rng)
        cache.flip(i, a)
        traj.sites.append(i)
        traj.values.append(model.domain_values[a].item())
        traj.taus.append(tau)
        traj.energies.append(cache.energy)

    return traj


def expand_trajectory(traj: NfwTrajectory, max_steps: int | None = None, include_final: bool = False):
    """
    Stream the trajectory in Monte-Carlo time: X_n repeated tau_{n+1} times.

    Without include_final the stream has exactly Theta_T entries; with it the
    last flipped-to state follows once. Truncated at max_steps.
    """
    x = np.array(traj.x0, copy=True)
    emitted = 0
    for i, v, tau in zip(traj.sites, traj.values, traj.taus):
        for _ in range(tau):
            if max_steps is not None and emitted >= max_steps:
                return
            yield x.copy()
            emitted += 1
        x[i] = v
    if include_final and (max_steps is None or emitted < max_steps):
        yield x.copy()


def state_at(traj: NfwTrajectory, t: int) -> SpinState:
    """State of the equivalent Gibbs chain at Monte-Carlo time t."""
    if t < 0:
        raise ValueError(f"Time must be >= 0, got {t}")
    n = bisect.bisect_right(traj.times, t) - 1
    x = np.array(traj.x0, copy=True)
    for i, v in zip(traj.sites[:n], traj.values[:n]):
        x[i] = v
    return x


def expanded_marginals(traj: NfwTrajectory) -> np.ndarray:
    """
    Time-weighted single-site marginals over the first Theta_T steps, shape (M, q).
    """
    model = traj.model
    M = model.num_variables
    idx = model.index_of(traj.x0).copy()
    counts = np.zeros((M, model.q))
    rows = np.arange(M)
    for i, v, tau in zip(traj.sites, traj.values, traj.taus):
        counts[rows, idx] += tau
        idx[i] = model.value_index(v)
    total = counts[0].sum()
    if total == 0:
        raise ValueError("Trajectory has zero effective length")
    return counts / total


# ------------------------------------------------------------
# 4. Event-driven annealing
# ------------------------------------------------------------

def linear_schedule(beta_start: float, beta_end: float, steps: int):
    """gamma_n rising linearly from beta_start to beta_end over `steps` values."""
    if steps < 1:
        raise ValueError(f"Schedule needs at least one step, got {steps}")
    if steps == 1:
        yield float(beta_end)
        return
    for n in range(steps):
        yield beta_start + (beta_end - beta_start) * n / (steps - 1)


def eda_run(model: PairwiseModel, schedule, x0: SpinState, T: int, rng: np.random.Generator,
            return_trace: bool = False):
    """
    Event-driven annealing: T flips, the n-th drawn from nu at gamma_n.
    Waiting times are not sampled.

    Returns the final state, or (final state, energy trace) with return_trace.
    """
    if int(T) < 0:
        raise ValueError(f"Flip count must be >= 0, got {T}")
    cache = FieldCache(model, x0)
    gammas = iter(schedule)
    trace = []
    for n in range(int(T)):
        try:
            gamma = check_beta(next(gammas))
        except StopIteration:
            raise ValueError(f"Schedule ended after {n} values, {T} flips requested") from None
        i, a, log_p = _sample_change(cache, gamma, None, rng)
        if log_p == -np.inf:
            logger.warning("EDA stuck after %d flips at gamma = %g", n, gamma)
            break
        cache.flip(i, a)
        if return_trace:
            trace.append(cache.energy)

    if return_trace:
        return cache.state, np.asarray(trace)
    return cache.state
