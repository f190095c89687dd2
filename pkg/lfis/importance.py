# lfis/importance.py

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from config.settings import DEFAULT_TABU_RULE, PAIR_WORK_BUDGET
from lfis.lfqgs import DistinctStateSet, lfqgs_run
from lfis.model import FieldCache, PairwiseModel, SpinState, check_beta, energy, random_state
from lfis.nfw import nfw_run
from utils.loaders import order_digest

logger = logging.getLogger(__name__)

# Cap on floats held by one block of the sweep-density tensor.
_DENSITY_BLOCK_FLOATS = 2_000_000


# ------------------------------------------------------------
# 1. Types
# ------------------------------------------------------------

@dataclass(frozen=True)
class SweepOrder:
    """Fixed visiting order of one Gibbs sweep."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("Sweep order must be a permutation of 0..M-1")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, M: int) -> "SweepOrder":
        return cls(tuple(range(M)))

    def check(self, model: PairwiseModel) -> "SweepOrder":
        if len(self.order) != model.num_variables:
            raise ValueError(
                f"Sweep order has {len(self.order)} entries, model has {model.num_variables} variables"
            )
        return self

    @property
    def digest(self) -> str:
        return order_digest(self.order)


@dataclass
class SelectedSample:
    state: np.ndarray
    source: int
    log_target: float
    energy: float


@dataclass
class MovedSample:
    state: np.ndarray
    origin: np.ndarray
    log_target: float
    log_proposal: float
    log_weight: float
    energy: float
    kernel_beta: float
    log_kernel: float


@dataclass
class WeightedEstimate:
    """Self-normalized importance estimate in log domain; log_Z_hat = log_W - log N."""

    log_weights: np.ndarray
    log_W: float
    log_Z_hat: float
    expectations: dict
    ess: float
    N: int

    @property
    def normalized_weights(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_W)

    def to_record(self) -> dict:
        return {
            "log_Z_hat": self.log_Z_hat,
            "log_W": self.log_W,
            "N": self.N,
            "ess": self.ess,
            "expectations": dict(self.expectations),
        }


@dataclass
class LfisResult:
    estimate: WeightedEstimate
    selected: list
    moved: list
    n_distinct: list
    order: SweepOrder
    kernel_betas: tuple
    config: dict = field(default_factory=dict)

    @property
    def selected_energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.selected])

    @property
    def moved_energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.moved])


# ------------------------------------------------------------
# 2. Selection
# ------------------------------------------------------------

def selection_probabilities(energies, beta: float) -> np.ndarray:
    """q_i proportional to exp(-beta E_i), computed as a softmax."""
    return softmax(-check_beta(beta) * np.asarray(energies, dtype=float))


def select_state(states: DistinctStateSet, beta: float, rng: np.random.Generator,
                 source: int = 0) -> SelectedSample:
    """Draw one visited state with probability proportional to exp(-beta E)."""
    if len(states) == 0:
        raise ValueError("Cannot select from an empty state set")
    beta = check_beta(beta)
    E = states.energies
    k = int(rng.choice(len(E), p=selection_probabilities(E, beta)))
    return SelectedSample(
        state=states.states[k],
        source=int(source),
        log_target=-beta * float(E[k]),
        energy=float(E[k]),
    )


def lfqgs_select(model: PairwiseModel, beta: float, T: int, rng: np.random.Generator,
                 gamma_min: int | None = None, gamma_max: int | None = None,
                 x0: SpinState | None = None, tabu_rule=DEFAULT_TABU_RULE,
                 source: int = 0) -> SelectedSample:
    """One LFQGS run from x0 (uniform if omitted) followed by the selection step."""
    if x0 is None:
        x0 = random_state(model, rng)
    traj = lfqgs_run(model, beta, x0, T, gamma_min, gamma_max, rng=rng,
                     tabu_rule=tabu_rule, collect_states=True)
    return select_state(traj.states, beta, rng, source=source)


# ------------------------------------------------------------
# 3. Sweep kernel
# ------------------------------------------------------------

def sweep_kernel_apply(model: PairwiseModel, beta: float, y: SpinState, order: SweepOrder,
                       rng: np.random.Generator) -> tuple[SpinState, float]:
    """
    One fixed-order Gibbs sweep from y.

    Returns the new state and log K_G(new | y), the sum of the log
    conditionals of the realized values.
    """
    beta = check_beta(beta)
    order.check(model)
    cache = FieldCache(model, y)
    log_k = 0.0
    for i in order.order:
        logc = log_softmax(beta * cache.fields[i])
        c = np.cumsum(np.exp(logc))
        a = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), model.q - 1)
        log_k += float(logc[a])
        cache.flip(i, a)
    return cache.state, log_k


def sweep_log_density_matrix(model: PairwiseModel, betas, targets, sources,
                             order: SweepOrder) -> np.ndarray:
    """
    log K_G(target | source) for every (kernel beta, target, source).

    Walks the sweep order once per block of targets, keeping for every
    (target, source) pair the hybrid state (swept coordinates from the
    target, the rest from the source) and its local fields.

    Returns
    -------
    np.ndarray, shape (len(betas), len(targets), len(sources))
    """
    order.check(model)
    betas = np.array([check_beta(b) for b in np.atleast_1d(betas)])
    T_idx = model.index_of_batch(np.atleast_2d(targets))
    S_idx = model.index_of_batch(np.atleast_2d(sources))
    M, q = model.num_variables, model.q
    Nt, Ns, B = T_idx.shape[0], S_idx.shape[0], betas.size
    phi = model.pair_table
    scale = model.coupling_scale

    F0 = model.field_tables(S_idx)                        # Ns x M x q
    block = max(1, int(_DENSITY_BLOCK_FLOATS // (Ns * M * q)))
    out = np.empty((B, Nt, Ns))
    bshape = betas[:, None, None, None]

    for start in range(0, Nt, block):
        tb = T_idx[start:start + block]
        Bt = tb.shape[0]
        H = np.broadcast_to(S_idx, (Bt, Ns, M)).copy()
        F = np.broadcast_to(F0, (Bt, Ns, M, q)).copy()
        acc = np.zeros((B, Bt, Ns))
        for i in order.order:
            z = bshape * F[None, :, :, i, :]               # B x Bt x Ns x q
            a = tb[:, i]
            pick = np.broadcast_to(a[None, :, None, None], (B, Bt, Ns, 1))
            acc += np.take_along_axis(z, pick, axis=-1)[..., 0] - logsumexp(z, axis=-1)
            # move coordinate i of every hybrid from the source value to the target value
            d = phi[a][:, None, :] - phi[H[:, :, i]]       # Bt x Ns x q
            nbr, w = model.neighbors[i]
            F[:, :, nbr, :] += scale * w[None, None, :, None] * d[:, :, None, :]
            H[:, :, i] = a[:, None]
        out[:, start:start + Bt, :] = acc
    return out


def sweep_kernel_density(model: PairwiseModel, beta: float, y_new: SpinState, y_old: SpinState,
                         order: SweepOrder) -> float:
    """log K_G(y_new | y_old) for one fixed-order sweep."""
    return float(sweep_log_density_matrix(model, [beta], y_new, y_old, order)[0, 0, 0])


def mixture_log_density(target: SpinState, sources, model: PairwiseModel, beta: float,
                        order: SweepOrder, kernel_betas=None) -> float:
    """
    log mu_hat(target): equal-weight mixture of sweep kernels anchored at the
    sources (SelectedSample objects or states), one component per source and
    kernel temperature.
    """
    anchors = np.array([s.state if isinstance(s, SelectedSample) else s for s in sources])
    if anchors.shape[0] == 0:
        raise ValueError("Mixture needs at least one source")
    betas = [beta] if kernel_betas is None else list(kernel_betas)
    D = sweep_log_density_matrix(model, betas, target, anchors, order)[:, 0, :]
    return float(logsumexp(D) - math.log(D.size))


# ------------------------------------------------------------
# 4. Importance estimates
# ------------------------------------------------------------

def _as_functionals(h) -> dict:
    if h is None:
        return {}
    if callable(h):
        return {"h": h}
    return dict(h)


def importance_estimate(samples, h=None, N: int | None = None) -> WeightedEstimate:
    """
    Self-normalized importance estimates from moved samples.

    h is a callable or a {name: callable} dict; each callable maps an (N, M)
    array of states to N values.
    """
    if len(samples) == 0:
        raise ValueError("No samples to weight")
    if N is not None and N != len(samples):
        raise ValueError(f"N = {N} does not match {len(samples)} samples")
    N = len(samples)

    lw = np.array([s.log_weight for s in samples], dtype=float)
    # reductions run over sorted weights, so the result does not depend on sample order
    ranked = np.sort(lw)
    log_W = float(logsumexp(ranked))
    wn = np.exp(lw - log_W)
    ess = float(1.0 / np.sum(np.exp(2.0 * (ranked - log_W))))

    expectations = {}
    functionals = _as_functionals(h)
    if functionals:
        X = np.array([s.state for s in samples])
        for name, fn in functionals.items():
            vals = np.asarray(fn(X), dtype=float).reshape(N)
            perm = np.lexsort((vals, lw))
            # constant functionals come back bit-exact
            ref = vals[perm][0]
            expectations[name] = float(ref + np.average(vals[perm] - ref, weights=wn[perm]))

    return WeightedEstimate(
        log_weights=lw,
        log_W=log_W,
        log_Z_hat=log_W - math.log(N),
        expectations=expectations,
        ess=min(max(ess, 1.0), float(N)),
        N=N,
    )


# ------------------------------------------------------------
# 5. Pipeline
# ------------------------------------------------------------

def _run_sequence(rng: np.random.Generator, model: PairwiseModel, beta: float, T: int,
                  gamma_min, gamma_max, order: SweepOrder, kernel_betas: tuple,
                  tabu_rule, polish_flips: int, source: int):
    """One LFQGS sequence: run, select, optionally polish, sweep."""
    x0 = random_state(model, rng)
    traj = lfqgs_run(model, beta, x0, T, gamma_min, gamma_max, rng=rng,
                     tabu_rule=tabu_rule, collect_states=True)
    selected = select_state(traj.states, beta, rng, source=source)
    if polish_flips > 0:
        polished = nfw_run(model, beta, selected.state, polish_flips, rng).final_state
        E = energy(model, polished)
        selected = SelectedSample(state=polished, source=source, log_target=-beta * E, energy=E)
    kb = kernel_betas[int(rng.integers(len(kernel_betas)))] if len(kernel_betas) > 1 else kernel_betas[0]
    moved, log_k = sweep_kernel_apply(model, kb, selected.state, order, rng)
    return selected, moved, kb, log_k, len(traj.states)


def lfis_pipeline(model: PairwiseModel, beta: float, N: int, T: int,
                  gamma_min: int | None = None, gamma_max: int | None = None,
                  order: SweepOrder | None = None, rng: np.random.Generator | None = None,
                  tabu_rule=DEFAULT_TABU_RULE, kernel_betas=None, polish_flips: int = 0,
                  h=None, n_workers: int = 1,
                  pair_work_budget: float = PAIR_WORK_BUDGET) -> LfisResult:
    """
    Large-Flip Importance Sampling end to end.

    N independent LFQGS sequences of T samples from uniform initial states,
    one selected state per sequence, one fixed-order Gibbs sweep each, the
    N x N sweep-kernel mixture as proposal density, then importance weights
    and log Z_hat. Sequence l uses the l-th stream spawned from rng, so
    results do not depend on n_workers.
    """
    beta = check_beta(beta)
    if int(N) < 1 or int(T) < 1:
        raise ValueError(f"Need N >= 1 and T >= 1, got N={N}, T={T}")
    if int(polish_flips) < 0:
        raise ValueError(f"polish_flips must be >= 0, got {polish_flips}")
    if rng is None:
        rng = np.random.default_rng()
    N, T = int(N), int(T)
    order = (order or SweepOrder.identity(model.num_variables)).check(model)
    kernel_betas = tuple(check_beta(b) for b in (kernel_betas or [beta]))

    work = float(N) ** 2 * model.num_variables * (model.degrees.mean() + 1) * model.q * len(kernel_betas)
    if work > pair_work_budget:
        logger.warning("Mixture density needs ~%.2g operations (budget %.2g)", work, pair_work_budget)

    streams = rng.spawn(N)
    job = partial(_run_sequence, model=model, beta=beta, T=T, gamma_min=gamma_min,
                  gamma_max=gamma_max, order=order, kernel_betas=kernel_betas,
                  tabu_rule=tabu_rule, polish_flips=int(polish_flips))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(_call_sequence, [(job, s, l) for l, s in enumerate(streams)]))
    else:
        runs = [job(s, source=l) for l, s in enumerate(streams)]

    selected = [r[0] for r in runs]
    anchors = np.array([s.state for s in selected])
    targets = np.array([r[1] for r in runs])

    D = sweep_log_density_matrix(model, kernel_betas, targets, anchors, order)   # B x N x N
    log_mu = logsumexp(D, axis=(0, 2)) - math.log(N * len(kernel_betas))

    moved = []
    for k, (sel, y, kb, log_k, _) in enumerate(runs):
        E = energy(model, y)
        log_target = -beta * E
        moved.append(MovedSample(
            state=y,
            origin=sel.state,
            log_target=log_target,
            log_proposal=float(log_mu[k]),
            log_weight=log_target - float(log_mu[k]),
            energy=E,
            kernel_beta=kb,
            log_kernel=log_k,
        ))

    estimate = importance_estimate(moved, h=h)
    logger.info("LFIS beta=%s N=%d T=%d: log Z_hat = %.6f, ESS = %.1f",
                beta, N, T, estimate.log_Z_hat, estimate.ess)

    return LfisResult(
        estimate=estimate,
        selected=selected,
        moved=moved,
        n_distinct=[r[4] for r in runs],
        order=order,
        kernel_betas=kernel_betas,
        config={
            "beta": beta,
            "N": N,
            "T": T,
            "gamma_min": gamma_min,
            "gamma_max": gamma_max,
            "tabu_rule": str(getattr(tabu_rule, "value", tabu_rule)),
            "kernel_betas": list(kernel_betas),
            "polish_flips": int(polish_flips),
        },
    )


def _call_sequence(args):
    job, stream, source = args
    return job(stream, source=source)


def selected_energy_histogram(energies, edges) -> np.ndarray:
    """Fraction of energies per bin; values outside the edges clamp to the outer bins."""
    energies = np.asarray(energies, dtype=float)
    edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(np.clip(energies, edges[0], edges[-1]), bins=edges)
    return counts / max(energies.size, 1)
