# lfis/oracle.py

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from config.settings import (
    ENUMERATION_BLOCK_BITS,
    ENUMERATION_BUDGET,
    HISTOGRAM_BINS,
    LEVEL_DECIMALS,
)
from lfis.model import PairwiseModel, check_beta

logger = logging.getLogger(__name__)


class EnumerationBudgetError(ValueError):
    """Raised when q**M exceeds the enumeration budget."""


@dataclass
class EnergyHistogram:
    """
    Exact energy distribution under pi_beta.

    levels / level_masses / level_counts give the exact mode (distinct
    energies, their probabilities and degeneracies); bin_edges / bin_masses
    the binned view.
    """

    beta: float
    levels: np.ndarray
    level_masses: np.ndarray
    level_counts: np.ndarray
    bin_edges: np.ndarray
    bin_masses: np.ndarray

    def rebin(self, edges) -> np.ndarray:
        """Masses of the exact levels on arbitrary bin edges (outer bins clamp)."""
        edges = np.asarray(edges, dtype=float)
        clipped = np.clip(self.levels, edges[0], edges[-1])
        masses, _ = np.histogram(clipped, bins=edges, weights=self.level_masses)
        return masses

    def to_record(self, exact_levels: bool = False) -> dict:
        rec = {
            "beta": self.beta,
            "bins": {"edges": self.bin_edges.tolist(), "masses": self.bin_masses.tolist()},
        }
        if exact_levels:
            rec["levels"] = {
                "energies": self.levels.tolist(),
                "masses": self.level_masses.tolist(),
                "counts": self.level_counts.tolist(),
            }
        return rec


# ------------------------------------------------------------
# 0. Helpers
# ------------------------------------------------------------

def check_budget(model: PairwiseModel, budget: int = ENUMERATION_BUDGET) -> int:
    total = model.q ** model.num_variables
    if total > budget:
        raise EnumerationBudgetError(
            f"Enumerating {model.q}^{model.num_variables} = {total} states exceeds the budget of {budget}"
        )
    return total


def gray_code_changes(n: int, q: int):
    """
    Reflected q-ary Gray code over n digits, starting from all zeros.

    Yields (digit, new_value) for each of the q**n - 1 single-digit changes.
    """
    digits = [0] * n
    direction = [1] * n
    for _ in range(q**n - 1):
        k = 0
        while True:
            nd = digits[k] + direction[k]
            if 0 <= nd < q:
                break
            direction[k] = -direction[k]
            k += 1
        digits[k] = nd
        yield k, nd


def total_variation(p, q) -> float:
    """0.5 * sum |p - q| for two mass vectors on the same support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(0.5 * np.abs(p - q).sum())


# ------------------------------------------------------------
# 1. Block enumeration
# ------------------------------------------------------------

def energy_blocks(model: PairwiseModel, budget: int = ENUMERATION_BUDGET,
                  block_bits: int = ENUMERATION_BLOCK_BITS, with_states: bool = False):
    """
    Enumerate all q**M states in vectorized blocks.

    The first L variables (q**L <= 2**block_bits) form a block enumerated
    once; the remaining variables walk a reflected Gray code, so each step
    updates the low/high cross fields for a single changed variable.

    Yields
    ------
    energies : np.ndarray, shape (q**L,)
    states : np.ndarray, shape (q**L, M), domain positions (only with_states)
    """
    check_budget(model, budget)
    M, q = model.num_variables, model.q
    L = max(1, min(M, int(block_bits // np.log2(q))))
    H = M - L
    phi = model.pair_table
    scale = model.coupling_scale
    rows, cols, w = model._rows, model._cols, model._weights

    low = np.array(list(itertools.product(range(q), repeat=L)), dtype=np.intp).reshape(-1, L)

    # Low-only energies, computed once
    in_low = (rows < L) & (cols < L)
    E_low = np.zeros(low.shape[0])
    for i, j, J in zip(rows[in_low], cols[in_low], w[in_low]):
        E_low -= scale * J * phi[low[:, i], low[:, j]]

    # Cross couplings low x high, and high-only edges
    J_cross = np.zeros((L, H))
    J_high = np.zeros((H, H))
    for i, j, J in zip(rows, cols, w):
        if i < L <= j:
            J_cross[i, j - L] = J
        elif i >= L:
            J_high[i - L, j - L] = J
            J_high[j - L, i - L] = J

    h = np.zeros(H, dtype=np.intp)
    # C[i, a] = scale * sum_{j high} J_ij phi(a, h_j)
    C = scale * (J_cross @ phi[:, h].T) if H else np.zeros((L, q))
    E_high = -0.5 * scale * float(np.sum(J_high * phi[h[:, None], h[None, :]])) if H else 0.0
    low_cols = np.arange(L)

    def block():
        cross = -C[low_cols, low].sum(axis=1)
        E = E_low + E_high + cross
        if with_states:
            states = np.hstack([low, np.broadcast_to(h, (low.shape[0], H))])
            return E, states
        return E

    yield block()
    for k, nd in gray_code_changes(H, q):
        old = h[k]
        # high-high energy change for variable k moving old -> nd
        E_high -= scale * float(J_high[k] @ (phi[nd, h] - phi[old, h]))
        C += scale * np.outer(J_cross[:, k], phi[:, nd] - phi[:, old])
        h[k] = nd
        yield block()


# ------------------------------------------------------------
# 2. Partition function and expectations
# ------------------------------------------------------------

def exact_log_partition(model: PairwiseModel, beta: float, budget: int = ENUMERATION_BUDGET) -> float:
    """log Z(beta) = log sum_x exp(-beta E(x)), by streaming log-sum-exp."""
    beta = check_beta(beta)
    partial = [logsumexp(-beta * E) for E in energy_blocks(model, budget)]
    log_z = float(logsumexp(partial))
    logger.debug("log Z(beta=%s) = %.12f over %d blocks", beta, log_z, len(partial))
    return log_z


def exact_expectation(model: PairwiseModel, beta: float, h, budget: int = ENUMERATION_BUDGET):
    """
    E_pi[h(X)] by direct enumeration.

    h maps an (n, M) array of domain values to n results (or an (n, k)
    array for k functionals at once).
    """
    beta = check_beta(beta)
    shifts, sums, hsums = [], [], []
    for E, S in energy_blocks(model, budget, with_states=True):
        lw = -beta * E
        m = lw.max()
        p = np.exp(lw - m)
        hv = np.asarray(h(model.values_of(S)), dtype=float)
        if hv.ndim == 0:
            hv = np.full(E.shape, float(hv))
        shifts.append(m)
        sums.append(p.sum())
        hsums.append(p @ hv)
    shifts = np.asarray(shifts)
    scale = np.exp(shifts - shifts.max())
    num = sum(s * hs for s, hs in zip(scale, hsums))
    den = float(np.dot(scale, sums))
    out = num / den
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def exact_marginals(model: PairwiseModel, beta: float, budget: int = ENUMERATION_BUDGET) -> np.ndarray:
    """Single-site marginals, shape (M, q)."""
    M, q = model.num_variables, model.q
    dom = model.domain_values

    def one_hot(X):
        return (X[:, :, None] == dom[None, None, :]).reshape(X.shape[0], M * q)

    return exact_expectation(model, beta, one_hot, budget).reshape(M, q)


def exact_energy_range(model: PairwiseModel, budget: int = ENUMERATION_BUDGET) -> tuple[float, float]:
    """(min_x E(x), max_x E(x))."""
    lo, hi = np.inf, -np.inf
    for E in energy_blocks(model, budget):
        lo = min(lo, float(E.min()))
        hi = max(hi, float(E.max()))
    return lo, hi


def exact_energy_distribution(model: PairwiseModel, beta: float, bins: int = HISTOGRAM_BINS,
                              budget: int = ENUMERATION_BUDGET,
                              decimals: int = LEVEL_DECIMALS) -> EnergyHistogram:
    """
    Exact probability of each distinct energy level, plus a histogram with
    `bins` equal-width bins over [min E, max E].
    """
    beta = check_beta(beta)
    levels = np.empty(0)
    counts = np.empty(0, dtype=np.int64)
    pending = []

    def merge(levels, counts, pending):
        lv = np.concatenate([levels] + [p[0] for p in pending])
        ct = np.concatenate([counts] + [p[1] for p in pending])
        uniq, inv = np.unique(lv, return_inverse=True)
        return uniq, np.bincount(inv.ravel(), weights=ct, minlength=uniq.size).astype(np.int64)

    for E in energy_blocks(model, budget):
        pending.append(np.unique(np.round(E, decimals), return_counts=True))
        if len(pending) >= 64:
            levels, counts = merge(levels, counts, pending)
            pending = []
    levels, counts = merge(levels, counts, pending)

    log_mass = np.log(counts) - beta * levels
    log_mass -= logsumexp(log_mass)
    masses = np.exp(log_mass)

    lo, hi = float(levels[0]), float(levels[-1])
    if hi > lo:
        edges = np.linspace(lo, hi, bins + 1)
    else:
        edges = np.array([lo - 0.5, hi + 0.5])
    bin_masses, _ = np.histogram(levels, bins=edges, weights=masses)

    return EnergyHistogram(
        beta=beta,
        levels=levels,
        level_masses=masses,
        level_counts=counts,
        bin_edges=edges,
        bin_masses=bin_masses,
    )


# ------------------------------------------------------------
# 3. Records
# ------------------------------------------------------------

def oracle_record(model: PairwiseModel, beta: float, bins: int = HISTOGRAM_BINS,
                  exact_levels: bool = False, budget: int = ENUMERATION_BUDGET) -> dict:
    """JSON-ready record with log_Z, the energy histogram and the model digest."""
    from utils.loaders import model_digest

    rec = {
        "method": "exact",
        "beta": check_beta(beta),
        "log_Z": exact_log_partition(model, beta, budget),
        "model_digest": model_digest(model),
    }
    rec.update(exact_energy_distribution(model, beta, bins=bins, budget=budget).to_record(exact_levels))
    return rec
