# lfis/model.py

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.special import softmax


# Assignment of all M variables, as an array of domain values.
SpinState = np.ndarray

# Recompute cached fields from scratch after this many incremental flips.
REFRESH_INTERVAL = 4096


def check_beta(beta) -> float:
    """Validate an inverse temperature and return it as a float."""
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0.0:
        raise ValueError(f"Inverse temperature must be finite and >= 0, got {beta}")
    return beta


# ------------------------------------------------------------
# 1. Model
# ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairwiseModel:
    """
    Discrete pairwise Markov random field with energy

        E(x) = -coupling_scale * sum_{i<j} J_ij * phi(x_i, x_j)

    where phi is a symmetric q x q pair table over the domain. The default
    table is the spin product phi(a, b) = a * b.

    Parameters
    ----------
    num_variables : int
        M, number of variables.
    edges : array-like, shape (E, 3)
        Rows (i, j, J_ij). Each unordered pair may appear once; pairs are
        stored with i < j.
    coupling_scale : float
        Positive multiplier on the interaction sum (1/sqrt(M) for spin glasses).
    domain : tuple
        The q admissible values, strictly increasing.
    pair_table : array-like, shape (q, q), optional
        phi(a, b) indexed by domain position. Defaults to outer(domain, domain).
    storage : {"dense", "sparse"}
        Coupling matrix layout. Dense suits fully connected models, sparse
        suits lattices; both evaluate through the same interface.
    metadata : dict
        Provenance (builder, seed, dims, boundary).
    """

    num_variables: int
    edges: np.ndarray
    coupling_scale: float = 1.0
    domain: tuple = (-1, 1)
    pair_table: np.ndarray | None = None
    storage: str = "dense"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        M = int(self.num_variables)
        if M < 1:
            raise ValueError(f"num_variables must be positive, got {self.num_variables}")
        if not np.isfinite(self.coupling_scale) or self.coupling_scale <= 0:
            raise ValueError(f"coupling_scale must be > 0, got {self.coupling_scale}")
        if self.storage not in ("dense", "sparse"):
            raise ValueError(f"Unknown storage: {self.storage}")

        domain = tuple(self.domain)
        if len(domain) < 2:
            raise ValueError("Domain needs at least 2 values")
        if any(b <= a for a, b in zip(domain, domain[1:])):
            raise ValueError(f"Domain values must be strictly increasing, got {domain}")

        edges = np.asarray(self.edges, dtype=float).reshape(-1, 3)
        rows = edges[:, 0].astype(np.intp)
        cols = edges[:, 1].astype(np.intp)
        if np.any(rows != edges[:, 0]) or np.any(cols != edges[:, 1]):
            raise ValueError("Edge endpoints must be integers")
        if np.any(rows == cols):
            raise ValueError("Self-couplings are not allowed")
        if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= M):
            raise ValueError(f"Edge endpoints must lie in [0, {M})")

        # Canonical i < j orientation
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        if np.unique(lo * M + hi).size != lo.size:
            raise ValueError("Duplicate edges")
        weights = edges[:, 2].copy()
        if not np.all(np.isfinite(weights)):
            raise ValueError("Coupling values must be finite")

        canonical = np.column_stack([lo, hi, weights]).astype(float)
        canonical.setflags(write=False)

        values = np.asarray(domain)
        if self.pair_table is None:
            table = np.outer(values, values).astype(float)
        else:
            table = np.array(self.pair_table, dtype=float)
            if table.shape != (len(domain), len(domain)):
                raise ValueError(f"pair_table must be {len(domain)}x{len(domain)}")
            if not np.array_equal(table, table.T):
                raise ValueError("pair_table must be symmetric")
        table.setflags(write=False)

        object.__setattr__(self, "num_variables", M)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "coupling_scale", float(self.coupling_scale))
        object.__setattr__(self, "edges", canonical)
        object.__setattr__(self, "pair_table", table)
        object.__setattr__(self, "metadata", dict(self.metadata))
        object.__setattr__(self, "_rows", lo)
        object.__setattr__(self, "_cols", hi)
        object.__setattr__(self, "_weights", weights)

    # ---------- basic properties ----------

    @property
    def q(self) -> int:
        return len(self.domain)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def domain_values(self) -> np.ndarray:
        return np.asarray(self.domain)

    @cached_property
    def couplings(self):
        """Symmetric M x M coupling matrix (ndarray or CSR), zero diagonal."""
        M = self.num_variables
        data = np.concatenate([self._weights, self._weights])
        r = np.concatenate([self._rows, self._cols])
        c = np.concatenate([self._cols, self._rows])
        J = sparse.csr_matrix((data, (r, c)), shape=(M, M))
        if self.storage == "dense":
            return J.toarray()
        return J

    @cached_property
    def neighbors(self) -> list:
        """
        Per-variable (index, weights) pairs for incremental updates.

        Dense models use a full slice with the matrix column (zero at the
        variable itself); sparse models use adjacency arrays.
        """
        J = self.couplings
        if self.storage == "dense":
            return [(slice(None), J[:, i].copy()) for i in range(self.num_variables)]
        out = []
        for i in range(self.num_variables):
            start, stop = J.indptr[i], J.indptr[i + 1]
            out.append((J.indices[start:stop].copy(), J.data[start:stop].copy()))
        return out

    @cached_property
    def degrees(self) -> np.ndarray:
        """Number of edges touching each variable."""
        M = self.num_variables
        return np.bincount(self._rows, minlength=M) + np.bincount(self._cols, minlength=M)

    # ---------- value / index conversion ----------

    def index_of(self, state) -> np.ndarray:
        """Map a state of domain values to domain positions (0..q-1)."""
        values = np.asarray(state)
        if values.shape != (self.num_variables,):
            raise ValueError(
                f"State has shape {values.shape}, model has {self.num_variables} variables"
            )
        return self._positions(values)

    def index_of_batch(self, states) -> np.ndarray:
        values = np.asarray(states)
        if values.ndim != 2 or values.shape[1] != self.num_variables:
            raise ValueError(
                f"States have shape {values.shape}, expected (N, {self.num_variables})"
            )
        return self._positions(values)

    def _positions(self, values: np.ndarray) -> np.ndarray:
        dom = self.domain_values
        pos = np.searchsorted(dom, values)
        pos = np.clip(pos, 0, self.q - 1)
        if not np.all(dom[pos] == values):
            raise ValueError("State contains values outside the model domain")
        return pos.astype(np.intp)

    def values_of(self, idx) -> np.ndarray:
        return self.domain_values[np.asarray(idx)]

    def value_index(self, value) -> int:
        hits = np.flatnonzero(self.domain_values == value)
        if hits.size == 0:
            raise ValueError(f"{value!r} is not in the model domain {self.domain}")
        return int(hits[0])

    def check_index(self, i) -> int:
        if not 0 <= int(i) < self.num_variables:
            raise ValueError(f"Variable index {i} outside [0, {self.num_variables})")
        return int(i)

    # ---------- field evaluation ----------

    def field_table(self, idx: np.ndarray) -> np.ndarray:
        """
        Local fields for one state given as domain positions.

        Returns G with G[i, a] = scale * sum_j J_ij * phi(a, x_j), so that
        E(x with x_i := a) - E(x) = -(G[i, a] - G[i, x_i]).
        """
        P = self.pair_table[:, idx]                       # q x M
        G = self.couplings @ P.T                          # M x q
        return self.coupling_scale * np.asarray(G)

    def field_tables(self, S: np.ndarray) -> np.ndarray:
        """Batch version of field_table: S is (N, M) positions, returns (N, M, q)."""
        S = np.atleast_2d(S)
        out = np.empty(S.shape + (self.q,))
        for a in range(self.q):
            P = self.pair_table[a][S]                     # N x M
            out[:, :, a] = np.asarray(self.couplings @ P.T).T
        return self.coupling_scale * out

    def site_fields(self, S: np.ndarray, sites: np.ndarray) -> np.ndarray:
        """Fields G[n, sites[n], :] for a batch of states, one site each. Returns (N, q)."""
        rows = self.couplings[sites]
        out = np.empty((S.shape[0], self.q))
        for a in range(self.q):
            P = self.pair_table[a][S]
            if sparse.issparse(rows):
                out[:, a] = np.asarray(rows.multiply(P).sum(axis=1)).ravel()
            else:
                out[:, a] = np.sum(rows * P, axis=1)
        return self.coupling_scale * out

    def energies(self, S: np.ndarray) -> np.ndarray:
        """Energies of a batch of states given as (N, M) domain positions."""
        S = np.atleast_2d(S)
        G = self.field_tables(S)
        own = np.take_along_axis(G, S[:, :, None], axis=2)[:, :, 0]
        return -0.5 * own.sum(axis=1)


# ------------------------------------------------------------
# 2. Energies and conditionals
# ------------------------------------------------------------

def energy(model: PairwiseModel, state: SpinState) -> float:
    """E(x) = -scale * sum over edges of J_ij * phi(x_i, x_j)."""
    idx = model.index_of(state)
    terms = model._weights * model.pair_table[idx[model._rows], idx[model._cols]]
    return float(-model.coupling_scale * np.sum(terms)) + 0.0


def delta_energy(model: PairwiseModel, state: SpinState, i: int, new_value) -> float:
    """E(x with x_i := new_value) - E(x), in O(degree(i))."""
    i = model.check_index(i)
    idx = model.index_of(state)
    a = model.value_index(new_value)
    b = idx[i]
    if a == b:
        return 0.0
    nbr, w = model.neighbors[i]
    diff = model.pair_table[a, idx[nbr]] - model.pair_table[b, idx[nbr]]
    return float(-model.coupling_scale * np.dot(w, diff)) + 0.0


def log_unnorm(model: PairwiseModel, beta: float, state: SpinState) -> float:
    """log of the unnormalized target, -beta * E(x)."""
    beta = check_beta(beta)
    return -beta * energy(model, state) + 0.0


def conditional(model: PairwiseModel, beta: float, state: SpinState, i: int) -> np.ndarray:
    """
    Full conditional pi_i(. | x_rest) as a length-q probability vector.

    For the Ising case this is pi_i(+1 | rest) = 1 / (1 + exp(-2 beta h_i))
    with h_i = scale * sum_j J_ij x_j.
    """
    beta = check_beta(beta)
    i = model.check_index(i)
    idx = model.index_of(state)
    nbr, w = model.neighbors[i]
    g = model.coupling_scale * (model.pair_table[:, idx[nbr]] @ w)
    return softmax(beta * g)


def random_state(model: PairwiseModel, rng: np.random.Generator) -> SpinState:
    """Uniform draw from the state space."""
    return model.values_of(rng.integers(model.q, size=model.num_variables))


# ------------------------------------------------------------
# 3. Incremental field cache
# ------------------------------------------------------------

class FieldCache:
    """
    Current state plus its local-field table and energy, updated per flip in
    O(M q) for dense models and O(degree q) for sparse ones.
    """

    def __init__(self, model: PairwiseModel, state: SpinState, refresh_interval: int = REFRESH_INTERVAL):
        self.model = model
        self.idx = model.index_of(state).copy()
        self.refresh_interval = refresh_interval
        self._since_refresh = 0
        self.refresh()

    def refresh(self):
        self.fields = self.model.field_table(self.idx)
        self.energy = energy(self.model, self.model.values_of(self.idx))
        self._since_refresh = 0

    @property
    def state(self) -> SpinState:
        return self.model.values_of(self.idx)

    def log_conditionals(self, beta: float) -> np.ndarray:
        """log pi_i(a | x_rest) for every (i, a), shape (M, q)."""
        # Row-wise max shift; this runs once per flip, scipy's logsumexp is
        # too slow here.
        z = beta * self.fields
        z -= z.max(axis=1, keepdims=True)
        z -= np.log(np.exp(z).sum(axis=1, keepdims=True))
        return z

    def delta(self, i: int, a: int) -> float:
        return -(self.fields[i, a] - self.fields[i, self.idx[i]])

    def flip(self, i: int, a: int) -> float:
        """Set variable i to domain position a; returns the energy change."""
        b = self.idx[i]
        if a == b:
            return 0.0
        dE = self.delta(i, a)
        nbr, w = self.model.neighbors[i]
        phi = self.model.pair_table
        self.fields[nbr, :] += self.model.coupling_scale * np.outer(w, phi[:, a] - phi[:, b])
        self.idx[i] = a
        self.energy += dE
        self._since_refresh += 1
        if self._since_refresh >= self.refresh_interval:
            self.refresh()
        return dE


# ------------------------------------------------------------
# 4. Builders
# ------------------------------------------------------------

def build_from_couplings(J: np.ndarray, coupling_scale: float = 1.0, storage: str = "dense",
                         metadata: dict | None = None) -> PairwiseModel:
    """Binary spin model from a symmetric coupling matrix (upper triangle is read)."""
    J = np.asarray(J, dtype=float)
    M = J.shape[0]
    if J.shape != (M, M):
        raise ValueError(f"Coupling matrix must be square, got {J.shape}")
    if not np.allclose(J, J.T):
        raise ValueError("Coupling matrix must be symmetric")
    iu, ju = np.triu_indices(M, k=1)
    w = J[iu, ju]
    keep = w != 0.0
    edges = np.column_stack([iu[keep], ju[keep], w[keep]])
    return PairwiseModel(M, edges, coupling_scale=coupling_scale, storage=storage,
                         metadata=metadata or {"builder": "couplings"})


def build_ising_dense(M: int, seed: int) -> PairwiseModel:
    """
    Fully connected spin glass: J_ij ~ N(0, 1) for every pair, scale 1/sqrt(M).
    """
    if int(M) < 2:
        raise ValueError(f"Dense Ising model needs M >= 2, got {M}")
    M = int(M)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(M, k=1)
    J = rng.standard_normal(iu.size)
    edges = np.column_stack([iu, ju, J])
    return PairwiseModel(
        M,
        edges,
        coupling_scale=1.0 / np.sqrt(M),
        storage="dense",
        metadata={"builder": "ising-dense", "seed": int(seed), "dims": [M]},
    )


def lattice_edges(dims) -> np.ndarray:
    """Nearest-neighbour pairs (i, j), i < j, of a free-boundary 3-D lattice."""
    nx, ny, nz = (int(d) for d in dims)
    index = np.arange(nx * ny * nz).reshape(nz, ny, nx)
    pairs = [
        np.column_stack([index[:, :, :-1].ravel(), index[:, :, 1:].ravel()]),   # x
        np.column_stack([index[:, :-1, :].ravel(), index[:, 1:, :].ravel()]),   # y
        np.column_stack([index[:-1, :, :].ravel(), index[1:, :, :].ravel()]),   # z
    ]
    return np.concatenate(pairs, axis=0)


def build_cube_lattice(dims, seed: int, scale_couplings: bool = True) -> PairwiseModel:
    """
    Binary spin glass on a free-boundary nx x ny x nz lattice with
    J_ij in {-1, +1} equiprobably on nearest-neighbour pairs.

    scale_couplings keeps the 1/sqrt(M) prefactor of the dense family;
    switch it off for the unscaled lattice energy.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1 or int(np.prod(dims)) < 2:
        raise ValueError(f"Lattice dims must be three positive ints with product >= 2, got {dims}")
    M = int(np.prod(dims))
    rng = np.random.default_rng(seed)
    pairs = lattice_edges(dims)
    J = rng.choice(np.array([-1.0, 1.0]), size=pairs.shape[0])
    edges = np.column_stack([pairs, J])
    return PairwiseModel(
        M,
        edges,
        coupling_scale=1.0 / np.sqrt(M) if scale_couplings else 1.0,
        storage="sparse",
        metadata={
            "builder": "cube",
            "seed": int(seed),
            "dims": list(dims),
            "boundary": "free",
            "scale_couplings": bool(scale_couplings),
        },
    )
