"""Step graphons and their spectral decompositions.

A step graphon is a symmetric nonnegative kernel on [0,1]^2 that is constant
on blocks; it is the k-block stochastic block model kernel when sampled at
edge-probability scale value/n. Its integral operator diagonalizes through
the symmetric matrix D^{1/2} W D^{1/2} with D = diag(block measures), which
is how `spectral_decompose` computes eigenpairs. Objects here are treated as
immutable after construction and are safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MEASURE_TOL = 1e-12
ORTHO_TOL = 1e-9


class GraphonValidationError(ValueError):
    """Raised when a kernel or decomposition violates its invariants."""


class AmbiguousTruncationError(ValueError):
    """Raised when a rank cut falls inside a tied pair of eigenvalues."""


@dataclass
class StepFunction:
    """Piecewise-constant function on [0,1] with right-open pieces."""

    breakpoints: np.ndarray  # length p+1, starts at 0, ends at 1, increasing
    values: np.ndarray       # length p

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        b = self.breakpoints
        if b.ndim != 1 or b.size != self.values.size + 1:
            raise GraphonValidationError("breakpoints must have one more entry than values")
        if abs(b[0]) > MEASURE_TOL or abs(b[-1] - 1.0) > MEASURE_TOL:
            raise GraphonValidationError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise GraphonValidationError("breakpoints must be strictly increasing")

    def piece_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > 1):
            raise GraphonValidationError("argument outside [0,1]")
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, self.values.size - 1)

    def __call__(self, x):
        return self.values[self.piece_of(x)]


@dataclass
class StepGraphon:
    """Block kernel: `values[a, b]` on block pair (a, b), blocks sized by `block_measures`."""

    block_measures: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.block_measures = np.asarray(self.block_measures, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        m, w = self.block_measures, self.values
        if m.ndim != 1 or np.any(m <= 0):
            raise GraphonValidationError("block measures must be positive")
        if abs(m.sum() - 1.0) > MEASURE_TOL:
            raise GraphonValidationError("block measures must sum to 1")
        if w.ndim != 2 or w.shape != (m.size, m.size):
            raise GraphonValidationError("values must be square and match block count")
        if not np.allclose(w, w.T, atol=0, rtol=0):
            raise GraphonValidationError("values must be symmetric")
        if np.any(w < 0):
            raise GraphonValidationError("values must be nonnegative")

    @property
    def n_blocks(self) -> int:
        return self.block_measures.size

    @property
    def bound(self) -> float:
        """Sup of the kernel (the constant M of the boundedness assumption)."""
        return float(self.values.max()) if self.values.size else 0.0

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.block_measures[:-1]), [1.0]])

    def block_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > 1):
            raise GraphonValidationError("coordinate outside [0,1]")
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, self.n_blocks - 1)

    def evaluate(self, x, y):
        return self.values[self.block_of(x), self.block_of(y)]

    def kernel_grid(self, g: int) -> np.ndarray:
        """Kernel values at the g x g midpoint grid."""
        mid = (np.arange(g) + 0.5) / g
        b = self.block_of(mid)
        return self.values[np.ix_(b, b)]


@dataclass
class SpectralGraphon:
    """Eigenpairs (mu_i, f_i) of a step kernel, |mu| descending, mu_1 > 0.

    Eigenfunctions are step functions on the source blocks, orthonormal under
    the block-measure-weighted inner product.
    """

    eigenvalues: np.ndarray
    eigenfunctions: tuple[StepFunction, ...]
    degree_constant: float
    block_measures: np.ndarray = field(default=None)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        mu = self.eigenvalues
        if mu.size == 0 or mu[0] <= 0:
            raise GraphonValidationError("leading eigenvalue must be positive")
        if np.any(np.abs(mu[:-1]) < np.abs(mu[1:]) - 1e-12):
            raise GraphonValidationError("eigenvalues must be |.|-descending")
        if self.block_measures is None:
            bp = self.eigenfunctions[0].breakpoints
            self.block_measures = np.diff(bp)
        self.block_measures = np.asarray(self.block_measures, dtype=float)

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def feature_matrix(self) -> np.ndarray:
        """Per-block eigenfunction values, shape (n_blocks, rank)."""
        return np.stack([f.values for f in self.eigenfunctions], axis=1)

    def evaluate(self, x, y):
        fx = np.stack([f(x) for f in self.eigenfunctions], axis=-1)
        fy = np.stack([f(y) for f in self.eigenfunctions], axis=-1)
        return np.einsum("...i,...i->...", fx * self.eigenvalues, fy)

    def feature_grid(self, g: int, rank: int | None = None) -> np.ndarray:
        mid = (np.arange(g) + 0.5) / g
        r = self.rank if rank is None else rank
        return np.stack([self.eigenfunctions[i](mid) for i in range(r)], axis=1)

    def kernel_grid(self, g: int) -> np.ndarray:
        f = self.feature_grid(g)
        return (f * self.eigenvalues) @ f.T


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first non-negligible coordinate is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.nonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))[0]
        if big.size and col[big[0]] < 0:
            out[:, j] = -col
    return out


def spectral_decompose(g: StepGraphon) -> SpectralGraphon:
    """Eigenpairs of the kernel's integral operator.

    Solves the dense symmetric problem for D^{1/2} W D^{1/2}; eigenfunction
    values on block b are v_i(b) / sqrt(measure_b).
    """
    d = np.sqrt(g.block_measures)
    sym = d[:, None] * g.values * d[None, :]
    w, v = np.linalg.eigh(sym)
    # |.|-descending; positive first on magnitude ties (Perron value leads)
    order = np.lexsort((-w, -np.abs(w)))
    w, v = w[order], v[:, order]
    funcs = _fix_signs(v / d[:, None])
    bp = g.breakpoints
    eigenfunctions = tuple(StepFunction(bp, funcs[:, i]) for i in range(w.size))
    q = float(np.dot(g.values @ g.block_measures, g.block_measures))
    return SpectralGraphon(w, eigenfunctions, degree_constant=q, block_measures=g.block_measures)


@dataclass
class AssumptionReport:
    """Checked model constants: bound, degrees, informative-eigenvalue count."""

    M: float
    q: float
    q_per_block: np.ndarray
    constant_degree: bool
    r0: int
    non_simple: bool
    eigenvalues: np.ndarray


def check_assumptions(g: StepGraphon, tol: float = 1e-9, simple_tol: float = 1e-6) -> AssumptionReport:
    """Verify boundedness and constant expected degree; count eigenvalues above the bulk.

    r0 counts eigenvalues with |mu_i| > sqrt(mu_1) (the generalized
    Kesten-Stigum condition); `non_simple` flags a relative gap below
    `simple_tol` among the top r0.
    """
    q_blocks = g.values @ g.block_measures
    q = float(np.dot(q_blocks, g.block_measures))
    constant = bool(q_blocks.max() - q_blocks.min() <= tol)
    spec = spectral_decompose(g)
    mu = spec.eigenvalues
    # strict inequality, guarded against eigensolver round-off at the boundary
    r0 = int(np.sum(np.abs(mu) > np.sqrt(mu[0]) + 1e-9 * max(1.0, mu[0])))
    non_simple = False
    for i in range(r0):
        for j in range(i + 1, mu.size):
            if abs(abs(mu[i]) - abs(mu[j])) <= simple_tol * max(abs(mu[i]), 1e-300):
                non_simple = True
    return AssumptionReport(
        M=g.bound,
        q=q,
        q_per_block=q_blocks,
        constant_degree=constant,
        r0=r0,
        non_simple=non_simple,
        eigenvalues=mu,
    )


def rank_truncate(s: SpectralGraphon, K: int) -> SpectralGraphon:
    """Keep the top-K eigenpairs; error on a tie straddling the cut."""
    if K < 1 or K > s.rank:
        raise GraphonValidationError(f"K={K} outside [1, {s.rank}]")
    if K < s.rank:
        lo, hi = abs(s.eigenvalues[K]), abs(s.eigenvalues[K - 1])
        if abs(hi - lo) <= 1e-12 * max(hi, 1e-300):
            raise AmbiguousTruncationError(f"|mu_{K}| == |mu_{K + 1}|: truncation not unique")
    return SpectralGraphon(
        s.eigenvalues[:K].copy(),
        s.eigenfunctions[:K],
        degree_constant=s.degree_constant,
        block_measures=s.block_measures,
    )


def scale(g: StepGraphon, h: float) -> StepGraphon:
    """Multiply the kernel by h > 0 (eigenvalues scale by h, eigenfunctions fixed)."""
    if h <= 0:
        raise GraphonValidationError("scale factor must be positive")
    return StepGraphon(g.block_measures.copy(), g.values * h)


def evaluate(g, x: float, y: float) -> float:
    """Kernel value at (x, y) for either representation."""
    return float(g.evaluate(x, y))


def save_graphon(g: StepGraphon, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"block_measures": g.block_measures.tolist(), "values": g.values.tolist()},
            fh,
            indent=1,
        )


def load_graphon(path) -> StepGraphon:
    with open(path) as fh:
        doc = json.load(fh)
    return StepGraphon(np.array(doc["block_measures"]), np.array(doc["values"]))


def save_spectral(s: SpectralGraphon, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {
                "eigenvalues": s.eigenvalues.tolist(),
                "block_measures": s.block_measures.tolist(),
                "eigenfunctions": [f.values.tolist() for f in s.eigenfunctions],
                "degree_constant": s.degree_constant,
            },
            fh,
            indent=1,
        )


def load_spectral(path) -> SpectralGraphon:
    with open(path) as fh:
        doc = json.load(fh)
    measures = np.array(doc["block_measures"])
    bp = np.concatenate([[0.0], np.cumsum(measures)])
    bp[-1] = 1.0
    funcs = tuple(StepFunction(bp, np.array(v)) for v in doc["eigenfunctions"])
    return SpectralGraphon(
        np.array(doc["eigenvalues"]), funcs, doc["degree_constant"], block_measures=measures
    )
