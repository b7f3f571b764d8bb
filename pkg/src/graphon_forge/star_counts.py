"""Weighted star counts and their normalization into joint-moment estimates.

A_alpha sums, over every center w and every ordered tuple of pairwise-distinct
neighbors of w, the product of per-vertex aggregates B_i prescribed by the
multi-index alpha. Summing injective tuples directly costs deg^{|alpha|} per
center; instead we expand over multiset partitions of alpha's label list with
Moebius coefficients, which turns each A_alpha into a combination of power
sums S_beta(w) = sum_{j ~ w} prod_i B_i(j)^{beta_i}. Every S_beta is one
sparse matvec against the adjacency of G2, so the full (N+1)^K moment table
costs O(|E2|) per grid entry and shares the power sums across entries.

Normalized entries P_alpha estimate the joint eigenfunction moments
int f_1^{a_1} ... f_K^{a_K}; P_kk (pair diagonal) must be positive for the
normalization to make sense, otherwise the table is flagged invalid and all
entries are zeroed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from sympy.utilities.iterables import multiset_partitions

from .graph_sampler import SparseGraph


class MomentTableTooLarge(MemoryError):
    pass


def count_pair(G2: SparseGraph, bk: np.ndarray) -> float:
    """Sum of B(i) B(j) over ordered adjacent pairs (twice the per-edge sum)."""
    bk = np.asarray(bk, dtype=float)
    if G2.m == 0:
        return 0.0
    return float(2.0 * np.dot(bk[G2.edges[:, 0]], bk[G2.edges[:, 1]]))


def normalize_pair(akk: float, epsilon: float, lambda_k: float) -> float:
    if lambda_k == 0:
        raise ValueError("lambda_k must be nonzero")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return akk / (epsilon * lambda_k)


@lru_cache(maxsize=4096)
def injective_profiles(alpha: tuple[int, ...]) -> tuple[tuple[float, tuple[tuple[int, ...], ...]], ...]:
    """Inclusion-exclusion expansion of the injective-tuple sum.

    Returns (coefficient, blocks) pairs such that the sum over ordered
    injective assignments equals sum_profiles coeff * prod_blocks S_block.
    Coefficients combine the Moebius weight (-1)^(L-1) (L-1)! per block with
    the number of set partitions of the label positions realizing the given
    multiset partition.
    """
    labels = [i for i, a in enumerate(alpha) for _ in range(a)]
    if not labels:
        return ((1.0, ()),)
    k = len(alpha)
    out = []
    for part in multiset_partitions(labels):
        blocks = []
        moebius = 1.0
        denom = 1.0
        for block in part:
            beta = [0] * k
            for lab in block:
                beta[lab] += 1
            blocks.append(tuple(beta))
            moebius *= (-1.0) ** (len(block) - 1) * factorial(len(block) - 1)
            for b in beta:
                denom *= factorial(b)
        blocks.sort()
        realizations = 1.0
        for a in alpha:
            realizations *= factorial(a)
        realizations /= denom * _repeat_factor(blocks)
        out.append((moebius * realizations, tuple(blocks)))
    return tuple(out)


def _repeat_factor(sorted_blocks) -> float:
    f = 1.0
    run = 1
    for i in range(1, len(sorted_blocks)):
        if sorted_blocks[i] == sorted_blocks[i - 1]:
            run += 1
        else:
            f *= factorial(run)
            run = 1
    f *= factorial(run) if sorted_blocks else 1
    return f


def _power_sums(G2: SparseGraph, B: np.ndarray, betas) -> dict[tuple[int, ...], np.ndarray]:
    """S_beta(w) = sum over neighbors j of w of prod_i B[:, i]^beta_i, per beta."""
    n, k = B.shape
    max_pow = max((max(b) for b in betas if b), default=0)
    powers = [np.ones((max_pow + 1, n)) for _ in range(k)]
    for i in range(k):
        for t in range(1, max_pow + 1):
            powers[i][t] = powers[i][t - 1] * B[:, i]
    adj = G2.adjacency
    out = {}
    for beta in betas:
        mono = np.ones(n)
        for i, b in enumerate(beta):
            if b:
                mono = mono * powers[i][b]
        out[beta] = adj @ mono
    return out


def count_star(G2: SparseGraph, alpha: tuple[int, ...], B: np.ndarray) -> float:
    """A_alpha over ordered tuples of pairwise-distinct neighbors per center."""
    alpha = tuple(int(a) for a in alpha)
    if sum(alpha) < 1:
        raise ValueError("need |alpha| >= 1")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != G2.n:
        B = B.T
    profiles = injective_profiles(alpha)
    betas = sorted({b for _, blocks in profiles for b in blocks})
    sums = _power_sums(G2, B, betas)
    total = 0.0
    for coeff, blocks in profiles:
        term = np.ones(G2.n)
        for beta in blocks:
            term = term * sums[beta]
        total += coeff * term.sum()
    return float(total)


def normalize_star(
    a_alpha: float,
    alpha: tuple[int, ...],
    n: int,
    epsilon: float,
    lambdas: np.ndarray,
    p_diag: np.ndarray,
) -> float:
    """P_alpha = A_alpha n^(|alpha|/2 - 1) / (eps^|alpha| prod (sqrt(P_ii) lambda_i)^alpha_i).

    Defined only when every P_ii > 0; the guard path (any P_ii <= 0) is
    handled by the table builder, which zeroes everything.
    """
    alpha = np.asarray(alpha, dtype=int)
    size = int(alpha.sum())
    denom = epsilon**size
    for a_i, lam, pii in zip(alpha, lambdas, p_diag):
        denom *= (np.sqrt(pii) * lam) ** a_i
    return float(a_alpha * n ** (size / 2.0 - 1.0) / denom)


@dataclass
class MomentTable:
    """All P_alpha on the (N+1)^K grid, plus the pair diagonal it was scaled by."""

    K: int
    N: int
    epsilon: float
    valid: bool
    pair_diagonal: np.ndarray
    entries: np.ndarray  # shape (N+1,) * K

    def value(self, alpha) -> float:
        return float(self.entries[tuple(alpha)])

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "epsilon": self.epsilon,
            "valid": self.valid,
            "P_diag": self.pair_diagonal.tolist(),
            "entries": [
                {"alpha": list(alpha), "value": float(self.entries[alpha])}
                for alpha in np.ndindex(self.entries.shape)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MomentTable":
        shape = (doc["N"] + 1,) * doc["K"]
        entries = np.zeros(shape)
        for item in doc["entries"]:
            entries[tuple(item["alpha"])] = item["value"]
        return cls(
            K=doc["K"],
            N=doc["N"],
            epsilon=doc["epsilon"],
            valid=doc["valid"],
            pair_diagonal=np.array(doc["P_diag"], dtype=float),
            entries=entries,
        )


def moment_table(
    G2: SparseGraph,
    spectrum,
    N: int,
    epsilon: float,
    aggregates: np.ndarray | None = None,
    max_entries: int = 20000,
) -> MomentTable:
    """Compute every P_alpha for 0 <= alpha <= (N, ..., N).

    `spectrum` is either the spectral-stage result (carrying lambdas and the
    (n, K) vertex-aggregate matrix) or a plain array of lambdas with the
    aggregates passed separately. Power sums are computed once per grid point
    and shared across all alpha.
    """
    if N < 1:
        raise ValueError("need N >= 1")
    if aggregates is None:
        lambdas = np.asarray(spectrum.lambdas, dtype=float)
        aggregates = spectrum.vertex_aggregates
    else:
        lambdas = np.asarray(spectrum, dtype=float)
    B = np.atleast_2d(np.asarray(aggregates, dtype=float))
    if B.shape[0] != G2.n:
        B = B.T
    K = lambdas.size
    shape = (N + 1,) * K
    n_entries = (N + 1) ** K
    if n_entries > max_entries:
        raise MomentTableTooLarge(f"(N+1)^K = {n_entries} exceeds cap {max_entries}")

    p_diag = np.array(
        [normalize_pair(count_pair(G2, B[:, k]), epsilon, lambdas[k]) for k in range(K)]
    )
    if np.any(p_diag <= 0):
        return MomentTable(K, N, epsilon, False, p_diag, np.zeros(shape))

    all_alphas = list(np.ndindex(shape))
    betas = sorted(
        {
            b
            for alpha in all_alphas
            for _, blocks in injective_profiles(tuple(alpha))
            for b in blocks
        }
    )
    sums = _power_sums(G2, B, betas)

    entries = np.zeros(shape)
    for alpha in all_alphas:
        size = int(sum(alpha))
        if size == 0:
            a_val = float(G2.n)
        else:
            a_val = 0.0
            for coeff, blocks in injective_profiles(tuple(alpha)):
                term = np.ones(G2.n)
                for beta in blocks:
                    term = term * sums[beta]
                a_val += coeff * float(term.sum())
        entries[alpha] = normalize_star(a_val, alpha, G2.n, epsilon, lambdas, p_diag)
    return MomentTable(K, N, epsilon, True, p_diag, entries)
