"""Sparse graph sampling at edge-probability scale Q(x,y)/n, plus the edge split.

Sampling is blockwise: vertices are bucketed by latent block, the edge count
for each block pair is drawn from the exact Binomial law, and that many
distinct pairs are placed uniformly. This is distribution-identical to
independent Bernoulli thinning over all pairs but costs O(n + |E|) instead of
O(n^2). All randomness flows through labeled substreams of one master seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .graphon_model import StepGraphon
from .rng import substream


@dataclass
class LatentAssignment:
    """Hidden i.i.d. Uniform[0,1] vertex positions."""

    latents: np.ndarray

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=float)
        if np.any(self.latents < 0) or np.any(self.latents > 1):
            raise ValueError("latents must lie in [0,1]")

    @property
    def n(self) -> int:
        return self.latents.size


@dataclass
class SparseGraph:
    """Simple undirected graph; edges stored as sorted (u < v) int64 rows."""

    n: int
    edges: np.ndarray
    _adjacency: sparse.csr_matrix = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must satisfy u < v (no self-loops)")
            if np.any(e < 0) or np.any(e >= self.n):
                raise ValueError("edge endpoint out of range")
            order = np.lexsort((e[:, 1], e[:, 0]))
            e = e[order]
            if np.any((np.diff(e[:, 0]) == 0) & (np.diff(e[:, 1]) == 0)):
                raise ValueError("duplicate edges")
        self.edges = e

    @property
    def m(self) -> int:
        return self.edges.shape[0]

    @property
    def adjacency(self) -> sparse.csr_matrix:
        if self._adjacency is None:
            u, v = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * self.m)
            rows = np.concatenate([u, v])
            cols = np.concatenate([v, u])
            self._adjacency = sparse.csr_matrix(
                (data, (rows, cols)), shape=(self.n, self.n)
            )
        return self._adjacency

    @property
    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=np.int64)
        if self.m:
            np.add.at(d, self.edges[:, 0], 1)
            np.add.at(d, self.edges[:, 1], 1)
        return d

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]


def _distinct_pairs(rng, count, draw_a, draw_b, same_pool: bool):
    """`count` distinct unordered pairs, uniform over the pool, via redraw on collision."""
    got = np.empty((0, 2), dtype=np.int64)
    need = count
    while need > 0:
        k = int(need * 1.2) + 8
        i, j = draw_a(rng, k), draw_b(rng, k)
        if same_pool:
            keep = i != j
            i, j = i[keep], j[keep]
            lo, hi = np.minimum(i, j), np.maximum(i, j)
        else:
            lo, hi = i, j
        cand = np.concatenate([got, np.stack([lo, hi], axis=1)])
        got = np.unique(cand, axis=0)
        need = count - got.shape[0]
    if got.shape[0] > count:
        # drop a uniformly chosen surplus so the kept set stays uniform
        keep = rng.permutation(got.shape[0])[:count]
        got = got[np.sort(keep)]
    return got


def sample_graph(g: StepGraphon, n: int, seed: int) -> tuple[SparseGraph, LatentAssignment]:
    """Draw latents and a graph with edge probability min(Q(X_u, X_v)/n, 1)."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng_lat = substream(seed, "latents")
    latents = rng_lat.random(n)
    blocks = g.block_of(latents)
    members = [np.sort(np.nonzero(blocks == b)[0]) for b in range(g.n_blocks)]

    rng_edges = substream(seed, "edges")
    chunks = []
    for a in range(g.n_blocks):
        for b in range(a, g.n_blocks):
            p = min(g.values[a, b] / n, 1.0)
            if p <= 0.0:
                continue
            ma, mb = members[a], members[b]
            n_pairs = ma.size * (ma.size - 1) // 2 if a == b else ma.size * mb.size
            if n_pairs == 0:
                continue
            count = int(rng_edges.binomial(n_pairs, p)) if p < 1.0 else int(n_pairs)
            if count == 0:
                continue
            if count > n_pairs // 2:
                # dense block pair (only near the probability clamp at tiny n):
                # enumerate the full pool and keep a uniform subset
                if a == b:
                    iu, ju = np.triu_indices(ma.size, k=1)
                    pool = np.stack([ma[iu], ma[ju]], axis=1)
                else:
                    pool = np.stack(
                        [np.repeat(ma, mb.size), np.tile(mb, ma.size)], axis=1
                    )
                    pool = np.stack(
                        [pool.min(axis=1), pool.max(axis=1)], axis=1
                    )
                keep = np.sort(rng_edges.permutation(n_pairs)[:count])
                chunks.append(pool[keep])
                continue
            if a == b:
                pairs = _distinct_pairs(
                    rng_edges,
                    count,
                    lambda r, k, ma=ma: ma[r.integers(0, ma.size, size=k)],
                    lambda r, k, ma=ma: ma[r.integers(0, ma.size, size=k)],
                    same_pool=True,
                )
            else:
                pairs = _distinct_pairs(
                    rng_edges,
                    count,
                    lambda r, k, ma=ma: ma[r.integers(0, ma.size, size=k)],
                    lambda r, k, mb=mb: mb[r.integers(0, mb.size, size=k)],
                    same_pool=False,
                )
                pairs = np.stack(
                    [np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])],
                    axis=1,
                )
            chunks.append(pairs)
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return SparseGraph(n, edges), LatentAssignment(latents)


def split_edges(gr: SparseGraph, epsilon: float, seed: int) -> tuple[SparseGraph, SparseGraph]:
    """Independently route each edge to G1 with probability 1 - epsilon, else G2."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0,1)")
    rng = substream(seed, "split")
    to_g2 = rng.random(gr.m) < epsilon
    return SparseGraph(gr.n, gr.edges[~to_g2]), SparseGraph(gr.n, gr.edges[to_g2])


@dataclass
class DegreeStats:
    mean: float
    max: int
    histogram: np.ndarray  # histogram[d] = number of vertices with degree d


def degree_stats(gr: SparseGraph) -> DegreeStats:
    d = gr.degrees
    dmax = int(d.max()) if d.size else 0
    return DegreeStats(
        mean=float(d.mean()) if d.size else 0.0,
        max=dmax,
        histogram=np.bincount(d, minlength=dmax + 1),
    )


def save_edge_list(gr: SparseGraph, path) -> None:
    """Header line "n m", then one "u v" per line, 0-indexed with u < v."""
    with open(path, "w") as fh:
        fh.write(f"{gr.n} {gr.m}\n")
        for u, v in gr.edges:
            fh.write(f"{u} {v}\n")


def load_edge_list(path) -> SparseGraph:
    with open(path) as fh:
        n, m = map(int, fh.readline().split())
        edges = np.loadtxt(fh, dtype=np.int64, ndmin=2) if m else np.empty((0, 2), np.int64)
    if edges.shape[0] != m:
        raise ValueError(f"edge list header promised {m} edges, found {edges.shape[0]}")
    return SparseGraph(n, edges)


def save_latents(lat: LatentAssignment, path) -> None:
    np.savetxt(path, lat.latents, fmt="%.17g")


def load_latents(path) -> LatentAssignment:
    return LatentAssignment(np.loadtxt(path, ndmin=1))
