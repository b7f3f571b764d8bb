"""Sampling the fitted feature density and assembling the step-kernel estimate.

Feature vectors Z_1..Z_m are drawn i.i.d. from the normalized positive part
of the fitted density: rejection sampling under a uniform proposal with the
fit's computed sup bound as envelope, falling back to inverse-CDF sampling on
the normalization tensor grid when the acceptance rate collapses. The
estimate itself is the rank-K step kernel sum_i lambda_i fhat_i(x) fhat_i(y)
with fhat_i(x) = Z_{ceil(x m)}(i) and x = 0 mapped to the first piece.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .moment_poly import DensityFit, UnusableFitError, _eval_points, density_grid
from .rng import substream

FORMAT_VERSION = 1
FALLBACK_ACCEPT_RATE = 1e-3


class EnvelopeViolationError(RuntimeError):
    """Density evaluation exceeded the fit's stored sup bound."""


class EstimateParseError(ValueError):
    pass


def _sample_rejection(fit: DensityFit, m: int, rng) -> np.ndarray | None:
    """Rejection sampling; None when the acceptance rate is below the fallback cutoff."""
    out = np.empty((0, fit.K))
    drawn = accepted = 0
    bound = fit.max_bound
    while out.shape[0] < m:
        batch = max(int((m - out.shape[0]) * 1.5) + 64, 256)
        pts = rng.uniform(-fit.kappa, fit.kappa, size=(batch, fit.K))
        heights = rng.uniform(0.0, bound, size=batch)
        dens = _eval_points(fit, pts)
        if np.any(dens > bound * (1 + 1e-12)):
            raise EnvelopeViolationError(
                f"density value {dens.max():.3e} exceeds declared bound {bound:.3e}"
            )
        keep = heights < np.maximum(dens, 0.0)
        drawn += batch
        accepted += int(keep.sum())
        out = np.concatenate([out, pts[keep]])
        if drawn >= 8192 and accepted < FALLBACK_ACCEPT_RATE * drawn:
            return None
    return out[:m]


def _sample_grid(fit: DensityFit, m: int, rng, resolution: int) -> np.ndarray:
    """Inverse-CDF sampling on the normalization tensor grid, jittered within cells."""
    mids, vals = density_grid(fit, resolution)
    mass = np.maximum(vals, 0.0).ravel()
    total = mass.sum()
    if total <= 0:
        raise UnusableFitError("fitted density has no positive mass on the grid")
    flat = rng.choice(mass.size, size=m, p=mass / total)
    idx = np.unravel_index(flat, vals.shape)
    cell = 2 * fit.kappa / resolution
    pts = np.stack([mids[ix] for ix in idx], axis=1)
    return pts + rng.uniform(-cell / 2, cell / 2, size=pts.shape)


def sample_density(
    fit: DensityFit,
    m: int,
    seed: int,
    method: str = "auto",
    grid_resolution: int = 128,
) -> np.ndarray:
    """Draw m i.i.d. feature vectors from the normalized positive part of the fit."""
    if fit.l1_norm_plus is None or fit.l1_norm_plus <= 0:
        raise UnusableFitError("fit has no usable positive mass (run l1_norm_plus first)")
    if m == 0:
        return np.empty((0, fit.K))
    rng = substream(seed, "feature-sampling")
    if method == "grid":
        return _sample_grid(fit, m, rng, grid_resolution)
    if method not in ("auto", "rejection"):
        raise ValueError(f"unknown sampling method {method!r}")
    out = _sample_rejection(fit, m, rng)
    if out is None:
        if method == "rejection":
            raise UnusableFitError("rejection acceptance rate below fallback cutoff")
        return _sample_grid(fit, m, rng, grid_resolution)
    return out


@dataclass
class GraphonEstimate:
    """Step-kernel estimate with m pieces and K sampled feature columns."""

    lambdas: np.ndarray
    Z: np.ndarray
    kappa: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float).reshape(-1, self.lambdas.size)
        if self.Z.shape[0] < 1:
            raise ValueError("need at least one piece")

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def K(self) -> int:
        return self.lambdas.size

    def piece_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.ceil(x * self.m).astype(int)
        return np.clip(idx, 1, self.m) - 1

    def feature_grid(self, g: int) -> np.ndarray:
        mid = (np.arange(g) + 0.5) / g
        return self.Z[self.piece_of(mid)]

    def evaluate(self, x, y):
        fx = self.Z[self.piece_of(x)]
        fy = self.Z[self.piece_of(y)]
        # multiply the feature pair first: fx*fy is exactly symmetric in x, y
        return ((fx * fy) * self.lambdas).sum(axis=-1)

    def kernel_grid(self, g: int) -> np.ndarray:
        f = self.feature_grid(g)
        return (f * self.lambdas) @ f.T


def assemble(Z: np.ndarray, lambdas: np.ndarray, kappa: float = np.inf, provenance=None) -> GraphonEstimate:
    """Estimate from sampled feature rows and the spectral weights."""
    return GraphonEstimate(lambdas, Z, kappa, provenance or {})


def save_estimate(est: GraphonEstimate, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "lambdas": est.lambdas.tolist(),
        "m": est.m,
        "kappa": est.kappa,
        "Z": est.Z.ravel().tolist(),
        "provenance": est.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_estimate(path) -> GraphonEstimate:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise EstimateParseError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}") from exc
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise EstimateParseError(f"unsupported estimator file version {version!r}")
    lambdas = np.array(doc["lambdas"], dtype=float)
    flat = np.array(doc["Z"], dtype=float)
    if lambdas.size == 0 or flat.size % lambdas.size:
        raise EstimateParseError("Z length is not a multiple of the feature count")
    Z = flat.reshape(-1, lambdas.size)
    if Z.shape[0] != doc["m"]:
        raise EstimateParseError(f"m={doc['m']} does not match {Z.shape[0]} Z rows")
    return GraphonEstimate(lambdas, Z, float(doc["kappa"]), doc.get("provenance", {}))


def export_kernel_csv(est: GraphonEstimate, path, g: int = 128) -> None:
    """g x g uniform-grid kernel values as CSV, for plotting."""
    np.savetxt(path, est.kernel_grid(g), delimiter=",", fmt="%.17g")
