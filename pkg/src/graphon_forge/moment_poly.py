"""Mollified moment matching in a scaled orthonormal Legendre basis.

The estimated joint moments describe a distribution supported on a curve in
R^K (the image of the eigenfunctions), so it is first convolved with a
compactly supported bump of width delta, which turns moment matching into a
well-posed density-fitting problem. The density is then expanded on the box
[-kappa, kappa]^K in tensor products of Legendre polynomials normalized to
unit L2 norm; because moments determine the expansion coefficients linearly
through the triangular coefficient matrix, the fit is a pair of tensor
contractions. The positive part of the truncated expansion is what gets
sampled downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.integrate import quad

from .star_counts import MomentTable


class QuadratureUnderflowError(ArithmeticError):
    pass


class UnusableFitError(RuntimeError):
    pass


@dataclass
class MollifierMoments:
    """Moments E[N_delta^j] of the bump density proportional to exp(-1/(d^2-x^2))."""

    delta: float
    moments: np.ndarray

    @property
    def N(self) -> int:
        return self.moments.size - 1


def mollifier_moments(delta: float, N: int) -> MollifierMoments:
    """Moments up to order N by adaptive quadrature of the unit bump.

    The substitution x = delta * t reduces everything to the unit-width bump,
    so moment j is delta^j times a fixed constant; odd moments vanish by
    symmetry and are returned as exact zeros.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if N >= 1 and delta ** max(N, 1) == 0.0:
        raise QuadratureUnderflowError(f"delta={delta} underflows at order {N}")
    psi = lambda t: np.exp(-1.0 / (1.0 - t * t)) if abs(t) < 1 else 0.0
    z0 = quad(psi, -1, 1, epsabs=1e-15, epsrel=1e-13)[0]
    moments = np.zeros(N + 1)
    moments[0] = 1.0
    for j in range(2, N + 1, 2):
        raw = quad(lambda t: t**j * psi(t), -1, 1, epsabs=1e-15, epsrel=1e-13)[0]
        moments[j] = raw / z0 * delta**j
    return MollifierMoments(delta=delta, moments=moments)


def _binomial_convolution_matrix(mm: MollifierMoments, N: int) -> np.ndarray:
    """Lower-triangular T with T[a, b] = C(a, b) E[N_delta^(a-b)]."""
    t = np.zeros((N + 1, N + 1))
    for a in range(N + 1):
        for b in range(a + 1):
            t[a, b] = comb(a, b) * mm.moments[a - b]
    return t


def _apply_axes(matrix: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """Apply `matrix` along every axis of `tensor`."""
    out = tensor
    for axis in range(tensor.ndim):
        out = np.moveaxis(np.tensordot(matrix, out, axes=(1, axis)), 0, axis)
    return out


def mollify_moments(table: MomentTable, mm: MollifierMoments) -> np.ndarray:
    """M_alpha = sum_{beta <= alpha} P_beta prod_i C(a_i, b_i) E[N^(a_i - b_i)]."""
    if not table.valid:
        raise UnusableFitError("moment table is invalid (some pair diagonal <= 0)")
    if mm.N < table.N:
        raise ValueError("mollifier moments shorter than moment table order")
    t = _binomial_convolution_matrix(mm, table.N)
    return _apply_axes(t, table.entries)


@dataclass
class LegendreBasis:
    """Monomial coefficients of unit-L2-norm Legendre polynomials, plus the box scaling.

    Row i of `coeffs` holds the monomial coefficients of L_i on [-1, 1];
    `scaled_coeffs[i, j] = coeffs[i, j] / kappa^(j + 1/2)` are the monomial
    coefficients of the rescaled basis on [-kappa, kappa].
    """

    N: int
    kappa: float
    coeffs: np.ndarray
    scaled_coeffs: np.ndarray

    def values(self, x: np.ndarray) -> np.ndarray:
        """Basis values L~_i(x), shape (len(x), N+1); three-term recurrence."""
        t = np.asarray(x, dtype=float) / self.kappa
        van = npleg.legvander(t, self.N)
        norms = np.sqrt((2 * np.arange(self.N + 1) + 1) / (2.0 * self.kappa))
        return van * norms

    def sup_bounds(self) -> np.ndarray:
        """Per-degree sup of |L~_i| on the box: sqrt((2i+1)/(2 kappa))."""
        return np.sqrt((2 * np.arange(self.N + 1) + 1) / (2.0 * self.kappa))


def legendre_basis(N: int, kappa: float) -> LegendreBasis:
    if N < 0 or kappa <= 0:
        raise ValueError("need N >= 0 and kappa > 0")
    coeffs = np.zeros((N + 1, N + 1))
    for i in range(N + 1):
        unit = np.zeros(i + 1)
        unit[i] = 1.0
        coeffs[i, : i + 1] = npleg.leg2poly(unit) * np.sqrt((2 * i + 1) / 2.0)
    scaled = coeffs / kappa ** (np.arange(N + 1)[None, :] + 0.5)
    return LegendreBasis(N=N, kappa=kappa, coeffs=coeffs, scaled_coeffs=scaled)


@dataclass
class DensityFit:
    """Coefficient tensor of the truncated density expansion on the box."""

    K: int
    N: int
    kappa: float
    delta: float
    rho: np.ndarray
    max_bound: float
    l1_norm_plus: float | None = None
    resolution_warning: bool = False
    _basis: LegendreBasis = field(default=None, repr=False, compare=False)

    @property
    def basis(self) -> LegendreBasis:
        if self._basis is None:
            self._basis = legendre_basis(self.N, self.kappa)
        return self._basis


def fit_density(M: np.ndarray, basis: LegendreBasis, K: int, delta: float = 0.0) -> DensityFit:
    """Coefficients rho_alpha = sum_{beta <= alpha} C~[alpha_i, beta_i] M_beta.

    The triangular scaled-coefficient matrix acts on the moment tensor along
    every axis; with exact moments of a polynomial density this recovers its
    basis coefficients exactly. max_bound = sum |rho_alpha| prod
    sqrt((2 a_i + 1)/(2 kappa)) dominates sup |h| on the box.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != K or any(s != basis.N + 1 for s in M.shape):
        raise ValueError("moment tensor shape must be (N+1,) * K")
    rho = _apply_axes(basis.scaled_coeffs, M)
    sup = basis.sup_bounds()
    bound_tensor = np.abs(rho)
    for axis in range(K):
        shape = [1] * K
        shape[axis] = basis.N + 1
        bound_tensor = bound_tensor * sup.reshape(shape)
    return DensityFit(
        K=K,
        N=basis.N,
        kappa=basis.kappa,
        delta=delta,
        rho=rho,
        max_bound=float(bound_tensor.sum()),
        _basis=basis,
    )


def _eval_points(fit: DensityFit, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    inside = np.all(np.abs(pts) <= fit.kappa, axis=1)
    vals = np.zeros(pts.shape[0])
    if np.any(inside):
        sub = pts[inside]
        acc = np.broadcast_to(fit.rho, (sub.shape[0],) + fit.rho.shape).copy()
        for axis in range(fit.K):
            bv = fit.basis.values(sub[:, axis])
            acc = np.einsum("pi...,pi->p...", acc, bv)
        vals[inside] = acc.reshape(sub.shape[0])
    return vals


def eval_density(fit: DensityFit, x) -> np.ndarray | float:
    """h_N at point(s) x; zero outside the box."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    out = _eval_points(fit, x)
    return float(out[0]) if single else out


def eval_density_plus(fit: DensityFit, x) -> np.ndarray | float:
    out = eval_density(fit, x)
    return max(out, 0.0) if np.isscalar(out) else np.maximum(out, 0.0)


def density_grid(fit: DensityFit, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint tensor grid values of h_N: (axis midpoints, value tensor)."""
    mids = (np.arange(resolution) + 0.5) / resolution * 2 * fit.kappa - fit.kappa
    bv = fit.basis.values(mids)  # (res, N+1)
    acc = fit.rho
    for _ in range(fit.K):
        # contract the leading coefficient axis against the basis values,
        # cycling so finished point-axes stay in order
        acc = np.tensordot(acc, bv, axes=(0, 1))
    return mids, acc


def l1_norm_plus(fit: DensityFit, grid_resolution: int = 128) -> float:
    """Box integral of max(h_N, 0) by midpoint quadrature; doubling check attached.

    Stores the value on the fit and flags `resolution_warning` when doubling
    the grid moves the result by 1e-4 relative or more.
    """
    if grid_resolution < 32:
        raise ValueError("need at least 32 grid points per axis")
    cell = (2 * fit.kappa / grid_resolution) ** fit.K
    _, vals = density_grid(fit, grid_resolution)
    norm = float(np.maximum(vals, 0.0).sum() * cell)
    cell2 = (2 * fit.kappa / (2 * grid_resolution)) ** fit.K
    _, vals2 = density_grid(fit, 2 * grid_resolution)
    norm2 = float(np.maximum(vals2, 0.0).sum() * cell2)
    if norm <= 0.0 or norm2 <= 0.0:
        raise UnusableFitError("fitted density has nonpositive L1 norm")
    fit.resolution_warning = abs(norm2 - norm) >= 1e-4 * abs(norm2)
    fit.l1_norm_plus = norm2
    return norm2
