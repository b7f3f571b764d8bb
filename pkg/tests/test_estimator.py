import numpy as np
import pytest
from scipy import stats

from graphon_forge.estimator import (
    EstimateParseError,
    GraphonEstimate,
    assemble,
    export_kernel_csv,
    load_estimate,
    sample_density,
    save_estimate,
)
from graphon_forge.moment_poly import (
    DensityFit,
    UnusableFitError,
    l1_norm_plus,
    legendre_basis,
    mollifier_moments,
    fit_density,
)


def constant_fit(kappa=1.5, K=2, level=1.0):
    N = 2
    rho = np.zeros((N + 1,) * K)
    rho[(0,) * K] = level
    fit = DensityFit(K=K, N=N, kappa=kappa, delta=0.1, rho=rho, max_bound=level * (2 * kappa) ** (-K / 2) + 0.1)
    l1_norm_plus(fit, 64)
    return fit


def atom_fit(center=0.6, delta=0.25, N=20, kappa=1.2):
    """1-D fit of a single mollified atom from its exact moments."""
    from math import comb

    mm = mollifier_moments(delta, N)
    M = np.array([sum(comb(a, b) * center**b * mm.moments[a - b] for b in range(a + 1)) for a in range(N + 1)])
    basis = legendre_basis(N, kappa)
    fit = fit_density(M, basis, 1, delta=delta)
    l1_norm_plus(fit, 256)
    return fit


class TestSampleDensity:
    def test_constant_fit_uniform_ks(self):
        fit = constant_fit()
        passed = 0
        for seed in range(20):
            Z = sample_density(fit, 4000, seed=seed)
            ok = True
            for axis in range(2):
                u = (Z[:, axis] + fit.kappa) / (2 * fit.kappa)
                stat = stats.kstest(u, "uniform").statistic
                crit = 1.628 / np.sqrt(Z.shape[0])  # 1% critical value
                ok = ok and stat < crit
            passed += ok
        assert passed >= 19

    def test_atom_fit_mean(self):
        fit = atom_fit(center=0.6)
        Z = sample_density(fit, 20000, seed=3)
        se = Z[:, 0].std() / np.sqrt(Z.shape[0])
        # extra 0.02 covers the deterministic truncation bias of the fit itself
        assert abs(Z[:, 0].mean() - 0.6) <= 3 * se + 0.02

    def test_m_zero(self):
        fit = constant_fit()
        Z = sample_density(fit, 0, seed=0)
        assert Z.shape == (0, 2)

    def test_requires_norm(self):
        fit = constant_fit()
        fit.l1_norm_plus = None
        with pytest.raises(UnusableFitError):
            sample_density(fit, 10, seed=0)

    def test_deterministic(self):
        fit = constant_fit()
        a = sample_density(fit, 500, seed=9)
        b = sample_density(fit, 500, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_rejection_and_grid_paths_agree(self):
        fit = atom_fit(center=0.2, delta=0.3, N=10)
        a = sample_density(fit, 30000, seed=1, method="rejection")
        b = sample_density(fit, 30000, seed=2, method="grid")
        bins = np.linspace(-fit.kappa, fit.kappa, 9)
        ha, _ = np.histogram(a[:, 0], bins=bins)
        hb, _ = np.histogram(b[:, 0], bins=bins)
        keep = (ha + hb) > 20
        chi2 = np.sum((ha[keep] - hb[keep]) ** 2 / (ha[keep] + hb[keep]))
        crit = stats.chi2.ppf(0.99, df=int(keep.sum()) - 1)
        assert chi2 < crit


class TestAssembleAndEvaluate:
    def test_rank_one_constant(self):
        est = assemble(np.full((10, 1), 0.7), np.array([4.0]))
        val = est.evaluate(0.3, 0.9)
        assert val == pytest.approx(4.0 * 0.49, rel=1e-15)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        est = assemble(rng.standard_normal((50, 2)), np.array([4.0, 3.0]))
        xs, ys = rng.random(1000), rng.random(1000)
        np.testing.assert_array_equal(est.evaluate(xs, ys), est.evaluate(ys, xs))

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        Z = rng.standard_normal((30, 3))
        lam = np.array([4.0, -2.0, 1.0])
        est = assemble(Z, lam)
        for _ in range(50):
            x, y = rng.random(), rng.random()
            i = min(max(int(np.ceil(x * 30)), 1), 30) - 1
            j = min(max(int(np.ceil(y * 30)), 1), 30) - 1
            want = float(np.sum(lam * Z[i] * Z[j]))
            assert est.evaluate(x, y) == pytest.approx(want, rel=1e-14, abs=1e-15)

    def test_x_zero_maps_to_first_piece(self):
        Z = np.arange(8.0).reshape(4, 2)
        est = assemble(Z, np.array([1.0, 1.0]))
        assert est.piece_of(0.0) == 0
        assert est.piece_of(1.0) == 3

    def test_needs_a_row(self):
        with pytest.raises(ValueError):
            GraphonEstimate(np.array([1.0]), np.empty((0, 1)), 1.0)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        est = assemble(rng.standard_normal((40, 2)), np.array([3.7, -1.2]), kappa=2.0,
                       provenance={"seed": 7})
        p = tmp_path / "est.json"
        save_estimate(est, p)
        back = load_estimate(p)
        np.testing.assert_array_equal(back.Z, est.Z)
        np.testing.assert_array_equal(back.lambdas, est.lambdas)
        assert back.m == est.m and back.kappa == est.kappa
        assert back.provenance["seed"] == 7

    def test_m_mismatch_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"version": 1, "lambdas": [1.0], "m": 3, "kappa": 1.0, "Z": [0.1, 0.2]}')
        with pytest.raises(EstimateParseError):
            load_estimate(p)

    def test_unknown_version_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"version": 99, "lambdas": [1.0], "m": 1, "kappa": 1.0, "Z": [0.1]}')
        with pytest.raises(EstimateParseError):
            load_estimate(p)

    def test_malformed_json_reports_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"version": 1, ')
        with pytest.raises(EstimateParseError, match="line"):
            load_estimate(p)

    def test_kernel_csv_export(self, tmp_path):
        est = assemble(np.full((5, 1), 2.0), np.array([1.0]))
        p = tmp_path / "k.csv"
        export_kernel_csv(est, p, g=4)
        grid = np.loadtxt(p, delimiter=",")
        np.testing.assert_allclose(grid, 4.0)
