import math

import numpy as np
import pytest

from spikestruct.spectra import (
    PushforwardLaw,
    RTransformRangeError,
    SpectralDensity,
    SpectraError,
    build_builtin,
    build_builtin_density,
    effective_coupling,
    export_density_csv,
    hilbert_pv,
    import_density_csv,
    potential_derivative_from_density,
    pushforward_law,
    r_transform,
    sample_eigenvalues,
    standardize,
    stieltjes_transform,
    transform_potential,
)

ALL_KINDS = ["quartic", "sestic", "marchenko_pastur", "truncated_normal", "semicircle"]


def semicircle_g(z):
    return (z - math.sqrt(z * z - 4.0)) / 2.0


class TestBuiltinDensities:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_normalization_and_variance(self, kind):
        rho = build_builtin_density(kind)
        assert np.all(rho.weights >= 0)
        assert abs(rho.weights.sum() - 1.0) <= 1e-8
        assert abs(rho.variance - 1.0) <= 1e-6

    def test_quartic_support_from_normalization(self):
        # gamma = 16/27 forces a^2 = 3/4, so the bulk edge is sqrt(3)
        rho = build_builtin_density("quartic")
        assert rho.support == pytest.approx((-math.sqrt(3), math.sqrt(3)), abs=1e-14)
        assert abs(rho.mean) <= 1e-12

    def test_marchenko_pastur_support(self):
        rho = build_builtin_density("marchenko_pastur")
        alpha = 0.2
        sigma2 = 1.0 / math.sqrt(alpha)
        lo = sigma2 * (1 - math.sqrt(alpha)) ** 2
        hi = sigma2 * (1 + math.sqrt(alpha)) ** 2
        assert rho.support == pytest.approx((lo, hi), rel=1e-12)
        assert rho.mean == pytest.approx(sigma2, abs=1e-10)

    def test_truncated_normal_mass(self):
        rho = build_builtin_density("truncated_normal")
        grid = np.linspace(rho.support[0], rho.support[1], 20001)
        mass = np.trapezoid(rho.pdf(grid), grid)
        assert abs(mass - 1.0) <= 1e-8

    def test_unknown_kind(self):
        with pytest.raises(SpectraError, match="unknown density kind"):
            build_builtin_density("cauchy")

    @pytest.mark.parametrize("kind,params", [
        ("quartic", {"gamma": -1.0}),
        ("sestic", {"xi": 0.0}),
        ("marchenko_pastur", {"alpha": 1.5}),
        ("truncated_normal", {"half_width": -2.0}),
    ])
    def test_bad_shape_parameters(self, kind, params):
        with pytest.raises(SpectraError):
            build_builtin_density(kind, params)


class TestStandardize:
    def test_semicircle_unchanged(self):
        rho = build_builtin_density("semicircle")
        std = standardize(rho)
        assert std.support == pytest.approx(rho.support, abs=1e-10)
        assert abs(std.mean) <= 1e-8
        assert abs(std.variance - 1.0) <= 1e-6

    def test_mp_sigma_one_recentered(self):
        # alpha=0.2, sigma=1: mean alpha... the raw law has mean 1, variance 0.2
        rho = build_builtin_density("marchenko_pastur", {"sigma2": 1.0})
        assert rho.mean == pytest.approx(1.0, abs=1e-10)
        assert rho.variance == pytest.approx(0.2, abs=1e-10)
        std = standardize(rho)
        # moment quadrature oracle on the transformed grid
        mean = np.dot(std.weights, std.nodes)
        var = np.dot(std.weights, (std.nodes - mean) ** 2)
        assert abs(mean) <= 1e-8
        assert abs(var - 1.0) <= 1e-6
        # pdf transforms consistently: mass still one
        grid = np.linspace(std.support[0] + 1e-9, std.support[1] - 1e-9, 30001)
        assert np.trapezoid(std.pdf(grid), grid) == pytest.approx(1.0, abs=1e-5)

    def test_point_mass_rejected(self):
        rho = build_builtin_density("semicircle")
        degenerate = SpectralDensity(
            support=rho.support, nodes=rho.nodes, weights=rho.weights,
            quad_weights=rho.quad_weights, pdf=rho.pdf, mean=0.0, variance=0.0)
        with pytest.raises(SpectraError, match="degenerate"):
            standardize(degenerate)

    def test_potential_transforms_with_density(self):
        rho, pot = build_builtin("marchenko_pastur")
        std = standardize(rho)
        pot_std = transform_potential(pot, std)
        # equilibrium identity in the new coordinates
        for x in [-1.0, 0.0, 1.0, 2.0]:
            assert pot_std.dv(x) == pytest.approx(2.0 * hilbert_pv(std, x), abs=1e-9)


class TestStieltjes:
    def test_semicircle_closed_form(self):
        rho = build_builtin_density("semicircle")
        assert stieltjes_transform(rho, 2.0 + 1e-9) == pytest.approx(1.0, abs=1e-4)
        for z in [2.5, 3.0, 5.0]:
            assert stieltjes_transform(rho, z) == pytest.approx(semicircle_g(z), abs=1e-12)

    def test_large_z_asymptotics(self):
        for kind in ALL_KINDS:
            rho = build_builtin_density(kind)
            z = 1e6
            assert stieltjes_transform(rho, z) * z == pytest.approx(1.0, rel=1e-5)

    def test_inside_support_rejected(self):
        rho = build_builtin_density("semicircle")
        with pytest.raises(SpectraError, match="inside support"):
            stieltjes_transform(rho, 0.5)

    def test_quartic_against_monte_carlo(self):
        rho = build_builtin_density("quartic")
        draws = sample_eigenvalues(rho, 10**6, seed=42)
        mc = np.mean(1.0 / (2.0 - draws))
        assert stieltjes_transform(rho, 2.0) == pytest.approx(mc, abs=5e-3)

    def test_strictly_decreasing_above_edge(self):
        for kind in ["quartic", "marchenko_pastur"]:
            rho = build_builtin_density(kind)
            zs = rho.support[1] + np.linspace(1e-6, 10.0, 100)
            vals = [stieltjes_transform(rho, z) for z in zs]
            assert np.all(np.diff(vals) < 0)


class TestHilbertPV:
    def test_semicircle_values(self):
        rho = build_builtin_density("semicircle")
        assert hilbert_pv(rho, 0.0) == pytest.approx(0.0, abs=1e-12)
        # V'(x) = x and V' = 2 PV
        assert hilbert_pv(rho, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_quartic_even_symmetry(self):
        rho = build_builtin_density("quartic")
        assert hilbert_pv(rho, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_edges_rejected(self):
        rho = build_builtin_density("semicircle")
        for x in [-2.0, 2.0, 2.5]:
            with pytest.raises(SpectraError):
                hilbert_pv(rho, x)


class TestPotentialReconstruction:
    def test_semicircle_identity(self):
        rho = build_builtin_density("semicircle")
        pot = potential_derivative_from_density(rho)
        xs = np.linspace(-1.9, 1.9, 101)
        assert np.max(np.abs(pot.dv(xs) - xs)) <= 1e-3

    def test_quartic_analytic_form(self):
        rho = build_builtin_density("quartic")
        pot = potential_derivative_from_density(rho)
        g = 16.0 / 27.0
        xs = np.linspace(-0.9 * rho.support[1], 0.9 * rho.support[1], 101)
        assert np.max(np.abs(pot.dv(xs) - g * xs**3)) <= 1e-3

    def test_truncated_normal_finite_interior(self):
        rho = build_builtin_density("truncated_normal")
        pot = potential_derivative_from_density(rho)
        lo, hi = rho.support
        xs = np.linspace(lo + 0.05, hi - 0.05, 51)
        assert np.all(np.isfinite(pot.dv(xs)))

    def test_outside_support_plain_quadrature(self):
        rho = build_builtin_density("semicircle")
        pot = potential_derivative_from_density(rho)
        assert pot.dv(3.0) == pytest.approx(2.0 * semicircle_g(3.0), abs=1e-10)
        assert pot.provenance == "pv-reconstructed"


class TestEffectiveCoupling:
    def test_gaussian_reduction_exact(self):
        rho, pot = build_builtin("semicircle")
        rng = np.random.default_rng(0)
        for lam in [0.5, 1.0, 2.0]:
            jc = effective_coupling(rho, pot, lam)
            xs = rng.uniform(-3, 3, size=100)
            assert np.max(np.abs(jc.j(xs) - (lam * xs - lam**2))) <= 1e-12

    def test_zero_snr(self):
        rho, pot = build_builtin("quartic")
        jc = effective_coupling(rho, pot, 0.0)
        xs = np.linspace(-1.5, 1.5, 7)
        assert np.max(np.abs(jc.j(xs))) == 0.0

    def test_negative_snr_rejected(self):
        rho, pot = build_builtin("quartic")
        with pytest.raises(SpectraError):
            effective_coupling(rho, pot, -0.1)

    def test_continuous_across_divided_difference_diagonal(self):
        rho, pot = build_builtin("quartic")
        jc = effective_coupling(rho, pot, 2.0)
        for d in rho.nodes[[50, 200, 350]]:
            left, right = jc.j(d - 1e-6), jc.j(d + 1e-6)
            assert abs(left - right) <= 1e-4
        # where J is steep the +/-1e-6 spread is slope-dominated; the jump
        # itself shows in the second difference
        for kind in ["quartic", "sestic"]:
            rho, pot = build_builtin(kind)
            jc = effective_coupling(rho, pot, 2.0)
            for d in rho.nodes[[50, 200, 350]]:
                left, mid, right = jc.j(d - 1e-6), jc.j(d), jc.j(d + 1e-6)
                assert abs(left + right - 2 * mid) <= 1e-6

    def test_quartic_against_trapezoid_oracle(self):
        # independent quadrature family: 1e4-point trapezoid in the arcsine variable
        rho, pot = build_builtin("quartic")
        lam, x = 2.0, 1.0
        g = 16.0 / 27.0
        edge = rho.support[1]
        theta = np.linspace(-np.pi / 2, np.pi / 2, 10_001)
        lam_nodes = edge * np.sin(theta)
        dens = rho.pdf(lam_nodes) * edge * np.cos(theta)
        dd = (g * x**3 - g * lam_nodes**3) / (x - lam_nodes)
        oracle = lam * g * x**3 - lam**2 * np.trapezoid(dens * dd, theta)
        assert effective_coupling(rho, pot, lam).j(x) == pytest.approx(oracle, abs=1e-6)


class TestPushforward:
    def test_zero_coupling_point_mass(self):
        rho, pot = build_builtin("quartic")
        law = pushforward_law(rho, effective_coupling(rho, pot, 0.0))
        assert law.edge_min == law.edge_max == 0.0
        assert abs(law.weights.sum() - 1.0) <= 1e-8

    def test_gaussian_affine_edges(self):
        rho, pot = build_builtin("semicircle")
        law = pushforward_law(rho, effective_coupling(rho, pot, 1.0))
        assert law.edge_min == pytest.approx(-3.0, abs=1e-6)
        assert law.edge_max == pytest.approx(1.0, abs=1e-6)

    def test_measure_preserved(self):
        rho, pot = build_builtin("quartic")
        law = pushforward_law(rho, effective_coupling(rho, pot, 2.0))
        assert abs(law.weights.sum() - 1.0) <= 1e-8


class TestRTransform:
    def test_semicircle_identity_law(self):
        rho = build_builtin_density("semicircle")
        law = PushforwardLaw(values=rho.nodes, weights=rho.weights,
                             edge_min=-2.0, edge_max=2.0)
        # R(s) = s for the semicircle
        assert r_transform(law, 0.5) == pytest.approx(0.5, abs=1e-10)

    def test_point_mass(self):
        law = PushforwardLaw(values=np.full(4, 1.7), weights=np.full(4, 0.25),
                             edge_min=1.7, edge_max=1.7)
        for s in [0.1, 0.5, 1.0]:
            assert r_transform(law, s) == pytest.approx(1.7, abs=1e-10)

    @pytest.mark.parametrize("lam", [0.5, 0.8])
    def test_gaussian_affine_rule(self, lam):
        rho, pot = build_builtin("semicircle")
        law = pushforward_law(rho, effective_coupling(rho, pot, lam))
        for s in np.arange(0.1, 1.05, 0.1):
            assert r_transform(law, s) == pytest.approx(lam**2 * s - lam**2, abs=1e-8)

    def test_out_of_range_raises_with_sup(self):
        rho, pot = build_builtin("semicircle")
        law = pushforward_law(rho, effective_coupling(rho, pot, 2.0))
        # invertible range tops out at g(edge+) = 1/lam = 0.5
        with pytest.raises(RTransformRangeError) as err:
            r_transform(law, 0.9)
        assert err.value.attainable_sup == pytest.approx(0.5, abs=0.01)
        assert r_transform(law, 0.4) == pytest.approx(4 * 0.4 - 4, abs=1e-8)

    def test_nonpositive_argument(self):
        rho = build_builtin_density("semicircle")
        law = PushforwardLaw(values=rho.nodes, weights=rho.weights,
                             edge_min=-2.0, edge_max=2.0)
        with pytest.raises(SpectraError):
            r_transform(law, 0.0)

    def test_inverse_consistency(self):
        # zeta = R(s) + 1/s must map back to s through the Stieltjes transform
        for kind, lam in [("semicircle", 0.7), ("quartic", 2.0), ("marchenko_pastur", 1.3)]:
            rho, pot = build_builtin(kind)
            std = standardize(rho) if abs(rho.mean) > 1e-9 else rho
            pot_std = transform_potential(pot, std) if std is not rho else pot
            law = pushforward_law(std, effective_coupling(std, pot_std, lam))
            for s in [0.1, 0.3, 0.6]:
                zeta = r_transform(law, s) + 1.0 / s
                g = np.sum(law.weights / (zeta - law.values))
                assert g == pytest.approx(s, abs=1e-10)


class TestSampling:
    def test_semicircle_variance(self):
        rho = build_builtin_density("semicircle")
        draws = sample_eigenvalues(rho, 10**5, seed=3)
        assert abs(draws.var() - 1.0) <= 0.02

    def test_determinism(self):
        rho = build_builtin_density("quartic")
        a = sample_eigenvalues(rho, 1000, seed=11)
        b = sample_eigenvalues(rho, 1000, seed=11)
        assert np.array_equal(a, b)

    def test_quartic_ks_distance(self):
        rho = build_builtin_density("quartic")
        draws = np.sort(sample_eigenvalues(rho, 10**5, seed=5))
        grid_cdf = np.cumsum(rho.weights)
        emp = np.searchsorted(draws, rho.nodes, side="right") / draws.size
        assert np.max(np.abs(emp - grid_cdf)) <= 0.01

    def test_zero_draws_rejected(self):
        rho = build_builtin_density("semicircle")
        with pytest.raises(SpectraError):
            sample_eigenvalues(rho, 0, seed=1)


class TestCsvRoundTrip:
    def test_export_import(self, tmp_path):
        rho = build_builtin_density("quartic")
        path = tmp_path / "density.csv"
        export_density_csv(rho, path)
        back = import_density_csv(path)
        assert back.support == pytest.approx(rho.support, rel=1e-12)
        assert np.allclose(back.nodes, rho.nodes)
        assert abs(back.weights.sum() - 1.0) <= 1e-8
        assert back.variance == pytest.approx(rho.variance, abs=1e-6)
