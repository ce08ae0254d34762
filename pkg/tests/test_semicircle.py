import numpy as np
import pytest
from scipy.integrate import quad

from rbmlab import semicircle as sc


def fixed_point_m(z, tol=1e-14, max_iter=100000):
    """Independent oracle: iterate m <- -1/(z + m) to a fixed point."""
    m = -1.0 / z
    for _ in range(max_iter):
        m_new = -1.0 / (z + m)
        if abs(m_new - m) < tol:
            return m_new
        m = m_new
    raise AssertionError("fixed point iteration did not converge")


class TestStieltjes:
    def test_value_at_i_matches_iteration_oracle(self):
        m = sc.stieltjes_m(1j)
        assert abs(m - fixed_point_m(1j)) < 1e-13
        # golden-ratio imaginary part, frozen from the oracle
        assert abs(m - 0.6180339887498949j) < 1e-12

    @pytest.mark.parametrize("z", [1j, 0.5 + 0.1j, -1.3 + 0.02j, 1.9 - 0.5j,
                                   0.3 - 2.7j, 3.0 + 0.0j, -5.2 + 0.0j])
    def test_defining_equation(self, z):
        m = sc.stieltjes_m(z)
        assert abs(-1.0 / m - z - m) <= 1e-12

    @pytest.mark.parametrize("z", [0.5 + 0.1j, -1.0 + 1e-6j, 1.99 + 0.3j])
    def test_branch_sign_and_modulus(self, z):
        m = sc.stieltjes_m(z)
        assert m.imag * z.imag > 0
        assert abs(m) < 1.0

    def test_real_segment_rejected(self):
        with pytest.raises(ValueError):
            sc.stieltjes_m(0.7)
        with pytest.raises(ValueError):
            sc.stieltjes_m(-2.0)

    def test_conjugate_symmetry(self):
        for z in [0.4 + 0.2j, -1.1 + 0.7j, 1j]:
            assert abs(sc.stieltjes_m(np.conj(z)) - np.conj(sc.stieltjes_m(z))) < 1e-14

    def test_eta_bound_constants(self):
        # c*eta <= 1 - |m|^2 <= C*eta on a bulk grid with eta <= 1
        etas = np.geomspace(1e-4, 1.0, 25)
        ratios = []
        for E in (-1.5, -0.4, 0.0, 0.9, 1.7):
            for eta in etas:
                m = sc.stieltjes_m(complex(E, eta))
                ratios.append((1.0 - abs(m) ** 2) / eta)
        ratios = np.array(ratios)
        assert ratios.min() > 0.1
        assert ratios.max() < 25.0

    def test_branch_continuity_along_eta_path(self):
        etas = np.geomspace(1e-5, 2.0, 4000)
        ms = np.array([sc.stieltjes_m(complex(0.7, eta)) for eta in etas])
        assert np.max(np.abs(np.diff(ms))) < 0.02


class TestDensity:
    def test_center_value(self):
        assert abs(sc.semicircle_density(0.0) - 1.0 / np.pi) < 1e-15

    def test_edges_and_outside(self):
        assert sc.semicircle_density(2.0) == 0.0
        assert sc.semicircle_density(-2.0) == 0.0
        assert sc.semicircle_density(3.7) == 0.0

    def test_quadrature_normalization(self):
        total, err = quad(sc.semicircle_density, -2.0, 2.0, limit=200)
        assert err < 1e-9
        assert abs(total - 1.0) <= 1e-8


class TestBulkDomain:
    def test_generic_bulk_point(self):
        # |(m/|m|)^2 - 1| evaluated numerically is far above kappa here
        assert sc.in_bulk_domain(0.5 + 0.1j, 0.1, 0.1, 10.0, 400)

    def test_eta_below_floor(self):
        # threshold N^(-0.9) ~ 4.5e-3 at N = 400
        assert not sc.in_bulk_domain(0.5 + 1e-9j, 0.1, 0.1, 10.0, 400)
        assert sc.in_bulk_domain(0.5 + 5e-3j, 0.1, 0.1, 10.0, 400)

    def test_magnitude_cap(self):
        assert not sc.in_bulk_domain(20.0 + 1.0j, 0.1, 0.1, 10.0, 400)

    def test_near_edge_phase_criterion(self):
        # just outside the edge with tiny eta the phase of m approaches +-1
        assert not sc.in_bulk_domain(2.0 + 1e-4j, 0.5, 0.1, 10.0, 400)


class TestSpectralPoint:
    def test_cached_fields(self):
        pt = sc.spectral_point(0.5 + 0.05j, 400, 40)
        assert abs(-1.0 / pt.m - pt.z - pt.m) <= 1e-12
        assert pt.eta == 0.05
        assert pt.ell == pytest.approx(min(40 / np.sqrt(0.05), 400))

    def test_conj(self):
        pt = sc.spectral_point(0.5 + 0.05j, 400, 40)
        q = pt.conj()
        assert q.z == np.conj(pt.z)
        assert q.m == np.conj(pt.m)
        assert q.ell == pt.ell

    def test_real_axis_rejected(self):
        with pytest.raises(ValueError):
            sc.spectral_point(0.5, 400, 40)


class TestLocalizationLength:
    def test_direct_values(self):
        # min(40/sqrt(0.05), 400) = 178.885...; 40/sqrt(0.0025) = 800 caps at N
        assert sc.localization_length(40, 400, 0.05) == pytest.approx(178.88543819998318)
        assert sc.localization_length(40, 400, 0.0025) == 400.0

    def test_monotone_in_eta(self):
        etas = np.geomspace(1e-4, 4.0, 40)
        ells = [sc.localization_length(40, 400, e) for e in etas]
        assert all(a >= b for a, b in zip(ells, ells[1:]))

    def test_positive_eta_required(self):
        with pytest.raises(ValueError):
            sc.localization_length(40, 400, 0.0)
