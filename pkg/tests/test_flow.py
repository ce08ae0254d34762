import numpy as np
import pytest
from scipy.linalg import expm

from rbmlab.ensemble import (EntryDistribution, SymmetryClass, build_flat_profile,
                             build_translation_invariant, power_decay, sample_matrix)
from rbmlab.errors import NumericalError
from rbmlab.flow import (Trajectory, _rk4_step, check_theta_ode, flow_psi_trace,
                         ou_evolve, solve_characteristic)
from rbmlab.kernels import saturated_propagator, two_point_kernel
from rbmlab.semicircle import spectral_point, stieltjes_m


def closed_form_m(z_T, T, t):
    """Exact flow oracle: m satisfies dm/dt = m/2, so m_t = m_T e^{(t-T)/2}."""
    return stieltjes_m(z_T) * np.exp((t - T) / 2.0)


class TestCharacteristic:
    def test_m_propagation_against_closed_form(self):
        z_T, T = 0.4 + 0.03j, 1.2
        traj = solve_characteristic(z_T, T, N=400, W=40)
        for t in (0.0, 0.37, 0.8, 1.2):
            m_num = stieltjes_m(traj.z_at(t))
            assert abs(m_num - closed_form_m(z_T, T, t)) <= 1e-8

    def test_phase_invariant(self):
        traj = solve_characteristic(0.4 + 0.03j, 1.0, N=400, W=40)
        phases = [stieltjes_m(z) / abs(stieltjes_m(z)) for z in traj.zs[::100]]
        assert max(abs(ph - phases[0]) for ph in phases) <= 1e-10

    def test_backward_forward_roundtrip(self):
        z_T, T = -0.7 + 0.05j, 1.0
        traj = solve_characteristic(z_T, T, N=400, W=40)
        z = complex(traj.zs[0])
        h = traj.times[1] - traj.times[0]
        for _ in range(len(traj.times) - 1):
            z = _rk4_step(z, h)
        assert abs(z - z_T) <= 1e-8

    def test_eta_strictly_decreasing_and_initial_order_one(self):
        traj = solve_characteristic(0.4 + 0.02j, 1.2, N=400, W=40)
        etas = traj.etas()
        assert np.all(np.diff(etas) < 0)
        assert etas[0] >= 1.0

    def test_eta_linear_rate(self):
        # eta_t - eta_T ~ (T - t) with order-one implicit constants in the bulk
        z_T, T = 0.4 + 0.02j, 1.0
        traj = solve_characteristic(z_T, T, N=400, W=40)
        for t in (0.0, 0.5):
            ratio = (abs(traj.z_at(t).imag) - 0.02) / (T - t)
            assert 0.3 <= ratio <= 3.0

    def test_critical_time_located(self):
        N, W = 400, 40
        crit = (W / N) ** 2  # 0.01
        traj = solve_characteristic(0.5 + 0.004j, 1.0, N=N, W=W)
        assert traj.t_star is not None
        assert abs(abs(traj.z_at(traj.t_star).imag) - crit) <= 1e-6

    def test_no_crossing_means_no_t_star(self):
        traj = solve_characteristic(0.5 + 0.2j, 0.5, N=400, W=40)
        assert traj.t_star is None

    def test_step_cap_enforced(self):
        with pytest.raises(ValueError):
            solve_characteristic(0.5 + 0.1j, 1.0, step=0.01, N=400, W=40)

    def test_chain_points_patterns(self):
        traj = solve_characteristic(0.5 + 0.05j, 1.0, N=400, W=40)
        points = traj.chain_points(["z", "zbar"])(0.5)
        assert points[1].z == np.conj(points[0].z)
        with pytest.raises(ValueError):
            traj.chain_points(["z", "w"])


class TestOrnsteinUhlenbeck:
    def test_zero_time_identity(self, small_profile):
        s = sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                          EntryDistribution.RADEMACHER, 1)
        out = ou_evolve(s, 0.0, 99)
        assert np.array_equal(out.values, s.values)

    def test_deterministic(self, small_profile):
        s = sample_matrix(small_profile, SymmetryClass.REAL_SYMMETRIC,
                          EntryDistribution.GAUSSIAN, 1)
        a = ou_evolve(s, 0.4, 7).values
        b = ou_evolve(s, 0.4, 7).values
        assert np.array_equal(a, b)
        c = ou_evolve(s, 0.4, 8).values
        assert not np.array_equal(a, c)

    def test_hermitian_preserved(self, small_profile):
        s = sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                          EntryDistribution.GAUSSIAN, 1)
        out = ou_evolve(s, 0.8, 5)
        assert np.array_equal(out.values, out.values.conj().T)

    def test_first_two_moments_preserved(self, tiny_profile):
        n, dt = 10_000, 0.7
        acc_mean = np.zeros((tiny_profile.N, tiny_profile.N))
        acc_sq = np.zeros((tiny_profile.N, tiny_profile.N))
        for seed in range(n):
            s = sample_matrix(tiny_profile, SymmetryClass.REAL_SYMMETRIC,
                              EntryDistribution.UNIFORM, seed)
            H = ou_evolve(s, dt, 100_000 + seed).values
            acc_mean += H
            acc_sq += H * H
        S = tiny_profile.entries
        se_mean = np.sqrt(S / n) + 1e-12
        assert np.max(np.abs(acc_mean / n) / se_mean) <= 5.0
        se_sq = 3.0 * S / np.sqrt(n) + 1e-12
        assert np.max(np.abs(acc_sq / n - S) / se_sq) <= 5.0

    def test_long_time_limit_is_gaussian(self, tiny_profile):
        # rademacher start has E h^4 = 1; the Gaussian limit has E h^4 = 3
        n, dt = 4000, 50.0
        vals = []
        for seed in range(n):
            s = sample_matrix(tiny_profile, SymmetryClass.REAL_SYMMETRIC,
                              EntryDistribution.RADEMACHER, seed)
            vals.append(ou_evolve(s, dt, 5_000_000 + seed).h[0, 1])
        vals = np.asarray(vals)
        fourth = np.mean(vals**4)
        se = np.std(vals**4, ddof=1) / np.sqrt(n)
        assert abs(fourth - 3.0) <= 5.0 * se

    def test_negative_dt_rejected(self, small_profile):
        s = sample_matrix(small_profile, SymmetryClass.REAL_SYMMETRIC,
                          EntryDistribution.GAUSSIAN, 1)
        with pytest.raises(ValueError):
            ou_evolve(s, -0.1, 1)


class TestThetaOde:
    def test_richardson_order(self, small_profile):
        traj = solve_characteristic(0.5 + 0.05j, 1.0, N=small_profile.N,
                                    W=small_profile.W)
        r1 = check_theta_ode(small_profile, traj, 0.5, 2e-2)
        r2 = check_theta_ode(small_profile, traj, 0.5, 1e-2)
        assert 3.5 <= r1 / r2 <= 4.5

    def test_xi_variant(self, small_profile):
        traj = solve_characteristic(0.5 + 0.05j, 1.0, N=small_profile.N,
                                    W=small_profile.W)
        r1 = check_theta_ode(small_profile, traj, 0.5, 2e-2, kind="xi")
        r2 = check_theta_ode(small_profile, traj, 0.5, 1e-2, kind="xi")
        assert 3.5 <= r1 / r2 <= 4.5

    def test_scalar_wigner_reduction(self):
        # flat profile: Theta = theta * J/N with theta = |m|^2/(1-|m|^2), and
        # the closed-form flow oracle gives theta' = (1+theta)theta exactly
        z_T, T, t, h = 0.3 + 0.1j, 1.0, 0.5, 1e-5

        def theta_at(s):
            m = closed_form_m(z_T, T, s)
            return abs(m) ** 2 / (1.0 - abs(m) ** 2)

        fd = (theta_at(t + h) - theta_at(t - h)) / (2 * h)
        th = theta_at(t)
        assert abs(fd - (1.0 + th) * th) <= 1e-6 * abs(fd)
        # and the matrix path on the flat profile agrees
        p = build_flat_profile(16)
        traj = solve_characteristic(z_T, T, N=16, W=16)
        assert check_theta_ode(p, traj, t, 1e-2) <= 1e-3


class TestPropagatorConsistency:
    def test_exponential_integral_matches_closed_form(self):
        # numerically integrate (I + Theta_r) dr by Simpson, exponentiate,
        # compare with the rational closed form
        p = build_translation_invariant(32, 8, power_decay(4.0))
        traj = solve_characteristic(0.4 + 0.1j, 0.8, N=32, W=8)
        s, t = 0.3, 0.7
        grid = np.linspace(s, t, 97)
        acc = np.zeros((32, 32))
        for i, r in enumerate(grid):
            pt = traj.point_at(float(r))
            th = two_point_kernel(p, pt, pt, "theta").values
            weight = 1.0 if i in (0, len(grid) - 1) else (4.0 if i % 2 else 2.0)
            acc = acc + weight * (np.eye(32) + th)
        acc *= (t - s) / (3.0 * (len(grid) - 1))
        P_int = expm(acc)
        P = saturated_propagator(p, traj.point_at(s), traj.point_at(t))
        assert np.max(np.abs(P_int - P)) <= 1e-6


class TestFlowPsiTrace:
    def test_rows_structure_and_monotone_eta(self, tiny_profile):
        rows = flow_psi_trace(tiny_profile, 0.5 + 0.2j, T=0.6, n_steps=4, batch=3,
                              seed=5, k=2)
        assert len(rows) == 4
        etas = [r["eta"] for r in rows]
        assert all(a > b for a, b in zip(etas, etas[1:]))
        assert all(np.isfinite(r["psi_av"]) and r["psi_av"] >= 0 for r in rows)
        assert all(np.isfinite(r["psi_iso"]) for r in rows)
