import json

import numpy as np
import pytest

from rbmlab import ensemble
from rbmlab.ensemble import EntryDistribution, SymmetryClass


class TestPeriodicDistance:
    def test_wraparound_of_extreme_sites(self):
        # first and last site of the cycle are adjacent
        assert ensemble.periodic_distance(0, 99, 100) == 1

    def test_identity(self):
        assert ensemble.periodic_distance(7, 7, 100) == 0

    def test_antipode(self):
        n = 100
        assert ensemble.periodic_distance(0, n // 2, n) == n // 2

    def test_vectorized(self):
        d = ensemble.periodic_distance(np.arange(8), np.zeros(8, dtype=int), 8)
        assert list(d) == [0, 1, 2, 3, 4, 3, 2, 1]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ensemble.periodic_distance(0, 8, 8)
        with pytest.raises(ValueError):
            ensemble.periodic_distance(-1, 0, 8)


class TestTranslationInvariant:
    def test_column_sums_exactly_one(self):
        with pytest.warns(UserWarning):
            p = ensemble.build_translation_invariant(8, 2, ensemble.power_decay(8.0))
        assert np.max(np.abs(p.entries.sum(axis=0) - 1.0)) <= 1e-12

    def test_translation_invariance_exact(self, small_profile):
        S = small_profile.entries
        rolled = np.roll(np.roll(S, 1, axis=0), 1, axis=1)
        assert np.array_equal(S, rolled)

    def test_entry_bound_constant(self, small_profile):
        p = small_profile
        assert p.entries.max() <= p.cw / p.W + 1e-15
        assert p.entries.max() * p.W == pytest.approx(p.cw)

    def test_negative_profile_rejected(self):
        with pytest.raises(ValueError):
            ensemble.build_translation_invariant(16, 4, lambda x: np.cos(3 * x),
                                                 zeta0=0.01)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            ensemble.build_translation_invariant(16, 4, lambda x: 0.0 * np.asarray(x),
                                                 zeta0=0.01)

    def test_bandwidth_warning_only(self):
        with pytest.warns(UserWarning, match="bandwidth condition"):
            ensemble.build_translation_invariant(100, 1, ensemble.power_decay(4.0))


class TestBlockBand:
    def test_nearest_neighbor_values(self, block_profile):
        p = block_profile
        W = p.W
        # within-block and adjacent-block entries are 1/(3W), others vanish
        assert p.entries[0, 0] == pytest.approx(1.0 / (3 * W))
        assert p.entries[0, W] == pytest.approx(1.0 / (3 * W))
        assert p.entries[0, p.N - 1] == pytest.approx(1.0 / (3 * W))  # periodic wrap
        assert p.entries[0, 3 * W] == 0.0

    def test_single_block_is_mean_field(self):
        p = ensemble.build_block_band(1, 12, np.array([[1.0]]))
        assert np.allclose(p.entries, 1.0 / 12)

    def test_column_sums_within_invariant(self, block_profile):
        assert np.max(np.abs(block_profile.entries.sum(axis=0) - 1.0)) <= 1e-12

    def test_non_stochastic_rejected(self):
        bad = np.full((4, 4), 0.3)
        with pytest.raises(ValueError):
            ensemble.build_block_band(4, 4, bad)

    def test_non_toeplitz_rejected(self):
        sigma = np.eye(4) * 0.6 + 0.1
        sigma[0, 1] = sigma[1, 0] = 0.2
        sigma = sigma / sigma.sum(axis=0, keepdims=True)
        sigma = (sigma + sigma.T) / 2
        with pytest.raises(ValueError):
            ensemble.build_block_band(4, 4, sigma)


class TestVerifyProfile:
    def test_good_profile_passes(self, block_profile):
        rep = ensemble.verify_profile(block_profile, zeta0=0.1)
        assert rep.all_passed

    def test_asymmetric_fails_symmetry(self):
        S = np.full((4, 4), 0.25)
        S[0, 1] += 1e-3
        p = ensemble.VarianceProfile(N=4, W=2, entries=S, kind="custom", cw=2.0)
        rep = ensemble.verify_profile(p)
        by_name = {c.name: c for c in rep.checks}
        assert not by_name["symmetry"].passed

    def test_narrow_band_fails_bandwidth(self):
        with pytest.warns(UserWarning):
            p = ensemble.build_translation_invariant(100, 1, ensemble.power_decay(4.0))
        rep = ensemble.verify_profile(p, zeta0=0.1)
        by_name = {c.name: c for c in rep.checks}
        assert not by_name["bandwidth_condition"].passed

    def test_decay_exponent_reported(self):
        with pytest.warns(UserWarning):
            p = ensemble.build_translation_invariant(512, 8, ensemble.power_decay(4.0),
                                                     zeta0=0.01)
        rep = ensemble.verify_profile(p)
        # f ~ x^-8 supports D = 6
        assert rep.empirical_decay_exponent == pytest.approx(6.0, abs=1.0)


class TestSampling:
    def test_exact_hermitian(self, small_profile):
        s = ensemble.sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                   EntryDistribution.GAUSSIAN, 3)
        assert np.array_equal(s.values, s.values.conj().T)
        assert np.max(np.abs(s.values.diagonal().imag)) == 0.0

    def test_exact_symmetric(self, small_profile):
        s = ensemble.sample_matrix(small_profile, SymmetryClass.REAL_SYMMETRIC,
                                   EntryDistribution.RADEMACHER, 3)
        assert np.array_equal(s.values, s.values.T)
        assert not np.iscomplexobj(s.values)

    def test_reproducible(self, small_profile):
        a = ensemble.sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                   EntryDistribution.UNIFORM, 77)
        b = ensemble.sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                   EntryDistribution.UNIFORM, 77)
        assert np.array_equal(a.values, b.values)
        c = ensemble.sample_matrix(small_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                   EntryDistribution.UNIFORM, 78)
        assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("dist", list(EntryDistribution))
    def test_second_moment_matches_profile(self, tiny_profile, dist):
        # Monte Carlo moment oracle: mean |H_ab|^2 over many seeds vs S_ab
        n = 10_000
        acc = np.zeros((tiny_profile.N, tiny_profile.N))
        for seed in range(n):
            s = ensemble.sample_matrix(tiny_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                       dist, seed)
            acc += np.abs(s.values) ** 2
        mean = acc / n
        # Var(|H|^2) <= E|H|^4 <= C * S^2; 5 standard errors with C ~ 3
        se = 3.0 * tiny_profile.entries / np.sqrt(n) + 1e-12
        assert np.all(np.abs(mean - tiny_profile.entries) <= 5.0 * se)

    def test_complex_pseudovariance_vanishes(self, tiny_profile):
        n = 10_000
        acc = np.zeros((tiny_profile.N, tiny_profile.N), dtype=complex)
        for seed in range(n):
            s = ensemble.sample_matrix(tiny_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                       EntryDistribution.GAUSSIAN, seed)
            acc += s.values**2
        mean = acc / n
        se = tiny_profile.entries / np.sqrt(n) + 1e-12
        off = ~np.eye(tiny_profile.N, dtype=bool)
        assert np.all(np.abs(mean[off]) <= 5.0 * se[off])

    def test_mean_vanishes(self, tiny_profile):
        n = 10_000
        acc = np.zeros((tiny_profile.N, tiny_profile.N))
        for seed in range(n):
            acc += ensemble.sample_matrix(tiny_profile, SymmetryClass.REAL_SYMMETRIC,
                                          EntryDistribution.UNIFORM, seed).values
        se = np.sqrt(tiny_profile.entries / n) + 1e-12
        assert np.all(np.abs(acc / n) <= 5.0 * se)


class TestSerialization:
    def test_profile_roundtrip_by_params(self, small_profile):
        p = ensemble.build_translation_invariant(64, 10, ensemble.power_decay(4.0),
                                                 params={"power": 4.0})
        p2 = ensemble.profile_from_json(ensemble.profile_to_json(p))
        assert np.array_equal(p2.entries, small_profile.entries)

    def test_profile_roundtrip_dense(self, block_profile):
        text = ensemble.profile_to_json(ensemble.VarianceProfile(
            N=block_profile.N, W=block_profile.W, entries=block_profile.entries.copy(),
            kind="custom", cw=block_profile.cw))
        p2 = ensemble.profile_from_json(text)
        assert np.array_equal(p2.entries, block_profile.entries)

    def test_block_roundtrip(self, block_profile):
        p2 = ensemble.profile_from_json(ensemble.profile_to_json(block_profile))
        assert np.array_equal(p2.entries, block_profile.entries)

    def test_csv_export(self, tiny_profile, tmp_path):
        s = ensemble.sample_matrix(tiny_profile, SymmetryClass.COMPLEX_HERMITIAN,
                                   EntryDistribution.GAUSSIAN, 5)
        path = tmp_path / "m.csv"
        ensemble.sample_to_csv(s, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == tiny_profile.N
        first = lines[0].split('","')[0].strip('"')
        re_str, im_str = first.split(",")
        assert complex(float(re_str), float(im_str)) == s.values[0, 0]
