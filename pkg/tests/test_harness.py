import json
import os

import numpy as np
import pytest

from rbmlab import harness
from rbmlab.errors import StatisticsError
from rbmlab.harness import (CSV_HEADER, ExperimentConfig, config_from_json,
                            config_to_json, emit_report, gap_ratios,
                            run_decay_profile, run_flow, run_identity_suite,
                            run_local_law, run_que, run_spacing,
                            run_traceless_scaling)


def tiny_config(**overrides):
    cfg = ExperimentConfig(profile={"kind": "translation_invariant", "N": 48,
                                    "W": 12, "params": {"power": 4.0}},
                           samples=4, seed=9, z_grid=[[0.5, 0.15]],
                           n_anchors=2, plots=False)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


class TestConfig:
    def test_json_roundtrip(self):
        cfg = tiny_config(samples=12, xi=0.3)
        again = config_from_json(config_to_json(cfg))
        assert again == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            config_from_json(json.dumps({"samplez": 3}))

    def test_defaults_mirror_spec_fields(self):
        cfg = ExperimentConfig()
        doc = json.loads(config_to_json(cfg))
        for key in ("profile", "symmetry", "distribution", "seed", "samples",
                    "z_grid", "n_tuples", "n_vectors", "K", "xi", "out"):
            assert key in doc


class TestIdentitySuite:
    def test_all_identities_pass(self):
        cfg = tiny_config()
        rep = run_identity_suite(cfg)
        assert rep.all_passed
        names = {r.name for r in rep.rows}
        assert {"dyson_residual", "sum_rule", "theta_norm_identity", "ward_identity",
                "m_cyclicity", "divided_difference", "propagator_composition",
                "theta_transport"} <= names


class TestEmission:
    def test_csv_header_and_rerun_bytes(self, tmp_path):
        cfg = tiny_config()
        rep = run_identity_suite(cfg)
        emit_report(rep, tmp_path, plots=False)
        path = tmp_path / "mcheck.csv"
        first = path.read_bytes()
        assert first.decode().splitlines()[0] == CSV_HEADER
        rep2 = run_identity_suite(tiny_config())
        emit_report(rep2, tmp_path, plots=False)
        assert path.read_bytes() == first

    def test_json_summary(self, tmp_path):
        rep = run_identity_suite(tiny_config())
        emit_report(rep, tmp_path, plots=False)
        doc = json.loads((tmp_path / "mcheck.json").read_text())
        assert doc["experiment"] == "mcheck"
        assert doc["all_passed"] is True
        assert all({"name", "measured", "bound", "passed"} <= set(r) for r in doc["rows"])

    def test_figures_rendered(self, tmp_path):
        rep = run_identity_suite(tiny_config())
        written = emit_report(rep, tmp_path, plots=True)
        pngs = [w for w in written if w.endswith(".png")]
        assert pngs and all(os.path.getsize(w) > 0 for w in pngs)


class TestLocalLawSmoke:
    def test_rows_and_series(self):
        cfg = tiny_config(samples=3)
        rep = run_local_law(cfg)
        names = [r.name for r in rep.rows]
        for k in (1, 2, 3):
            assert f"psi_av_k{k}" in names and f"psi_iso_k{k}" in names
        assert "law1_trace_abs" in names and "iso1_quantile" in names
        assert all(np.isfinite(r.measured) for r in rep.rows)

    def test_deterministic_rows(self):
        a = run_local_law(tiny_config(samples=3))
        b = run_local_law(tiny_config(samples=3))
        assert [(r.name, r.measured) for r in a.rows] == \
               [(r.name, r.measured) for r in b.rows]

    def test_psi_rows_streamed(self, tmp_path):
        rep = run_local_law(tiny_config(samples=3))
        emit_report(rep, tmp_path, plots=False)
        lines = (tmp_path / "locallaw_psi_rows.csv").read_text().splitlines()
        assert lines[0] == "seed,k,kind,tuple,value,psi"
        # one record per (sample, k, kind) at one z point
        assert len(lines) - 1 == 3 * 6
        assert all(len(line.split(",")) == 6 for line in lines[1:])


class TestDecaySmoke:
    def test_localized_rows(self):
        cfg = tiny_config(samples=6, z_grid=[[0.5, 0.3]])
        rep = run_decay_profile(cfg)
        names = {r.name for r in rep.rows}
        assert {"ratio_within_ell", "ratio_within_2ell", "tail_beyond_4ell",
                "peak_vs_upsilon_max"} <= names

    @pytest.mark.filterwarnings("ignore:bandwidth condition")
    def test_meaningful_tail_when_window_exists(self):
        # W = 6, eta = 0.4 gives ell ~ 9.5, so 4*ell < N/2 and the tail is real
        cfg = ExperimentConfig(profile={"kind": "translation_invariant", "N": 96,
                                        "W": 6, "params": {"power": 4.0}},
                               samples=20, seed=3, z_grid=[[0.2, 0.4]], plots=False)
        rep = run_decay_profile(cfg)
        tail = next(r for r in rep.rows if r.name == "tail_beyond_4ell")
        assert 0.0 < tail.measured <= tail.bound

    def test_delocalized_branch(self):
        cfg = tiny_config(samples=6, z_grid=[[0.5, 0.005]])  # below (12/48)^2
        rep = run_decay_profile(cfg)
        assert any(r.name == "deloc_flat_ratio" for r in rep.rows)


class TestQueSmoke:
    def test_two_bandwidths(self):
        cfg = ExperimentConfig(profile={"kind": "translation_invariant", "N": 96,
                                        "W": 16, "params": {"power": 4.0}},
                               samples=6, seed=2, w_values=[16, 32],
                               symmetry="real_symmetric", plots=False)
        rep = run_que(cfg)
        names = {r.name for r in rep.rows}
        assert {"que_diag_overlap_W16", "que_diag_overlap_W32", "deloc_coord_W16",
                "que_w_ratio_min", "que_w_ratio_max"} <= names


class TestTracelessSmoke:
    def test_exponent_rows(self):
        cfg = ExperimentConfig(profile={"kind": "translation_invariant", "N": 128,
                                        "W": 48, "params": {"power": 4.0}},
                               samples=4, seed=2, plots=False,
                               eta_grid=np.geomspace(0.02, 0.12, 5).tolist())
        rep = run_traceless_scaling(cfg)
        names = {r.name for r in rep.rows}
        assert {"traceless_m_exponent_min", "traceless_m_exponent_max",
                "traceless_fluct_exponent_min", "fluct_below_m_by_inv_Neta"} <= names

    def test_grid_window_validated(self):
        cfg = tiny_config(eta_grid=[0.5])  # above (W/N)^2 = 0.0625
        with pytest.raises(ValueError, match="eta grid"):
            run_traceless_scaling(cfg)


class TestSpacing:
    def test_gap_ratio_affine_invariance(self, rng):
        eigs = np.sort(rng.standard_normal(300))
        base = gap_ratios(eigs)
        scaled = gap_ratios(3.7 * eigs - 11.0)
        assert np.max(np.abs(base - scaled)) <= 1e-12
        assert np.all((base >= 0) & (base <= 1))

    def test_too_few_gaps_raises(self):
        cfg = tiny_config(samples=2)
        with pytest.raises(StatisticsError):
            run_spacing(cfg)

    def test_same_symmetry_ks_small_cross_large(self):
        cfg = ExperimentConfig(profile={"kind": "translation_invariant", "N": 144,
                                        "W": 24, "params": {"power": 4.0}},
                               samples=40, seed=11, plots=False,
                               reference_symmetry="real_symmetric",
                               ks_threshold=0.08)
        rep = run_spacing(cfg)
        same = next(r for r in rep.rows if r.name == "spacing_ks_same_symmetry")
        cross = next(r for r in rep.rows if r.name == "spacing_ks_cross_symmetry")
        assert same.measured < cross.measured
        assert cross.measured >= 0.1


class TestFlowRun:
    def test_flow_report_and_trace_csv(self, tmp_path):
        cfg = tiny_config(samples=3, flow_T=0.5, flow_steps=3, z_grid=[[0.5, 0.2]])
        rep = run_flow(cfg)
        assert any(r.name == "eta_strictly_decreasing" and r.passed for r in rep.rows)
        emit_report(rep, tmp_path, plots=False)
        trace = (tmp_path / "flow_trace.csv").read_text().splitlines()
        assert trace[0] == "t,re_z,im_z,eta,ell,psi_av,psi_iso"
        assert len(trace) == 4
