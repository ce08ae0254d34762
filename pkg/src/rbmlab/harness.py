"""Monte Carlo experiments and reproducible reports.

Every experiment is a pure function of its configuration: per-trial seeds
are derived from the master seed by trial index, all maxima over sites and
test vectors are taken over seeded subsamples, and rerunning a config
reproduces the report byte for byte.  Reports are emitted as one CSV row
per check plus a JSON summary, with matplotlib figures rendered next to
them.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import ks_2samp

from .errors import StatisticsError
from .ensemble import (EntryDistribution, SymmetryClass, VarianceProfile,
                       build_flat_profile, build_profile, sample_matrix,
                       _site_distance_matrix)
from .chains import PsiSampler, batched_trace_k2, eigendecompose, loss_exponents
from .kernels import (fitted_upsilon, saturated_propagator, triple_norm,
                      two_point_kernel, upsilon_build)
from .mterms import (ChainSpec, SpecialChainMTerms, StabilityCache, DiagObservable,
                     check_cyclicity, check_divided_difference, identity_observable,
                     m_chain, make_special_observable, traceless_part)
from .semicircle import spectral_point, stieltjes_m

__all__ = [
    "ExperimentConfig",
    "CheckRow",
    "Report",
    "config_from_json",
    "config_to_json",
    "gap_ratios",
    "run_identity_suite",
    "run_local_law",
    "run_decay_profile",
    "run_que",
    "run_traceless_scaling",
    "run_spacing",
    "run_flow",
    "emit_report",
]


@dataclass
class ExperimentConfig:
    """Shared configuration of the Monte Carlo experiments (JSON-mirrored)."""

    profile: dict = field(default_factory=lambda: {
        "kind": "translation_invariant", "N": 400, "W": 40, "params": {"power": 4.0}})
    symmetry: str = "complex_hermitian"
    distribution: str = "gaussian"
    seed: int = 1
    samples: int = 100
    z_grid: list = field(default_factory=lambda: [[0.5, 0.05]])
    n_tuples: int = 64
    n_vectors: int = 4
    n_anchors: int = 2
    K: int = 8
    xi: float = 0.25
    kappa: float = 0.1
    delta0: float = 0.1
    ks: list = field(default_factory=lambda: [1, 2, 3])
    ups_family: str = "exponential"
    ups_D: float = 6.0
    ups_c0: float = 1.0
    ups_fitted: bool = True
    law1_margin: float = 10.0
    iso1_xi: float = 0.35
    iso1_quantile: float = 0.99
    decay_margin: float = 2.0
    decay_margin_2ell: float = 4.0
    decay_tail: float = 0.1
    peak_margin: float = 3.0
    eta_grid: Optional[list] = None
    w_values: Optional[list] = None
    que_margin: float = 3.0
    que_xi: float = 0.3
    que_ratio_window: list = field(default_factory=lambda: [1.4, 2.8])
    reference_symmetry: str = ""
    bulk_fraction: float = 0.5
    ks_threshold: float = 0.05
    ks_cross_min: float = 0.1
    traceless_tol: float = 0.2
    traceless_fluct_tol: float = 0.5
    traceless_gap_margin: float = 10.0
    flow_T: float = 1.0
    flow_steps: int = 6
    out: str = "out"
    plots: bool = True

    def build_profile(self) -> VarianceProfile:
        return build_profile(self.profile)

    def symmetry_class(self) -> SymmetryClass:
        return SymmetryClass(self.symmetry)

    def distribution_kind(self) -> EntryDistribution:
        return EntryDistribution(self.distribution)

    def zs(self) -> list:
        return [complex(re, im) for re, im in self.z_grid]


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def config_from_json(text: str) -> ExperimentConfig:
    doc = json.loads(text)
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**doc)


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


@dataclass
class CheckRow:
    name: str
    measured: float
    bound: float
    passed: bool
    eta: float = float("nan")


@dataclass
class Report:
    experiment: str
    rows: list
    env: dict
    series: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def _env(cfg: ExperimentConfig, p: VarianceProfile) -> dict:
    return {"seed": cfg.seed, "N": p.N, "W": p.W, "symmetry": cfg.symmetry,
            "distribution": cfg.distribution, "samples": cfg.samples}


def _le_row(name, measured, bound, eta=float("nan")) -> CheckRow:
    return CheckRow(name, float(measured), float(bound), bool(measured <= bound), float(eta))


def _ge_row(name, measured, bound, eta=float("nan")) -> CheckRow:
    return CheckRow(name, float(measured), float(bound), bool(measured >= bound), float(eta))


# ---------------------------------------------------------------------------
# deterministic identity suite (the `mcheck` subcommand)
# ---------------------------------------------------------------------------

def run_identity_suite(cfg: ExperimentConfig) -> Report:
    """Exact algebraic identities at machine-level tolerances; deterministic."""
    p = cfg.build_profile()
    N, W = p.N, p.W
    rng = np.random.default_rng(cfg.seed)
    rows = []

    zs = [complex(0.5, 0.8), complex(-0.3, 0.35), complex(1.1, 1.5), complex(0.0, 0.5)]
    pts = [spectral_point(z, N, W) for z in zs]

    rows.append(_le_row("dyson_residual",
                        max(abs(-1.0 / pt.m - pt.z - pt.m) for pt in pts), 1e-12))

    sum_res, norm_res = 0.0, 0.0
    for pt in pts:
        th = two_point_kernel(p, pt, pt, "theta").values
        target = pt.m.imag / pt.z.imag
        sum_res = max(sum_res, float(np.max(np.abs(th.sum(axis=0) - target)) / abs(target)))
        lam = float(np.linalg.eigvalsh(th)[-1])
        norm_res = max(norm_res, abs(lam - target) / abs(target))
    for z1, z2 in [(pts[0], pts[1]), (pts[2], pts[0])]:
        th = two_point_kernel(p, z1, z2, "theta").values
        w = z1.m * np.conj(z2.m)
        target = w / (1.0 - w)
        sum_res = max(sum_res, float(np.max(np.abs(th.sum(axis=0) - target)) / abs(target)))
    rows.append(_le_row("sum_rule", sum_res, 1e-10))
    rows.append(_le_row("theta_norm_identity", norm_res, 1e-8))

    s = sample_matrix(p, cfg.symmetry_class(), cfg.distribution_kind(), cfg.seed)
    cache = eigendecompose(s)
    pt = pts[0]
    G = cache.resolvent(pt.z)
    lhs = float(np.sum(np.abs(G) ** 2))
    rhs = float(np.trace(G).imag / pt.z.imag)
    rows.append(_le_row("ward_identity", abs(lhs - rhs) / abs(rhs), 1e-9))

    def random_chain(k, identity_slot=None):
        points = tuple(rng.choice(pts) if rng.random() < 0.5 else rng.choice(pts).conj()
                       for _ in range(k))
        obs = []
        for j in range(k - 1):
            if j == identity_slot:
                obs.append(identity_observable(N))
            else:
                obs.append(DiagObservable(diag=rng.standard_normal(N)))
        test = DiagObservable(diag=rng.standard_normal(N))
        return ChainSpec(points=points, observables=tuple(obs), test_observable=test)

    cyc = max(check_cyclicity(p, random_chain(k)) for k in (2, 3, 4, 5) for _ in range(3))
    rows.append(_le_row("m_cyclicity", cyc, 1e-9))

    dd = 0.0
    for k in (2, 3, 4, 5):
        j = int(rng.integers(0, k - 1))
        c = random_chain(k, identity_slot=j)
        if abs(c.points[j].z - c.points[j + 1].z) < 1e-6:
            c = ChainSpec(points=c.points[:j + 1] + (pts[2],) + c.points[j + 2:],
                          observables=c.observables, test_observable=c.test_observable)
        dd = max(dd, check_divided_difference(p, c, j))
    rows.append(_le_row("divided_difference", dd, 1e-9))

    from .flow import solve_characteristic
    traj = solve_characteristic(complex(0.4, 0.05), T=1.0, N=N, W=W)
    p_s, p_r, p_t = (traj.point_at(t) for t in (0.2, 0.6, 1.0))
    P_sr = saturated_propagator(p, p_s, p_r)
    P_rt = saturated_propagator(p, p_r, p_t)
    P_st = saturated_propagator(p, p_s, p_t)
    comp = float(np.max(np.abs(P_sr @ P_rt - P_st)) / np.max(np.abs(P_st)))
    rows.append(_le_row("propagator_composition", comp, 1e-9))
    th_s = two_point_kernel(p, p_s, p_s, "theta").values
    th_t = two_point_kernel(p, p_t, p_t, "theta").values
    transport = float(np.max(np.abs(P_st @ th_s - th_t)) / np.max(np.abs(th_t)))
    rows.append(_le_row("theta_transport", transport, 1e-9))

    return Report("mcheck", rows, _env(cfg, p),
                  series={"residuals": {r.name: r.measured for r in rows}})


# ---------------------------------------------------------------------------
# local laws
# ---------------------------------------------------------------------------

def _control_function(cfg: ExperimentConfig, p: VarianceProfile, pt):
    if cfg.ups_fitted:
        return fitted_upsilon(p, pt, family=cfg.ups_family, D=cfg.ups_D, c0=cfg.ups_c0)
    return upsilon_build(p.N, p.W, pt.eta, family=cfg.ups_family, D=cfg.ups_D,
                         c0=cfg.ups_c0)


def run_local_law(cfg: ExperimentConfig) -> Report:
    """Psi boundedness over the z-grid, on seeded subsampled chain tuples."""
    p = cfg.build_profile()
    sym, dist = cfg.symmetry_class(), cfg.distribution_kind()
    ks = tuple(cfg.ks)
    bound = p.N ** cfg.xi
    rows, series = [], {"eta": [], "psi": []}
    pts = [spectral_point(z, p.N, p.W) for z in cfg.zs()]
    upss = {pt.z: _control_function(cfg, p, pt) for pt in pts}
    samplers = {pt.z: PsiSampler(p, pt, upss[pt.z], cfg.K, ks=ks,
                                 n_tuples=cfg.n_tuples, seed=cfg.seed)
                for pt in pts}
    agg = {(pt.z, k, kind): 0.0 for pt in pts for k in ks for kind in ("av", "iso")}
    law1 = {pt.z: 0.0 for pt in pts}
    iso1_ok = {pt.z: 0 for pt in pts}
    psi_records = []
    for i in range(cfg.samples):
        seed_i = cfg.seed + i
        s = sample_matrix(p, sym, dist, seed_i)
        cache = eigendecompose(s)
        for pt in pts:
            G = cache.resolvent(pt.z)
            stats = samplers[pt.z].measure(G, detail=True)
            for rec in stats["records"]:
                psi_records.append(dict(rec, seed=seed_i))
            for k in ks:
                for kind in ("av", "iso"):
                    agg[(pt.z, k, kind)] = max(agg[(pt.z, k, kind)], stats[(k, kind)])
            law1[pt.z] = max(law1[pt.z], stats["law1_abs"])
            dev = np.max(np.abs(G - pt.m * np.eye(p.N)) / np.sqrt(upss[pt.z].values))
            if dev <= p.N ** cfg.iso1_xi:
                iso1_ok[pt.z] += 1
    for pt in pts:
        for k in ks:
            for kind in ("av", "iso"):
                rows.append(_le_row(f"psi_{kind}_k{k}", agg[(pt.z, k, kind)], bound, pt.eta))
                series["eta"].append(pt.eta)
                series["psi"].append([f"{kind}{k}", agg[(pt.z, k, kind)]])
        rows.append(_le_row("law1_trace_abs", law1[pt.z],
                            cfg.law1_margin / upss[pt.z].ell_eta, pt.eta))
        rows.append(_ge_row("iso1_quantile", iso1_ok[pt.z] / cfg.samples,
                            cfg.iso1_quantile, pt.eta))
    series["bound"] = bound
    series["psi_records"] = psi_records
    return Report("locallaw", rows, _env(cfg, p), series)


# ---------------------------------------------------------------------------
# spatial decay profile
# ---------------------------------------------------------------------------

def run_decay_profile(cfg: ExperimentConfig) -> Report:
    """Smoothed E|G|^2 against the two-point kernel, by periodic distance."""
    p = cfg.build_profile()
    z = cfg.zs()[0]
    pt = spectral_point(z, p.N, p.W)
    crit = (p.W / p.N) ** 2
    delocalized = pt.eta <= crit
    acc = np.zeros((p.N, p.N))
    for i in range(cfg.samples):
        s = sample_matrix(p, cfg.symmetry_class(), cfg.distribution_kind(), cfg.seed + i)
        G = eigendecompose(s).resolvent(pt.z)
        acc += np.abs(G) ** 2
    smooth = p.entries @ (acc / cfg.samples)
    theta = two_point_kernel(p, pt, pt, "theta").values
    d = _site_distance_matrix(p.N)
    ell = pt.ell
    rows = []
    if delocalized:
        flat = pt.m.imag / (p.N * pt.eta)
        ratio = np.maximum(smooth / flat, flat / smooth)
        rows.append(_le_row("deloc_flat_ratio", float(ratio.max()), cfg.decay_margin, pt.eta))
    else:
        ratio = np.maximum(smooth / theta, theta / smooth)
        rows.append(_le_row("ratio_within_ell",
                            float(ratio[d <= ell].max()), cfg.decay_margin, pt.eta))
        rows.append(_le_row("ratio_within_2ell",
                            float(ratio[d <= 2 * ell].max()), cfg.decay_margin_2ell, pt.eta))
        tail_mask = d >= 4 * ell
        tail = float(smooth[tail_mask].max() / smooth.max()) if tail_mask.any() else 0.0
        rows.append(_le_row("tail_beyond_4ell", tail, cfg.decay_tail, pt.eta))
    rows.append(_le_row("peak_vs_upsilon_max",
                        float(smooth.max() * pt.ell_eta), cfg.peak_margin, pt.eta))

    prof_by_dist = np.array([smooth[d == r].mean() for r in range(p.N // 2 + 1)])
    theta_by_dist = np.array([theta[d == r].mean() for r in range(p.N // 2 + 1)])
    series = {"distance": list(range(p.N // 2 + 1)),
              "profile": prof_by_dist.tolist(), "theta": theta_by_dist.tolist(),
              "ell": ell}
    return Report("decay", rows, _env(cfg, p), series)


# ---------------------------------------------------------------------------
# eigenvector statistics: QUE and delocalization
# ---------------------------------------------------------------------------

def run_que(cfg: ExperimentConfig) -> Report:
    """Diagonal eigenvector overlaps of traceless special observables.

    For n_vectors configured sites x, the bulk maximum of
    |<u_i, A u_i> - Tr A/N| with A the traceless row observable is
    reported twice: normalized by the sup norm of A against
    que_margin * sqrt(N)/W, and normalized by |||A|||/N against
    N^xi * sqrt(N)/W.  With two bandwidths the ratio of the mean
    per-sample maxima is checked against the predicted value 2.
    """
    base = cfg.build_profile()
    N = base.N
    w_values = cfg.w_values or [base.W]
    rows, series = [], {"W": [], "overlap_max": []}
    stats = {}
    rng = np.random.default_rng(cfg.seed)
    sites = np.sort(rng.integers(0, N, size=cfg.n_vectors))
    v_rand = rng.standard_normal(N)
    v_rand /= np.linalg.norm(v_rand)
    for W in w_values:
        spec = dict(cfg.profile)
        spec["W"] = int(W)
        if spec["kind"] == "block_band":
            spec["params"] = dict(spec["params"], L=N // int(W))
        p = build_profile(spec)
        observables = [traceless_part(make_special_observable(p, int(x)))
                       for x in sites]
        tri_norm = max(triple_norm(p, A)[0] for A in observables)
        sup_norm = max(float(np.abs(A.diag).max()) for A in observables)
        per_sample_max, global_max = [], 0.0
        deloc_coord = deloc_rand = 0.0
        for i in range(cfg.samples):
            s = sample_matrix(p, cfg.symmetry_class(), cfg.distribution_kind(),
                              cfg.seed + i)
            vals, vecs = np.linalg.eigh(s.values)
            bulk = np.abs(vals) <= 2.0 - cfg.kappa
            sq = np.abs(vecs[:, bulk]) ** 2
            dev = np.abs(p.entries[sites] @ sq - 1.0 / N)
            m = float(dev.max())
            per_sample_max.append(m)
            global_max = max(global_max, m)
            deloc_coord = max(deloc_coord, float(np.abs(vecs[0, bulk]).max()))
            deloc_rand = max(deloc_rand, float(np.abs(v_rand @ vecs[:, bulk]).max()))
        rows.append(_le_row(f"que_diag_overlap_W{W}", global_max / sup_norm,
                            cfg.que_margin * math.sqrt(N) / W))
        rows.append(_le_row(f"que_overlap_tri_norm_W{W}", global_max * N / tri_norm,
                            N ** cfg.que_xi * math.sqrt(N) / W))
        rows.append(_le_row(f"deloc_coord_W{W}", deloc_coord, N ** cfg.xi / math.sqrt(N)))
        rows.append(_le_row(f"deloc_random_W{W}", deloc_rand, N ** cfg.xi / math.sqrt(N)))
        # ratio statistic in tri-norm units: |||A||| is W-stable, sup norm is not
        stats[W] = float(np.mean(per_sample_max)) * N / tri_norm
        series["W"].append(int(W))
        series["overlap_max"].append(stats[W])
    if len(w_values) == 2:
        w_small, w_big = sorted(w_values)
        ratio = stats[w_small] / stats[w_big]
        lo, hi = cfg.que_ratio_window
        rows.append(_ge_row("que_w_ratio_min", ratio, lo))
        rows.append(_le_row("que_w_ratio_max", ratio, hi))
    return Report("que", rows, _env(cfg, base), series)


# ---------------------------------------------------------------------------
# traceless sqrt(eta)-rule
# ---------------------------------------------------------------------------

def run_traceless_scaling(cfg: ExperimentConfig) -> Report:
    """Eta-exponent of the per-traceless-pair improvement below (W/N)^2."""
    p = cfg.build_profile()
    N, W = p.N, p.W
    crit = (W / N) ** 2
    eta_grid = cfg.eta_grid or np.geomspace(0.003, 0.1, 8).tolist()
    floor = N ** (-1.0 + cfg.delta0)
    if min(eta_grid) < floor or max(eta_grid) > crit:
        raise ValueError(
            f"eta grid must lie inside ({floor:.4g}, {crit:.4g}) for this profile")
    E = cfg.z_grid[0][0] if cfg.z_grid else 0.5
    Sc = p.entries - 1.0 / N
    m_plain, m_trless, f_plain, f_trless = [], [], [], []
    for eta in eta_grid:
        pt = spectral_point(complex(E, eta), N, W)
        w = abs(pt.m) ** 2
        stability = StabilityCache(p)
        batch = SpecialChainMTerms(p, (pt, pt.conj()), stability)
        tr_plain = batch.k2_traces()
        cols_tr = w * stability.solve(w, Sc.astype(complex))
        tr_less = Sc.T @ cols_tr
        m_plain.append(float(np.abs(tr_plain).max()))
        m_trless.append(float(np.abs(tr_less).max()))
        fp = ft = 0.0
        for i in range(cfg.samples):
            s = sample_matrix(p, cfg.symmetry_class(), cfg.distribution_kind(),
                              cfg.seed + i)
            G = eigendecompose(s).resolvent(pt.z)
            Gd = G.conj().T
            core = Gd * G.T
            fp += float(np.abs(p.entries @ core @ p.entries - tr_plain.T).max())
            ft += float(np.abs(Sc.T @ core @ Sc - tr_less.T).max())
        f_plain.append(fp / cfg.samples)
        f_trless.append(ft / cfg.samples)
    logt = np.log(np.asarray(eta_grid))
    m_slope = float(np.polyfit(logt, np.log(np.asarray(m_trless) / np.asarray(m_plain)), 1)[0])
    f_slope = float(np.polyfit(logt, np.log(np.asarray(f_trless) / np.asarray(f_plain)), 1)[0])
    gap = max(f2 / m2 * (N * eta)
              for f2, m2, eta in zip(f_trless, m_trless, eta_grid))
    rows = [
        _ge_row("traceless_m_exponent_min", m_slope, 1.0 - cfg.traceless_tol),
        _le_row("traceless_m_exponent_max", m_slope, 1.0 + cfg.traceless_tol),
        _ge_row("traceless_fluct_exponent_min", f_slope, 1.0 - cfg.traceless_fluct_tol),
        _le_row("traceless_fluct_exponent_max", f_slope, 1.0 + cfg.traceless_fluct_tol),
        _le_row("fluct_below_m_by_inv_Neta", gap, cfg.traceless_gap_margin),
    ]
    series = {"eta": list(eta_grid), "m_plain": m_plain, "m_traceless": m_trless,
              "fluct_plain": f_plain, "fluct_traceless": f_trless}
    return Report("traceless", rows, _env(cfg, p), series)


# ---------------------------------------------------------------------------
# spacing universality
# ---------------------------------------------------------------------------

def gap_ratios(eigs: np.ndarray, bulk_fraction: float = 0.5) -> np.ndarray:
    """Consecutive-gap ratios min(s_i, s_{i+1}) / max(...) on the middle bulk.

    Invariant under affine rescaling of the spectrum; no unfolding needed.
    """
    lam = np.sort(np.asarray(eigs))
    n = lam.size
    lo = int(round(n * (0.5 - bulk_fraction / 2.0)))
    hi = int(round(n * (0.5 + bulk_fraction / 2.0)))
    s = np.diff(lam[lo:hi])
    return np.minimum(s[:-1], s[1:]) / np.maximum(s[:-1], s[1:])


def _pooled_ratios(p, sym, dist, n_samples, seed, bulk_fraction):
    out = []
    for i in range(n_samples):
        s = sample_matrix(p, sym, dist, seed + i)
        out.append(gap_ratios(np.linalg.eigvalsh(s.values), bulk_fraction))
    return np.concatenate(out)


def run_spacing(cfg: ExperimentConfig) -> Report:
    """Two-sample KS distance of gap ratios against a Gaussian reference.

    The reference batch is the flat-profile Gaussian ensemble of the same
    symmetry and size, so no closed-form constant enters the check.  With
    reference_symmetry set, a cross-symmetry control row asserts that the
    statistic is discriminative.
    """
    p = cfg.build_profile()
    sym, dist = cfg.symmetry_class(), cfg.distribution_kind()
    band = _pooled_ratios(p, sym, dist, cfg.samples, cfg.seed, cfg.bulk_fraction)
    n_gaps = band.size + cfg.samples  # ratios consume one gap each
    if n_gaps < 1000:
        raise StatisticsError(f"only {n_gaps} pooled gaps; need at least 1000")
    flat = build_flat_profile(p.N)
    ref = _pooled_ratios(flat, sym, EntryDistribution.GAUSSIAN, cfg.samples,
                         cfg.seed + 10_000_019, cfg.bulk_fraction)
    ks_same = float(ks_2samp(band, ref, method="asymp").statistic)
    rows = [_le_row("spacing_ks_same_symmetry", ks_same, cfg.ks_threshold)]
    series = {"band": band.tolist(), "reference": ref.tolist(),
              "pooled_gaps": int(n_gaps)}
    if cfg.reference_symmetry:
        other = SymmetryClass(cfg.reference_symmetry)
        ref2 = _pooled_ratios(flat, other, EntryDistribution.GAUSSIAN, cfg.samples,
                              cfg.seed + 20_000_003, cfg.bulk_fraction)
        ks_cross = float(ks_2samp(band, ref2, method="asymp").statistic)
        rows.append(_ge_row("spacing_ks_cross_symmetry", ks_cross, cfg.ks_cross_min))
        series["cross"] = ref2.tolist()
    return Report("spacing", rows, _env(cfg, p), series)


# ---------------------------------------------------------------------------
# flow trace
# ---------------------------------------------------------------------------

def run_flow(cfg: ExperimentConfig) -> Report:
    """Psi trace along one characteristic with OU-evolved samples."""
    from .flow import flow_psi_trace

    p = cfg.build_profile()
    z_T = cfg.zs()[0]
    trace = flow_psi_trace(p, z_T, T=cfg.flow_T, n_steps=cfg.flow_steps,
                           batch=cfg.samples, seed=cfg.seed, k=2, K=cfg.K,
                           sym=cfg.symmetry_class(), dist=cfg.distribution_kind(),
                           ups_family=cfg.ups_family, ups_D=cfg.ups_D,
                           n_tuples=cfg.n_tuples)
    bound = p.N ** cfg.xi
    psi_max = max(max(r["psi_av"], r["psi_iso"]) for r in trace)
    etas = [r["eta"] for r in trace]
    worst_step = max(b - a for a, b in zip(etas[:-1], etas[1:]))
    rows = [
        _le_row("flow_psi_max", psi_max, bound),
        CheckRow("eta_strictly_decreasing", float(worst_step), 0.0, worst_step < 0.0),
    ]
    return Report("flow", rows, _env(cfg, p), series={"trace": trace})


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_HEADER = "experiment,check,measured,bound,pass,seed,N,W,eta"


def _fmt(v: float) -> str:
    return f"{float(v):.12g}"


def emit_report(report: Report, out_dir, formats=("csv", "json"), plots: bool = True):
    """Write the report as CSV rows, a JSON summary, and figures.

    The CSV is byte-identical across reruns of the same configuration; the
    figure files are rendered from the report's series payload.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    base = os.path.join(out_dir, report.experiment)
    env = report.env
    if "csv" in formats:
        path = base + ".csv"
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in report.rows:
                fh.write(",".join([
                    report.experiment, r.name, _fmt(r.measured), _fmt(r.bound),
                    "true" if r.passed else "false", str(env.get("seed", "")),
                    str(env.get("N", "")), str(env.get("W", "")), _fmt(r.eta),
                ]) + "\n")
        written.append(path)
    if "json" in formats:
        path = base + ".json"
        doc = {"experiment": report.experiment, "env": env,
               "rows": [dataclasses.asdict(r) for r in report.rows],
               "all_passed": report.all_passed}
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
        written.append(path)
    if "psi_records" in report.series:
        from .chains import write_psi_csv
        path = os.path.join(out_dir, f"{report.experiment}_psi_rows.csv")
        write_psi_csv(path, report.series["psi_records"])
        written.append(path)
    if report.experiment == "flow" and "trace" in report.series:
        path = os.path.join(out_dir, "flow_trace.csv")
        with open(path, "w") as fh:
            fh.write("t,re_z,im_z,eta,ell,psi_av,psi_iso\n")
            for r in report.series["trace"]:
                fh.write(",".join(_fmt(r[k]) for k in
                                  ("t", "re", "im", "eta", "ell", "psi_av", "psi_iso")) + "\n")
        written.append(path)
    if plots:
        from . import plotting
        written.extend(plotting.render_report(report, out_dir))
    return written
