"""Two-point kernels, control functions, norms, size functions, propagators.

The two-point kernel Theta(z1, z2) = (I - m1*conj(m2)*S)^-1 m1*conj(m2)*S
governs the spatial profile of |G_ab|^2; Xi is its same-half-plane
(unconjugated) companion and lives on the much shorter scale W.  Control
functions Upsilon_eta are deterministic positive matrices majorizing Theta
on the scale ell(eta) = min(W/sqrt(eta), N); all admissibility conditions
are checked numerically by fitting the smallest constant that makes each
inequality hold on a grid.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError
from .ensemble import VarianceProfile, _site_distance_matrix
from .semicircle import SpectralPoint, localization_length, stieltjes_m

__all__ = [
    "TwoPointKernel",
    "ControlFunction",
    "SizeFunctionInputs",
    "ConditionFit",
    "AdmissibilityReport",
    "localization_length",
    "two_point_kernel",
    "upsilon_build",
    "fitted_upsilon",
    "triple_norm",
    "generalized_upsilon",
    "size_function",
    "kernel_to_csv",
    "regularize_theta",
    "saturated_propagator",
    "verify_control_admissibility",
]


@dataclass(frozen=True)
class TwoPointKernel:
    values: np.ndarray
    kind: str  # "theta" | "xi"
    z1: SpectralPoint
    z2: SpectralPoint

    def __post_init__(self):
        self.values.setflags(write=False)


def two_point_kernel(p: VarianceProfile, z1: SpectralPoint, z2: SpectralPoint,
                     kind: str = "theta") -> TwoPointKernel:
    """Dense-solve evaluation of Theta or Xi for spectral points in one half plane.

    theta: (I - m1*conj(m2)*S)^-1 * m1*conj(m2)*S;  xi: same with m2 not
    conjugated.  Never computed by Neumann series: the series converges
    slowly as |m| -> 1 while the solve is exact.
    """
    if kind not in ("theta", "xi"):
        raise ValueError("kind must be 'theta' or 'xi'")
    if z1.z.imag * z2.z.imag <= 0:
        raise ValueError("z1, z2 must lie in the same half plane")
    w = z1.m * np.conj(z2.m) if kind == "theta" else z1.m * z2.m
    S = p.entries
    B = np.eye(p.N) - w * S
    try:
        vals = np.linalg.solve(B, w * S)
    except np.linalg.LinAlgError as exc:  # |m1 m2| < 1 makes this unreachable
        raise NumericalError(
            f"kernel solve failed (|w| = {abs(w):.6g}, cond ~ {np.linalg.cond(B):.3g})"
        ) from exc
    if kind == "theta" and z1.z == z2.z:
        vals = vals.real  # w = |m|^2 real; drop rounding-level imaginary dust
    return TwoPointKernel(values=vals, kind=kind, z1=z1, z2=z2)


@dataclass(frozen=True)
class ControlFunction:
    """Admissible control function candidate Upsilon_eta.

    family is "polynomial" (with exponent D), "exponential" (rate c0 plus a
    floor term (ell/eta) * N^-D), or "custom".  c1 and dprime store the
    measured norm constants of this instance.
    """

    values: np.ndarray
    eta: float
    ell: float
    family: str
    params: dict = field(compare=False)
    c1: float = 0.0
    dprime: float = 0.0

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def ell_eta(self) -> float:
        return self.ell * self.eta


def upsilon_build(N, W, eta, family: str = "polynomial", D: float = 6.0,
                  c0: float = 1.0, scale: float = 1.0) -> ControlFunction:
    """Build Upsilon_eta on the N-cycle for bandwidth W.

    polynomial: (1/(ell*eta)) * (1 + |x-y|_N/ell)^-D with D >= 6.
    exponential: (1/(ell*eta)) * exp(-c0 |x-y|_N/ell) + (ell/eta) * N^-D.
    A constant rescaling keeps every admissibility condition intact, so
    `scale` lets callers tighten the majoration of the two-point kernel.
    """
    ell = localization_length(W, N, eta)
    d = _site_distance_matrix(N)
    if family == "polynomial":
        if D < 6:
            raise ValueError("polynomial family requires D >= 6")
        vals = (1.0 + d / ell) ** (-D) / (ell * eta)
        params = {"D": D}
    elif family == "exponential":
        if c0 <= 0:
            raise ValueError("exponential family requires c0 > 0")
        if D < 2:
            raise ValueError("exponential floor requires D >= 2")
        vals = np.exp(-c0 * d / ell) / (ell * eta) + (ell / eta) * N ** (-D)
        params = {"c0": c0, "D": D}
    else:
        raise ValueError(f"unknown family {family!r}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if scale != 1.0:
        vals = scale * vals
        params = dict(params, scale=scale)
    c1 = max(float(vals.max()) * ell * eta, float(vals.sum(axis=0).max()) * eta)
    dprime = float(-np.log(vals.min()) / (2.0 * np.log(N))) if N > 1 else 0.0
    return ControlFunction(values=vals, eta=float(eta), ell=ell, family=family,
                           params=params, c1=c1, dprime=dprime)


def fitted_upsilon(p: VarianceProfile, pt: SpectralPoint, family: str = "exponential",
                   D: float = 6.0, c0: float = 1.0) -> ControlFunction:
    """Control function rescaled so that Theta(z) <= Upsilon holds exactly.

    The admissibility constants are existential, so the family member is
    rescaled by the measured majoration constant max Theta/Upsilon at this
    spectral point; the fluctuation ratios Psi are then measured against a
    control function with condition (i) constant equal to one.
    """
    base = upsilon_build(p.N, p.W, pt.eta, family=family, D=D, c0=c0)
    theta = two_point_kernel(p, pt, pt, "theta").values
    scale = max(float(np.max(theta / base.values)), 1.0)
    return upsilon_build(p.N, p.W, pt.eta, family=family, D=D, c0=c0, scale=scale)


def _observable_diag(A) -> np.ndarray:
    return np.asarray(getattr(A, "diag", A))


def triple_norm(p: VarianceProfile, A):
    """Observable norm: min sum(a) s.t. sum_i a_i S_iq >= |A_qq|, a >= 0.

    Returns (value, certificate).  A may be a DiagObservable or a raw
    diagonal vector.  For the special observable S^x the natural
    certificate e_x (value 1) is returned directly; otherwise the linear
    program is solved with HiGHS and the solver's optimal vertex is the
    certificate.  The LP is always feasible.
    """
    tag = getattr(A, "tag", None)
    site = getattr(A, "site", None)
    d = np.abs(_observable_diag(A))
    if tag in ("special", "traceless_special") and tag == "special" and site is not None:
        cert = np.zeros(p.N)
        cert[site] = 1.0
        return 1.0, cert
    if not np.any(d > 0):
        return 0.0, np.zeros(p.N)
    res = linprog(c=np.ones(p.N), A_ub=-p.entries, b_ub=-d,
                  bounds=(0, None), method="highs")
    if not res.success:
        raise NumericalError(f"observable-norm LP did not converge: {res.message}")
    return float(res.fun), np.clip(res.x, 0.0, None)


def _weight_profile(item, p: Optional[VarianceProfile] = None) -> np.ndarray:
    """Nonnegative weight vector entering a generalized Upsilon pairing.

    index -> e_x;  complex vector u -> |u|^2;  DiagObservable -> its
    triple-norm certificate (the natural e_x for special observables).
    """
    if isinstance(item, (int, np.integer)):
        if p is None:
            raise ValueError("profile needed to resolve an index weight")
        e = np.zeros(p.N)
        e[int(item)] = 1.0
        return e
    if isinstance(item, np.ndarray) or isinstance(item, (list, tuple)):
        u = np.asarray(item)
        return np.abs(u) ** 2
    cert = getattr(item, "certificate", None)
    if cert is not None:
        return np.asarray(cert)
    tag = getattr(item, "tag", None)
    site = getattr(item, "site", None)
    if tag == "special" and site is not None:
        diag = _observable_diag(item)
        e = np.zeros(diag.size)
        e[int(site)] = 1.0
        return e
    raise ValueError(
        "observable carries no triple-norm certificate; compute triple_norm first")


def generalized_upsilon(left, right, ups: ControlFunction,
                        p: Optional[VarianceProfile] = None) -> float:
    """Generalized control function for vectors and/or observables.

    Upsilon_uv = sum |u_i|^2 Upsilon_ij |v_j|^2; observables enter through
    their triple-norm certificates, and coordinate vectors or site indices
    recover the plain entries Upsilon_xy.
    """
    a = _weight_profile(left, p)
    b = _weight_profile(right, p)
    return float(a @ ups.values @ b)


@dataclass(frozen=True)
class SizeFunctionInputs:
    """Arguments of an averaged or isotropic size function.

    links holds the k chain items for mode "av" (site indices or
    observables), or the k-1 interior items for mode "iso" together with
    ends = (a_or_u, b_or_v).
    """

    k: int
    links: Sequence
    ups: ControlFunction
    ends: Optional[tuple] = None
    profile: Optional[VarianceProfile] = None

    def link_value(self, x, y) -> float:
        return generalized_upsilon(x, y, self.ups, self.profile)


def size_function(inputs: SizeFunctionInputs, mode: str) -> float:
    """Size functions s_k^iso / s_k^av built from sqrt-Upsilon links.

    s_1^iso(a,b) = sqrt(Upsilon_ab); s_k^iso carries (ell*eta)^-(k-1)/2 and
    k sqrt-links; s_k^av carries (ell*eta)^-k/2 and the cyclic product, so
    s_k^av(x) = s_k^iso(x_k, x', x_k)/sqrt(ell*eta).
    """
    k, ups = inputs.k, inputs.ups
    le = ups.ell_eta
    if mode == "av":
        if len(inputs.links) != k:
            raise ValueError(f"av mode with k={k} needs {k} links, got {len(inputs.links)}")
        if k == 1:
            item = inputs.links[0]
            if isinstance(item, (int, np.integer)) or getattr(item, "tag", None) == "special":
                return 1.0 / le
            if inputs.profile is None:
                raise ValueError("profile required for a general k=1 averaged size")
            val, _ = triple_norm(inputs.profile, item)
            return val / le
        cyc = [inputs.link_value(inputs.links[j - 1], inputs.links[j]) for j in range(1, k)]
        cyc.append(inputs.link_value(inputs.links[-1], inputs.links[0]))
        return float(np.sqrt(np.prod(cyc)) / le ** (k / 2.0))
    if mode == "iso":
        if inputs.ends is None or len(inputs.ends) != 2:
            raise ValueError("iso mode needs ends=(a_or_u, b_or_v)")
        if len(inputs.links) != k - 1:
            raise ValueError(f"iso mode with k={k} needs {k - 1} interior links")
        a, b = inputs.ends
        chain = [a, *inputs.links, b]
        prods = [inputs.link_value(chain[j], chain[j + 1]) for j in range(k)]
        return float(np.sqrt(np.prod(prods)) / le ** ((k - 1) / 2.0))
    raise ValueError("mode must be 'av' or 'iso'")


def kernel_to_csv(kernel: TwoPointKernel, path) -> None:
    """Row-major CSV export; complex entries as quoted "re,im" pairs."""
    vals = kernel.values
    with open(path, "w") as fh:
        for row in vals:
            if np.iscomplexobj(vals):
                cells = [f'"{v.real:.17g},{v.imag:.17g}"' for v in row]
            else:
                cells = [f"{v:.17g}" for v in row]
            fh.write(",".join(cells) + "\n")


def regularize_theta(theta: TwoPointKernel, x: int) -> np.ndarray:
    """Anchored regularization (Theta^x)_ab = Theta_ab - Theta_ax; column x is zero."""
    if theta.kind != "theta":
        raise ValueError("regularization is defined for theta kernels")
    T = theta.values
    return T - T[:, x:x + 1]


def saturated_propagator(p: VarianceProfile, z_s: SpectralPoint, z_t: SpectralPoint,
                         kind: str = "saturated") -> np.ndarray:
    """Flow propagator between two points of one characteristic, s <= t.

    saturated:   P = (|m_t|^2/|m_s|^2) (I - |m_s|^2 S)(I - |m_t|^2 S)^-1,
    unsaturated: Q = (m_t^2/m_s^2)(I - m_s^2 S)(I - m_t^2 S)^-1.
    Both are rational in S, hence commute with every kernel of the family.
    """
    S = p.entries
    eye = np.eye(p.N)
    if kind == "saturated":
        ws, wt = abs(z_s.m) ** 2, abs(z_t.m) ** 2
    elif kind == "unsaturated":
        ws, wt = z_s.m ** 2, z_t.m ** 2
    else:
        raise ValueError("kind must be 'saturated' or 'unsaturated'")
    out = (wt / ws) * np.linalg.solve(eye - wt * S, eye - ws * S)
    return out.real if kind == "saturated" else out


# ---------------------------------------------------------------------------
# admissibility fitting
# ---------------------------------------------------------------------------

@dataclass
class ConditionFit:
    condition: str
    fitted_constant: float
    grid: dict

    def row(self) -> dict:
        return {"condition": self.condition,
                "fitted_constant": self.fitted_constant,
                "grid": self.grid}


@dataclass
class AdmissibilityReport:
    kind: str
    N: int
    W: int
    family: str
    conditions: list

    def fitted(self, condition: str) -> float:
        for c in self.conditions:
            if c.condition == condition:
                return c.fitted_constant
        raise KeyError(condition)

    def to_json(self) -> str:
        return json.dumps({
            "profile": {"kind": self.kind, "N": self.N, "W": self.W},
            "family": self.family,
            "conditions": [c.row() for c in self.conditions],
        }, sort_keys=True)


def _pair_subsample(N, count, rng):
    # fractional positions, so the same seed samples the same physical sites
    # at every size and fitted constants stay comparable across N
    xs = (rng.random(count) * N).astype(int)
    ys = (rng.random(count) * N).astype(int)
    return xs, ys


def verify_control_admissibility(p: VarianceProfile, family: str = "polynomial",
                                 z_grid=None, *, D: float = 6.0, c0: float = 1.0,
                                 pairs: int = 64, anchors: int = 12, seed: int = 0,
                                 full_sweep: bool = False,
                                 regularity_sweep: bool = True) -> AdmissibilityReport:
    """Fit the smallest constants for the admissibility conditions (i)-(vii).

    The constants of the analysis are existential, so this is a fitting
    report, not a boolean: each condition row stores the measured constant
    on the z-grid (and its per-eta trace where relevant).  The quadratic
    (x, y) sweeps in (iv)-(vi) use `pairs` random pairs and `anchors` row
    anchors unless full_sweep is set.
    """
    N, W, S = p.N, p.W, p.entries
    if z_grid is None:
        z_grid = [0.5 + 0.02j, 0.5 + 0.1j, 0.5 + 0.5j, -1.0 + 0.05j, 0.0 + 1.0j]
    z_grid = [complex(z) for z in z_grid]
    if any(z.imag <= 0 for z in z_grid):
        raise ValueError("z-grid must lie in the upper half plane")
    rng = np.random.default_rng(seed)

    def ups_at(eta):
        return upsilon_build(N, W, eta, family=family, D=D, c0=c0)

    etas = sorted({z.imag for z in z_grid})
    ups = {eta: ups_at(eta) for eta in etas}
    ups1 = ups_at(1.0)
    from .semicircle import spectral_point
    pts = {z: spectral_point(z, N, W) for z in z_grid}
    conditions = []

    # (i) majoration of Theta and Xi
    c_theta, c_xi = 0.0, 0.0
    for z1 in z_grid:
        for z2 in z_grid:
            eta = min(z1.imag, z2.imag)
            th = two_point_kernel(p, pts[z1], pts[z2], "theta").values
            xi = two_point_kernel(p, pts[z1], pts[z2], "xi").values
            c_theta = max(c_theta, float(np.max(np.abs(th) / ups[eta].values)))
            c_xi = max(c_xi, float(np.max(np.abs(xi) / ups1.values)))
    conditions.append(ConditionFit("i_theta_majoration", c_theta, {"etas": etas}))
    conditions.append(ConditionFit("i_xi_majoration", c_xi, {"etas": etas}))

    # (ii) norm bounds, lower bound, delocalized flatness
    c_max = max(float(u.values.max()) * u.ell_eta for u in ups.values())
    c_col = max(float(u.values.sum(axis=0).max()) * u.eta for u in ups.values())
    dprime = max(u.dprime for u in ups.values())
    conditions.append(ConditionFit("ii_max_entry", c_max, {"etas": etas}))
    conditions.append(ConditionFit("ii_column_sum", c_col, {"etas": etas}))
    conditions.append(ConditionFit("ii_lower_bound_Dprime", dprime, {"etas": etas}))
    deloc = [e for e in etas if e <= (W / N) ** 2]
    if deloc:
        ratios = [ups[e].values * (N * e) for e in deloc]
        flat = max(max(float(r.max()), 1.0 / float(r.min())) for r in ratios)
        conditions.append(ConditionFit("ii_deloc_flatness", flat, {"etas": deloc}))

    # (iii) monotonicity
    c_mon = 0.0
    for i, e1 in enumerate(etas):
        for e2 in etas[i:]:
            c_mon = max(c_mon, float(np.max(ups[e2].values / ups[e1].values)))
    conditions.append(ConditionFit("iii_monotonicity", c_mon, {"etas": etas}))

    # (iv) triangle + convolutions, (v) weighted convolution
    dmat = _site_distance_matrix(N)
    row_anchors = np.arange(N) if full_sweep else (rng.random(anchors) * N).astype(int)
    c_tri = c_sqrt = c_full = c_wt = 0.0
    for i, e1 in enumerate(etas):
        u1 = ups[e1]
        for e2 in etas[i:]:
            u2 = ups[e2]
            sq1, sq2 = np.sqrt(u1.values), np.sqrt(u2.values)
            # triangle, on row anchors x with all y
            for x in row_anchors:
                prod = np.max(u2.values[x][:, None] * u1.values, axis=0)
                c_tri = max(c_tri, float(np.max(prod * u2.ell_eta / u1.values[x])))
            # sqrt-convolution, full (x, y) by matrix product
            lhs = sq2 @ sq1
            rhs = np.sqrt(u2.ell_eta * u1.values) / u2.eta
            c_sqrt = max(c_sqrt, float(np.max(lhs / rhs)))
            # full-power convolution
            lhs = u2.values @ u1.values
            c_full = max(c_full, float(np.max(lhs * u2.eta / u1.values)))
            # weighted convolution, subsampled x rows against all y
            for ui, ei in ((u1, e1), (u2, e2)):
                sqi = np.sqrt(ui.values)
                for x in row_anchors:
                    wrow = np.minimum(dmat[x] + W, u1.ell) / u1.ell
                    lhs = (wrow * sq2[x]) @ sqi
                    rhs = (u2.ell / u1.ell) / u2.eta \
                        * np.sqrt(u2.ell_eta / ui.ell_eta) \
                        * np.sqrt(u1.ell_eta * u1.values[x])
                    c_wt = max(c_wt, float(np.max(lhs / rhs)))
    conditions.append(ConditionFit("iv_triangle", c_tri, {"etas": etas}))
    conditions.append(ConditionFit("iv_sqrt_convolution", c_sqrt, {"etas": etas}))
    conditions.append(ConditionFit("iv_full_convolution", c_full, {"etas": etas}))
    conditions.append(ConditionFit("v_weighted_convolution", c_wt, {"etas": etas}))

    # (vi) regularity of Theta in the localized regime, with the c2-sweep
    crit = (W / N) ** 2
    reg_trace = {}
    bs, cs = _pair_subsample(N, pairs, rng)
    sweep_etas = sorted({e for e in etas if e >= crit})
    if regularity_sweep:
        sweep_etas = sorted(set(sweep_etas) | {crit * f for f in (1.0, 2.0, 4.0)})
    for eta in sweep_etas:
        ue = ups.get(eta) or ups_at(eta)
        z = complex(0.5, eta)
        pt = spectral_point(z, N, W)
        th = two_point_kernel(p, pt, pt, "theta").values
        wvec = np.minimum(dmat[bs, cs] + W, ue.ell) / ue.ell
        num = np.abs(th[:, bs] - th[:, cs])
        den = wvec[None, :] * (ue.values[:, bs] + ue.values[:, cs])
        reg_trace[eta] = float(np.max(num / den))
    c_reg = max(reg_trace.values()) if reg_trace else float("nan")
    conditions.append(ConditionFit("vi_theta_regularity", c_reg,
                                   {"per_eta": {f"{k:.6g}": v for k, v in reg_trace.items()},
                                    "critical_eta": crit}))

    # (vii) flatness in the delocalized regime
    c_flat = 0.0
    for z1 in z_grid:
        for z2 in z_grid:
            th = two_point_kernel(p, pts[z1], pts[z2], "theta").values
            dev = np.max(np.abs(th - th.mean(axis=1, keepdims=True)))
            c_flat = max(c_flat, float(dev * W * W / N))
    conditions.append(ConditionFit("vii_deloc_theta_flatness", c_flat, {"etas": etas}))

    return AdmissibilityReport(kind=p.kind, N=N, W=W, family=family,
                               conditions=conditions)
