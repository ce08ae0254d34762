"""Deterministic approximations of resolvent chains.

For diagonal observables the deterministic approximation of the chain
G_1 A_1 ... A_{k-1} G_k is a diagonal matrix obtained from a two-level
recursion: a reduced table Mtilde over sub-intervals, combined through the
stability solves (I - m_j m_k S)^-1 and the diagonal self-energy map
R -> diag(S @ diag(R)), then multiplied by the product of all m(z_i).
The same diagonal self-energy is used for both symmetry classes; the
off-diagonal part never enters a deterministic term.

All recursions are multilinear in the observables, which this module
exploits to collapse whole-index sums (for example in the time-derivative
identity) into single chain evaluations.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve

from .errors import NumericalError
from .ensemble import VarianceProfile
from .kernels import ControlFunction, SizeFunctionInputs, size_function, triple_norm
from .semicircle import SpectralPoint

__all__ = [
    "DiagObservable",
    "ChainSpec",
    "MTerm",
    "StabilityCache",
    "SpecialChainMTerms",
    "make_special_observable",
    "identity_observable",
    "traceless_part",
    "m_chain",
    "check_cyclicity",
    "check_divided_difference",
    "check_dm_dt",
    "check_m_size_bounds",
    "chain_to_json",
    "chain_from_json",
    "mterm_to_json",
]

MAX_STABILITY_COND = 1e12


@dataclass(frozen=True)
class DiagObservable:
    """Diagonal observable stored as an N-vector.

    tag is one of "special" (row x of S), "traceless_special", "identity",
    "general"; special-family observables remember their site.  The
    optional certificate is the observable-norm minimizer used by the
    generalized control functions.
    """

    diag: np.ndarray
    tag: str = "general"
    site: Optional[int] = None
    certificate: Optional[np.ndarray] = None

    def __post_init__(self):
        self.diag.setflags(write=False)
        if self.tag == "traceless_special" and abs(self.diag.sum()) > 1e-12:
            raise ValueError("traceless tag on an observable with nonzero trace")

    @property
    def trace(self):
        return self.diag.sum()


def make_special_observable(p: VarianceProfile, x: int) -> DiagObservable:
    """Observable with diagonal equal to row x of S; carries certificate e_x."""
    if not (0 <= x < p.N):
        raise ValueError(f"site {x} out of range 0..{p.N - 1}")
    cert = np.zeros(p.N)
    cert[x] = 1.0
    return DiagObservable(diag=p.entries[x].copy(), tag="special", site=x,
                          certificate=cert)


def identity_observable(N: int) -> DiagObservable:
    return DiagObservable(diag=np.ones(N), tag="identity")


def traceless_part(A: DiagObservable) -> DiagObservable:
    """Subtract the mean of the diagonal; idempotent, updates the tag."""
    d = A.diag - A.diag.mean()
    tag = "traceless_special" if A.tag in ("special", "traceless_special") else "general"
    return DiagObservable(diag=d, tag=tag, site=A.site)


def with_certificate(A: DiagObservable, p: VarianceProfile) -> DiagObservable:
    """Return a copy of A carrying its freshly computed norm certificate."""
    _, cert = triple_norm(p, A)
    return DiagObservable(diag=A.diag.copy(), tag=A.tag, site=A.site,
                          certificate=cert)


@dataclass(frozen=True)
class ChainSpec:
    """Spectral parameters and diagonal observables of one resolvent chain.

    points has length k; observables has length k-1; the optional
    test_observable closes averaged traces.  Imaginary parts must be
    comparable within the stored factor.
    """

    points: tuple
    observables: tuple
    test_observable: Optional[DiagObservable] = None
    comparability: float = 100.0

    def __post_init__(self):
        k = len(self.points)
        if k < 1:
            raise ValueError("chain needs at least one spectral point")
        if len(self.observables) != k - 1:
            raise ValueError(f"chain of length {k} needs {k - 1} observables, "
                             f"got {len(self.observables)}")
        etas = [pt.eta for pt in self.points]
        if max(etas) > self.comparability * min(etas):
            raise ValueError("imaginary parts of the spectral parameters are not "
                             f"comparable within factor {self.comparability}")

    @property
    def k(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class MTerm:
    """Diagonal of a deterministic chain approximation."""

    diag: np.ndarray
    chain: ChainSpec

    def __post_init__(self):
        self.diag.setflags(write=False)

    def trace_against(self, A: DiagObservable):
        return np.sum(self.diag * A.diag)


class StabilityCache:
    """LU factorizations of I - w S, keyed by the complex coefficient w.

    Shared across chains with common spectral parameters; reads are safe
    concurrently, insertion is single-writer per key.  Factorizations with
    estimated condition number above 1e12 are rejected.
    """

    def __init__(self, p: VarianceProfile):
        self.profile = p
        self._lus = {}
        self._gecon = None

    def factor(self, w: complex):
        w = complex(w)
        hit = self._lus.get(w)
        if hit is not None:
            return hit
        B = np.eye(self.profile.N, dtype=complex) - w * self.profile.entries
        lu = lu_factor(B)
        if self._gecon is None:
            self._gecon = get_lapack_funcs("gecon", (B,))
        rcond = self._gecon(lu[0], np.linalg.norm(B, 1))[0]
        if rcond <= 0 or 1.0 / rcond > MAX_STABILITY_COND:
            cond = np.inf if rcond <= 0 else 1.0 / rcond
            raise NumericalError(
                f"stability solve too ill-conditioned: cond(I - w S) ~ {cond:.3g} "
                f"for w = {w:.12g}")
        self._lus[w] = lu
        return lu

    def solve(self, w: complex, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self.factor(w), rhs)


def _mtilde_table(p: VarianceProfile, ms: Sequence[complex],
                  obs_diags: Sequence[np.ndarray], cache: StabilityCache) -> dict:
    """All reduced sub-interval terms Mtilde[(a, b)] as N-vectors.

    Mtilde[(a, a)] = 1 and, for a < b,
      Mtilde[(a,b)] = (I - m_a m_b S)^-1 [ A_a * Mtilde[(a+1,b)]
                        + sum_{a<i<b} m_a m_i (S Mtilde[(a,i)]) * Mtilde[(i,b)] ].
    """
    k = len(ms)
    S = p.entries
    ones = np.ones(p.N, dtype=complex)
    table = {(a, a): ones for a in range(k)}
    for span in range(1, k):
        for a in range(0, k - span):
            b = a + span
            rhs = obs_diags[a] * table[(a + 1, b)]
            for i in range(a + 1, b):
                rhs = rhs + ms[a] * ms[i] * (S @ table[(a, i)]) * table[(i, b)]
            try:
                table[(a, b)] = cache.solve(ms[a] * ms[b], rhs)
            except NumericalError as exc:
                raise NumericalError(f"{exc} (sub-interval [{a}, {b}])") from exc
    return table


def _mtilde(p, points, observables, cache=None) -> np.ndarray:
    cache = cache or StabilityCache(p)
    ms = [pt.m for pt in points]
    diags = [np.asarray(A.diag, dtype=complex) for A in observables]
    table = _mtilde_table(p, ms, diags, cache)
    return table[(0, len(points) - 1)]


def m_chain(p: VarianceProfile, c: ChainSpec, cache: Optional[StabilityCache] = None) -> MTerm:
    """Deterministic approximation of the chain, as a dynamic program.

    Sub-intervals are memoized; every interval costs one cached stability
    solve plus O(k) diagonal combinations.  For k = 1 the diagonal is
    m(z_1) * ones.
    """
    if c.k == 1:
        return MTerm(diag=np.full(p.N, c.points[0].m, dtype=complex), chain=c)
    mt = _mtilde(p, c.points, c.observables, cache)
    pref = np.prod([pt.m for pt in c.points])
    return MTerm(diag=pref * mt, chain=c)


def check_cyclicity(p: VarianceProfile, c: ChainSpec,
                    cache: Optional[StabilityCache] = None) -> float:
    """Relative residual of the cyclic trace identity for reduced terms.

    Compares Tr[Mtilde(z_1, A_1, ..., z_k) A_k] with
    Tr[A_{k-1} Mtilde(z_k, A_k, z_1, A_1, ..., A_{k-2}, z_{k-1})].
    """
    if c.k < 2 or c.test_observable is None:
        raise ValueError("cyclicity needs k >= 2 and a test observable")
    cache = cache or StabilityCache(p)
    lhs_vec = _mtilde(p, c.points, c.observables, cache)
    lhs = np.sum(lhs_vec * c.test_observable.diag)
    rot_points = (c.points[-1],) + c.points[:-1]
    rot_obs = (c.test_observable,) + c.observables[:-1]
    rhs_vec = _mtilde(p, rot_points, rot_obs, cache)
    rhs = np.sum(c.observables[-1].diag * rhs_vec)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return float(abs(lhs - rhs) / scale)


def check_divided_difference(p: VarianceProfile, c: ChainSpec, j: int,
                             cache: Optional[StabilityCache] = None) -> float:
    """Relative residual of the divided-difference identity at observable slot j.

    Slot j (0-based, between points j and j+1) must hold the identity
    observable; the identity degenerates when z_j ~ z_{j+1}, so gaps below
    1e-8 are rejected.
    """
    if not (0 <= j < c.k - 1):
        raise ValueError("slot j out of range")
    if c.observables[j].tag != "identity":
        raise ValueError("observable at slot j must be the identity")
    zj, zj1 = c.points[j].z, c.points[j + 1].z
    if abs(zj - zj1) < 1e-8:
        raise ValueError("spectral gap below 1e-8; divided difference degenerates")
    cache = cache or StabilityCache(p)
    full = m_chain(p, c, cache).diag
    keep_obs = c.observables[:j] + c.observables[j + 1:]
    first = ChainSpec(points=c.points[:j + 1] + c.points[j + 2:], observables=keep_obs,
                      comparability=c.comparability)
    second = ChainSpec(points=c.points[:j] + c.points[j + 1:], observables=keep_obs,
                       comparability=c.comparability)
    rhs = (m_chain(p, first, cache).diag - m_chain(p, second, cache).diag) / (zj - zj1)
    return float(np.max(np.abs(full - rhs)) / max(np.max(np.abs(full)), 1e-300))


def _dm_dt_rhs(p: VarianceProfile, c: ChainSpec, cache: StabilityCache) -> np.ndarray:
    """Exact time derivative (k/2) M + sum of self-energy-inserted chains.

    The double sum over the inner diagonal collapses by multilinearity:
    sum_q (M_[i,j])_qq M^{(q)} equals one chain with the diagonal
    self-energy of M_[i,j] inserted between points i and j.
    """
    k = c.k
    ms = [pt.m for pt in c.points]
    diags = [np.asarray(A.diag, dtype=complex) for A in c.observables]
    table = _mtilde_table(p, ms, diags, cache)
    pref_all = np.prod(ms)
    out = (k / 2.0) * pref_all * table[(0, k - 1)]
    S = p.entries
    for i in range(k):
        for j in range(i + 1, k):
            sub_pref = np.prod(ms[i:j + 1])
            inner = DiagObservable(diag=S @ (sub_pref * table[(i, j)]))
            spec = ChainSpec(points=c.points[:i + 1] + c.points[j:],
                             observables=c.observables[:i] + (inner,) + c.observables[j:],
                             comparability=c.comparability)
            out = out + m_chain(p, spec, cache).diag
    return out


def check_dm_dt(p: VarianceProfile, observables: Sequence[DiagObservable],
                points_at, t: float, h: float,
                cache: Optional[StabilityCache] = None) -> float:
    """Central-difference residual of the M evolution identity along a flow.

    points_at(t) must return the tuple of SpectralPoints of the chain at
    time t (for example Trajectory.chain_points).  Returns the max relative
    entrywise deviation between (M_{t+h} - M_{t-h}) / 2h and the exact
    derivative; second-order in h.
    """
    cache = cache or StabilityCache(p)
    obs = tuple(observables)

    def chain_at(s):
        return ChainSpec(points=tuple(points_at(s)), observables=obs)

    plus = m_chain(p, chain_at(t + h), cache).diag
    minus = m_chain(p, chain_at(t - h), cache).diag
    fd = (plus - minus) / (2.0 * h)
    rhs = _dm_dt_rhs(p, chain_at(t), cache)
    return float(np.max(np.abs(fd - rhs)) / max(np.max(np.abs(rhs)), 1e-300))


# ---------------------------------------------------------------------------
# serialization for the harness
# ---------------------------------------------------------------------------

def chain_to_json(c: ChainSpec) -> str:
    import json

    def obs_doc(A):
        if A is None:
            return None
        if A.tag in ("special", "traceless_special"):
            return {"tag": A.tag, "site": A.site}
        if A.tag == "identity":
            return {"tag": "identity"}
        return {"tag": "general", "diag_re": A.diag.real.tolist(),
                "diag_im": np.imag(A.diag).tolist()}

    return json.dumps({
        "points": [[pt.z.real, pt.z.imag] for pt in c.points],
        "observables": [obs_doc(A) for A in c.observables],
        "test_observable": obs_doc(c.test_observable),
        "comparability": c.comparability,
    })


def chain_from_json(p: VarianceProfile, text: str) -> ChainSpec:
    import json

    from .semicircle import spectral_point

    doc = json.loads(text)

    def obs_from(d):
        if d is None:
            return None
        if d["tag"] == "identity":
            return identity_observable(p.N)
        if d["tag"] in ("special", "traceless_special"):
            A = make_special_observable(p, int(d["site"]))
            return traceless_part(A) if d["tag"] == "traceless_special" else A
        diag = np.asarray(d["diag_re"]) + 1j * np.asarray(d["diag_im"])
        if np.all(diag.imag == 0):
            diag = diag.real
        return DiagObservable(diag=diag)

    points = tuple(spectral_point(complex(re, im), p.N, p.W)
                   for re, im in doc["points"])
    return ChainSpec(points=points,
                     observables=tuple(obs_from(d) for d in doc["observables"]),
                     test_observable=obs_from(doc["test_observable"]),
                     comparability=doc.get("comparability", 100.0))


def mterm_to_json(M: MTerm) -> str:
    import json

    return json.dumps({"diag_re": M.diag.real.tolist(),
                       "diag_im": M.diag.imag.tolist(),
                       "chain": json.loads(chain_to_json(M.chain))})


# ---------------------------------------------------------------------------
# batched M-terms for special observables (k <= 3)
# ---------------------------------------------------------------------------

class SpecialChainMTerms:
    """Vectorized deterministic terms for chains whose observables are S^x.

    The recursion is linear in every observable, so whole index families
    evaluate as matrix equations: one stability solve per pair of spectral
    parameters covers all sites at once.
    """

    def __init__(self, p: VarianceProfile, points: Sequence[SpectralPoint],
                 cache: Optional[StabilityCache] = None):
        if not 1 <= len(points) <= 3:
            raise ValueError("batched M-terms cover chain lengths 1..3")
        self.p = p
        self.points = tuple(points)
        self.cache = cache or StabilityCache(p)
        self._parts = None

    def k1_uniform(self) -> complex:
        return self.points[0].m

    def k2_columns(self) -> np.ndarray:
        """Column x holds diag M(z1, S^x, z2); equals the unsummed kernel of w S."""
        z1, z2 = self.points[:2]
        w = z1.m * z2.m
        return w * self.cache.solve(w, self.p.entries.astype(complex))

    def k2_traces(self) -> np.ndarray:
        """T[y, x] = Tr[M(z1, S^x, z2) S^y] for all pairs at once."""
        return self.p.entries @ self.k2_columns()

    def _k3_parts(self):
        if self._parts is None:
            z1, z2, z3 = self.points
            S = self.p.entries.astype(complex)
            k12s = self.cache.solve(z1.m * z2.m, S)
            U = S + (z1.m * z2.m) * (S @ k12s)
            V = self.cache.solve(z2.m * z3.m, S)
            self._parts = (U, V, z1.m * z2.m * z3.m)
        return self._parts

    def k3_diag(self, x: int, y: int) -> np.ndarray:
        """diag M(z1, S^x, z2, S^y, z3)."""
        U, V, pref = self._k3_parts()
        z1, _, z3 = self.points
        return pref * self.cache.solve(z1.m * z3.m, U[:, x] * V[:, y])

    def k3_traces_pinned(self, y: int) -> np.ndarray:
        """T[w, x] = Tr[M(z1, S^x, z2, S^y, z3) S^w] for a pinned middle index."""
        U, V, pref = self._k3_parts()
        z1, _, z3 = self.points
        core = self.cache.solve(z1.m * z3.m, V[:, y][:, None] * U)
        return pref * (self.p.entries @ core)


# ---------------------------------------------------------------------------
# size-bound fitting report
# ---------------------------------------------------------------------------

@dataclass
class MSizeRow:
    name: str
    k: int
    n_traceless: int
    eta: float
    constant: float


@dataclass
class MSizeReport:
    N: int
    W: int
    rows: list

    def max_constant(self, name: str) -> float:
        vals = [r.constant for r in self.rows if r.name == name]
        if not vals:
            raise KeyError(name)
        return max(vals)


def check_m_size_bounds(p: VarianceProfile, ups_family: str = "polynomial",
                        D: float = 6.0, *, eta_grid: Sequence[float],
                        ks: Sequence[int] = (1, 2, 3), tuples: int = 24,
                        seed: int = 0, E: float = 0.5) -> MSizeReport:
    """Fit constants in the averaged/isotropic M bounds on an (eta, x) grid.

    For each eta the chain alternates z, conj(z), ...; the averaged ratio
    divides |Tr[M S^{x_k}]| by (ell*eta) * s_k^av and the isotropic ratio
    divides max_a |M_aa| by sqrt(ell*eta) * s_k^iso(a, x', a) at the
    maximizing a.  Below the critical scale eta <= (W/N)^2 the rows
    "traceless_av_n" additionally fit the (N^2 eta / W^2)^ceil(n/2)
    improvement for n of the observables replaced by traceless versions.
    """
    from .kernels import upsilon_build
    from .semicircle import spectral_point

    rng = np.random.default_rng(seed)
    rows = []
    crit = (p.W / p.N) ** 2
    for eta in eta_grid:
        ups = upsilon_build(p.N, p.W, eta, family=ups_family, D=D)
        z = spectral_point(complex(E, eta), p.N, p.W)
        cache = StabilityCache(p)
        for k in ks:
            pts = tuple(z if i % 2 == 0 else z.conj() for i in range(k))
            best_av, best_iso = 0.0, 0.0
            for _ in range(tuples):
                xs = rng.integers(0, p.N, size=k)
                obs = tuple(make_special_observable(p, int(x)) for x in xs[:-1])
                chain = ChainSpec(points=pts, observables=obs)
                M = m_chain(p, chain, cache)
                test = make_special_observable(p, int(xs[-1]))
                s_av = size_function(SizeFunctionInputs(k=k, links=list(xs), ups=ups,
                                                        profile=p), "av")
                best_av = max(best_av, abs(M.trace_against(test)) / (ups.ell_eta * s_av))
                if k == 1:
                    s_iso = size_function(SizeFunctionInputs(
                        k=1, links=[], ups=ups, ends=(0, 0), profile=p), "iso")
                    best_iso = max(best_iso, float(np.max(np.abs(M.diag)))
                                   / (np.sqrt(ups.ell_eta) * s_iso))
                else:
                    a = int(np.argmax(np.abs(M.diag)))
                    s_iso = size_function(SizeFunctionInputs(
                        k=k, links=list(xs[:-1]), ups=ups, ends=(a, a), profile=p), "iso")
                    best_iso = max(best_iso, abs(M.diag[a]) / (np.sqrt(ups.ell_eta) * s_iso))
            rows.append(MSizeRow("av_bound", k, 0, eta, float(best_av)))
            rows.append(MSizeRow("iso_bound", k, 0, eta, float(best_iso)))
        if eta <= crit:
            batch = SpecialChainMTerms(p, (z, z.conj()), StabilityCache(p))
            theta2 = (p.N * p.N * eta) / (p.W * p.W)
            plain = np.abs(batch.k2_traces())
            rows.append(MSizeRow("traceless_av_n", 2, 0, eta,
                                 float(plain.max() * (p.N * eta))))
            Sc = p.entries - 1.0 / p.N
            w = abs(z.m) ** 2
            cols = w * StabilityCache(p).solve(w, Sc.astype(complex))
            tr2 = np.abs(Sc.T @ cols)
            rows.append(MSizeRow("traceless_av_n", 2, 2, eta,
                                 float(tr2.max() * (p.N * eta) / theta2)))
    return MSizeReport(N=p.N, W=p.W, rows=rows)
