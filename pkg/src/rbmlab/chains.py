"""Random resolvent chains, self-energy action, and the dimensionless Psi ratios.

One eigendecomposition per sample is reused for every spectral parameter,
chain, and eigenvector statistic.  Chains of special observables S^x admit
batched evaluation over whole index families through entrywise products of
materialized resolvents; those kernels are what the Monte Carlo harness
runs on.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError
from .ensemble import MatrixSample, SymmetryClass, VarianceProfile
from .kernels import ControlFunction, SizeFunctionInputs, size_function
from .mterms import ChainSpec, SpecialChainMTerms, StabilityCache, m_chain
from .semicircle import SpectralPoint

__all__ = [
    "ResolventCache",
    "ChainValue",
    "EmpiricalPsi",
    "eigendecompose",
    "chain_trace",
    "chain_bilinear",
    "self_energy_apply",
    "loss_exponents",
    "empirical_psi",
    "batched_trace_k2",
    "batched_trace_k3_pinned",
    "batched_iso_k2",
    "batched_iso_k3",
    "PsiSampler",
    "write_psi_csv",
]


@dataclass(frozen=True)
class ResolventCache:
    """Full spectral decomposition of one sample; all resolvents derive from it."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sample: MatrixSample

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    def resolvent(self, z: complex) -> np.ndarray:
        """Materialized G(z) = U diag(1/(lambda - z)) U*."""
        z = complex(z)
        if z.imag == 0.0:
            raise ValueError("resolvent requested on the real axis")
        U = self.eigenvectors
        d = 1.0 / (self.eigenvalues - z)
        return (U * d) @ U.conj().T

    def transform(self, diag: np.ndarray) -> np.ndarray:
        """Diagonal observable conjugated into the eigenbasis."""
        U = self.eigenvectors
        return (U.conj().T * diag) @ U


def eigendecompose(s: MatrixSample) -> ResolventCache:
    try:
        vals, vecs = np.linalg.eigh(s.values)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed") from exc
    return ResolventCache(eigenvalues=vals, eigenvectors=vecs, sample=s)


@dataclass(frozen=True)
class ChainValue:
    value: complex
    chain: ChainSpec
    kind: str  # "trace" | "bilinear"
    subtracted: bool = False


def chain_trace(cache: ResolventCache, c: ChainSpec, *, subtract_m: bool = False,
                stability: Optional[StabilityCache] = None) -> ChainValue:
    """Tr[G_1 A_1 ... G_k A_k] by eigenbasis contraction.

    The test observable A_k defaults to the identity.  With subtract_m the
    deterministic term Tr[M_[1,k] A_k] is removed before returning.
    """
    for pt in c.points:
        if pt.eta == 0:
            raise ValueError("chain evaluated at eta = 0")
    ds = [1.0 / (cache.eigenvalues - pt.z) for pt in c.points]
    obs = list(c.observables) + [c.test_observable]
    transformed = {}

    def tilde(A):
        if A is None:
            return None
        key = id(A)
        if key not in transformed:
            transformed[key] = cache.transform(A.diag)
        return transformed[key]

    if c.k == 1:
        A = obs[0]
        if A is None:
            val = complex(np.sum(ds[0]))
        else:
            val = complex(np.sum(ds[0] * np.diagonal(tilde(A))))
    else:
        P = None
        for d, A in zip(ds, obs):
            fac = d[:, None] * tilde(A) if A is not None else np.diag(d)
            P = fac if P is None else P @ fac
        val = complex(np.trace(P))
    if subtract_m:
        M = m_chain(cache.sample.profile, c, stability)
        tdiag = c.test_observable.diag if c.test_observable is not None else 1.0
        val -= complex(np.sum(M.diag * tdiag))
    return ChainValue(value=val, chain=c, kind="trace", subtracted=subtract_m)


def chain_bilinear(cache: ResolventCache, c: ChainSpec, u: np.ndarray, v: np.ndarray,
                   *, subtract_m: bool = False,
                   stability: Optional[StabilityCache] = None) -> ChainValue:
    """<u, G_1 A_1 ... G_k v> by eigenbasis contraction (O(k N^2))."""
    for pt in c.points:
        if pt.eta == 0:
            raise ValueError("chain evaluated at eta = 0")
    U = cache.eigenvectors
    w = U.conj().T @ np.asarray(v, dtype=complex)
    for i in range(c.k - 1, 0, -1):
        w = (1.0 / (cache.eigenvalues - c.points[i].z)) * w
        w = U.conj().T @ (c.observables[i - 1].diag * (U @ w))
    w = (1.0 / (cache.eigenvalues - c.points[0].z)) * w
    val = complex(np.conj(U.conj().T @ np.asarray(u, dtype=complex)) @ w)
    if subtract_m:
        M = m_chain(cache.sample.profile, c, stability)
        val -= complex(np.conj(u) @ (M.diag * np.asarray(v, dtype=complex)))
    return ChainValue(value=val, chain=c, kind="bilinear", subtracted=subtract_m)


def self_energy_apply(p: VarianceProfile, R: np.ndarray, sym: SymmetryClass) -> np.ndarray:
    """Self-energy action E[H R H].

    Complex class: the diagonal part diag(Tr[S^a R]).  Real class adds the
    off-diagonal piece (S^od)_ab R_ba with S^od equal to S off the diagonal.
    """
    R = np.asarray(R)
    out = np.diag(p.entries @ np.diagonal(R)).astype(complex)
    if sym is SymmetryClass.REAL_SYMMETRIC:
        s_od = p.entries.copy()
        np.fill_diagonal(s_od, 0.0)
        out = out + s_od * R.T
    return out


def loss_exponents(k: int, K: int):
    """Isotropic/averaged loss exponents (alpha_k, beta_k) for max length K."""
    if K < 8 or K % 2:
        raise ValueError("K must be an even integer >= 8")
    if not 1 <= k <= K:
        raise ValueError(f"need 1 <= k <= K = {K}")

    def alpha(j):
        return 0.0 if j <= K // 2 else 0.5 * np.sqrt(2.0 * j / K - 1.0)

    beta = alpha(k + 1) if k <= K - 1 else 0.5 + alpha(K // 2 + 1)
    return float(alpha(k)), float(beta)


@dataclass(frozen=True)
class EmpiricalPsi:
    kind: str  # "iso" | "av"
    k: int
    value: float
    loss_exponent: float


def empirical_psi(caches, c: ChainSpec, ups: ControlFunction, K: int, *,
                  mode: str = "av", u: Optional[np.ndarray] = None,
                  v: Optional[np.ndarray] = None,
                  profile: Optional[VarianceProfile] = None) -> EmpiricalPsi:
    """Dimensionless fluctuation ratio for one chain over a cache batch.

    av:  |Tr[(G - M) A_k]| / ((ell*eta)^beta_k * s_k^av),
    iso: |<u, (G - M) v>| / ((ell*eta)^alpha_k * s_k^iso).
    The maximum over the supplied caches is returned.
    """
    if isinstance(caches, ResolventCache):
        caches = [caches]
    k = c.k
    if k > K:
        raise ValueError(f"chain length {k} exceeds K = {K}")
    alpha, beta = loss_exponents(k, K)
    prof = profile or caches[0].sample.profile
    stability = StabilityCache(prof)
    if mode == "av":
        if c.test_observable is None:
            raise ValueError("averaged psi needs a test observable")
        s = size_function(SizeFunctionInputs(
            k=k, links=list(c.observables) + [c.test_observable],
            ups=ups, profile=prof), "av")
        denom = ups.ell_eta ** beta * s
        val = max(abs(chain_trace(cc, c, subtract_m=True, stability=stability).value)
                  for cc in caches)
        return EmpiricalPsi(kind="av", k=k, value=float(val / denom), loss_exponent=beta)
    if mode == "iso":
        if u is None or v is None:
            raise ValueError("isotropic psi needs test vectors u and v")
        s = size_function(SizeFunctionInputs(
            k=k, links=list(c.observables), ups=ups,
            ends=(np.asarray(u), np.asarray(v)), profile=prof), "iso")
        denom = ups.ell_eta ** alpha * s
        val = max(abs(chain_bilinear(cc, c, u, v, subtract_m=True,
                                     stability=stability).value) for cc in caches)
        return EmpiricalPsi(kind="iso", k=k, value=float(val / denom), loss_exponent=alpha)
    raise ValueError("mode must be 'av' or 'iso'")


# ---------------------------------------------------------------------------
# batched special-observable chains over materialized resolvents
# ---------------------------------------------------------------------------

def batched_trace_k2(G1, G2, S) -> np.ndarray:
    """T[x, y] = Tr[G1 S^x G2 S^y] for all pairs: S (G2 * G1^T) S."""
    return S @ (G2 * G1.T) @ S


def batched_trace_k3_pinned(G1, G2, G3, S, y: int) -> np.ndarray:
    """T[x, w] = Tr[G1 S^x G2 S^y G3 S^w] at a pinned middle index."""
    mid = G2 @ (S[y][:, None] * G3)
    return S @ (mid * G1.T) @ S


def batched_iso_k2(G1, G2, S, x: int) -> np.ndarray:
    """(G1 S^x G2)_ab for all entries at a pinned x."""
    return (G1 * S[x][None, :]) @ G2


def batched_iso_k3(G1, G2, G3, S, x: int, y: int) -> np.ndarray:
    """(G1 S^x G2 S^y G3)_ab for pinned (x, y)."""
    return ((G1 * S[x][None, :]) @ G2 * S[y][None, :]) @ G3


class PsiSampler:
    """Subsampled Psi measurement with fixed tuples and precomputed M-terms.

    The index tuples are drawn once from the recorded seed and reused for
    every sample, so batch maxima run over a fixed family of chains; the
    exhaustive maximum over all N^k tuples is a documented non-goal.  The
    chain templates alternate z, conj(z), z, making every second resolvent
    the adjoint of the materialized G(z) that measure() receives.
    For k = 1 the averaged trace statistic is cheap enough to keep all
    sites; it doubles as the absolute single-resolvent law check.
    """

    def __init__(self, p: VarianceProfile, pt: SpectralPoint, ups: ControlFunction,
                 K: int, *, ks=(1, 2, 3), n_tuples: int = 64, n_mid: int = 8,
                 seed: int = 0, stability: Optional[StabilityCache] = None):
        self.p, self.pt, self.ups, self.K = p, pt, ups, K
        self.ks = tuple(ks)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        N = p.N
        S = p.entries
        le = ups.ell_eta
        sq = np.sqrt(ups.values)
        stability = stability or StabilityCache(p)
        self._d = {}

        if 1 in self.ks:
            a1, b1 = loss_exponents(1, K)
            ab = rng.integers(0, N, size=(n_tuples, 2))
            self._d[1] = {
                "ab": ab,
                "iso_denom": le**a1 * sq[ab[:, 0], ab[:, 1]],
                "av_factor": le ** (1.0 - b1),
            }

        if 2 in self.ks:
            a2, b2 = loss_exponents(2, K)
            batch = SpecialChainMTerms(p, (pt, pt.conj()), stability)
            cols = batch.k2_columns()
            xy = rng.integers(0, N, size=(n_tuples, 2))
            m_av = (S @ cols)[xy[:, 1], xy[:, 0]]
            axb = rng.integers(0, N, size=(n_tuples, 3))
            m_iso = np.where(axb[:, 0] == axb[:, 2],
                             cols[axb[:, 0], axb[:, 1]], 0.0)
            self._d[2] = {
                "xy": xy, "m_av": m_av,
                "av_denom": le**b2 * sq[xy[:, 0], xy[:, 1]] ** 2 / le,
                "axb": axb, "m_iso": m_iso,
                "iso_denom": le**a2 * sq[axb[:, 0], axb[:, 1]]
                * sq[axb[:, 1], axb[:, 2]] / np.sqrt(le),
            }

        if 3 in self.ks:
            a3, b3 = loss_exponents(3, K)
            batch = SpecialChainMTerms(p, (pt, pt.conj(), pt), stability)
            n_mid = max(1, min(n_mid, n_tuples))
            per = max(1, n_tuples // n_mid)
            groups = []
            for y in rng.integers(0, N, size=n_mid):
                y = int(y)
                xw = rng.integers(0, N, size=(per, 2))
                m_av = batch.k3_traces_pinned(y)[xw[:, 1], xw[:, 0]]
                denom = le**b3 * sq[xw[:, 0], y] * sq[y, xw[:, 1]] \
                    * sq[xw[:, 1], xw[:, 0]] / le**1.5
                groups.append({"y": y, "xw": xw, "m_av": m_av, "denom": denom})
            axyb = rng.integers(0, N, size=(max(4, n_tuples // 4), 4))
            m_iso = np.array([batch.k3_diag(int(x), int(y))[a] if a == b else 0.0
                              for a, x, y, b in axyb])
            self._d[3] = {
                "groups": groups, "axyb": axyb, "m_iso": m_iso,
                "iso_denom": le**a3 * sq[axyb[:, 0], axyb[:, 1]]
                * sq[axyb[:, 1], axyb[:, 2]] * sq[axyb[:, 2], axyb[:, 3]] / le,
            }

    def measure(self, G: np.ndarray, detail: bool = False) -> dict:
        """Psi maxima over the fixed tuple sets for one materialized G(z).

        With detail=True the result also carries "records": one row per
        (k, kind) naming the maximizing tuple, its raw fluctuation and psi,
        in the streamable report format.
        """
        p, pt = self.p, self.pt
        S = p.entries
        Gd = G.conj().T  # resolvent at conj(z)
        out = {}
        records = []

        def record(k, kind, tuple_idx, raw, psi):
            if detail:
                records.append({"k": k, "kind": kind,
                                "tuple": "|".join(str(int(i)) for i in tuple_idx),
                                "value": float(raw), "psi": float(psi)})

        if 1 in self.ks:
            d = self._d[1]
            vals = np.abs(S @ (np.diagonal(G) - pt.m))
            j = int(np.argmax(vals))
            out["law1_abs"] = float(vals[j])
            out[(1, "av")] = out["law1_abs"] * d["av_factor"]
            record(1, "av", (j,), vals[j], out[(1, "av")])
            a_idx, b_idx = d["ab"].T
            num = np.abs(G[a_idx, b_idx] - pt.m * (a_idx == b_idx))
            ratio = num / d["iso_denom"]
            j = int(np.argmax(ratio))
            out[(1, "iso")] = float(ratio[j])
            record(1, "iso", d["ab"][j], num[j], ratio[j])

        if 2 in self.ks:
            d = self._d[2]
            core = Gd * G.T
            xs, ys = d["xy"].T
            rows = S[xs] @ core
            num = np.abs(np.einsum("tc,tc->t", rows, S[ys]) - d["m_av"])
            ratio = num / d["av_denom"]
            j = int(np.argmax(ratio))
            out[(2, "av")] = float(ratio[j])
            record(2, "av", d["xy"][j], num[j], ratio[j])
            a_idx, x_idx, b_idx = d["axb"].T
            vals = np.einsum("tc,tc->t", G[a_idx] * S[x_idx], Gd[:, b_idx].T)
            num = np.abs(vals - d["m_iso"])
            ratio = num / d["iso_denom"]
            j = int(np.argmax(ratio))
            out[(2, "iso")] = float(ratio[j])
            record(2, "iso", d["axb"][j], num[j], ratio[j])

        if 3 in self.ks:
            d = self._d[3]
            best, best_rec = 0.0, None
            for g in d["groups"]:
                mid = (Gd * S[g["y"]][None, :]) @ G
                core = mid * G.T
                xs, ws = g["xw"].T
                rows = S[xs] @ core
                num = np.abs(np.einsum("tc,tc->t", rows, S[ws]) - g["m_av"])
                ratio = num / g["denom"]
                j = int(np.argmax(ratio))
                if ratio[j] > best:
                    best = float(ratio[j])
                    best_rec = ((g["xw"][j][0], g["y"], g["xw"][j][1]), num[j])
            out[(3, "av")] = best
            if best_rec is not None:
                record(3, "av", best_rec[0], best_rec[1], best)
            a_idx, x_idx, y_idx, b_idx = d["axyb"].T
            right = Gd @ (S[y_idx].T * G[:, b_idx])
            vals = np.einsum("tc,ct->t", G[a_idx] * S[x_idx], right)
            num = np.abs(vals - d["m_iso"])
            ratio = num / d["iso_denom"]
            j = int(np.argmax(ratio))
            out[(3, "iso")] = float(ratio[j])
            record(3, "iso", d["axyb"][j], num[j], ratio[j])

        if detail:
            out["records"] = records
        return out


def write_psi_csv(path, records) -> None:
    """Stream per-sample Psi records as CSV {seed, k, kind, tuple, value, psi}."""
    with open(path, "w") as fh:
        fh.write("seed,k,kind,tuple,value,psi\n")
        for r in records:
            fh.write(f"{r['seed']},{r['k']},{r['kind']},{r['tuple']},"
                     f"{r['value']:.12g},{r['psi']:.12g}\n")
