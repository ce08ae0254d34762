"""Characteristic flow, Ornstein-Uhlenbeck matrix evolution, flow identities.

The spectral parameter follows dz/dt = -z/2 - m(z); along its trajectories
m grows exactly like e^{t/2} while eta shrinks linearly toward the real
axis.  The matrix moves by an Ornstein-Uhlenbeck process whose transition
kernel is known in closed form, so samples are evolved exactly rather than
by SDE time stepping.
"""

import bisect
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError
from .ensemble import (EntryDistribution, MatrixSample, SymmetryClass,
                       VarianceProfile, _normalized_matrix)
from .semicircle import SpectralPoint, localization_length, spectral_point, stieltjes_m

__all__ = [
    "Trajectory",
    "solve_characteristic",
    "ou_evolve",
    "check_theta_ode",
    "flow_psi_trace",
]


def _velocity(z: complex) -> complex:
    return -0.5 * z - stieltjes_m(z)


def _rk4_step(z: complex, h: float) -> complex:
    k1 = _velocity(z)
    k2 = _velocity(z + 0.5 * h * k1)
    k3 = _velocity(z + 0.5 * h * k2)
    k4 = _velocity(z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class Trajectory:
    """Dense characteristic trajectory from t = 0 to t = T.

    eta is strictly decreasing forward in time; the phase m_t/|m_t| is a
    flow invariant.  t_star marks the crossing of the critical scale
    eta = (W/N)^2 when the trajectory crosses it.
    """

    times: np.ndarray
    zs: np.ndarray
    N: int
    W: int
    t_star: Optional[float] = None

    def __post_init__(self):
        self.times.setflags(write=False)
        self.zs.setflags(write=False)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def z_at(self, t: float) -> complex:
        """Trajectory point at arbitrary t; one local RK4 substep off the grid."""
        if not (self.times[0] <= t <= self.times[-1] + 1e-12):
            raise ValueError(f"t = {t} outside trajectory range")
        i = min(bisect.bisect_right(self.times, t) - 1, len(self.times) - 1)
        dt = t - self.times[i]
        z = complex(self.zs[i])
        return z if dt == 0.0 else _rk4_step(z, dt)

    def point_at(self, t: float) -> SpectralPoint:
        return spectral_point(self.z_at(t), self.N, self.W)

    def chain_points(self, pattern: Sequence[str]):
        """Callable t -> tuple of SpectralPoints, one per pattern slot.

        Pattern entries are "z" for the trajectory point and "zbar" for its
        conjugate; suitable as the points_at argument of flow identities.
        """
        bad = set(pattern) - {"z", "zbar"}
        if bad:
            raise ValueError(f"pattern entries must be 'z' or 'zbar', got {bad}")

        def points(t):
            pt = self.point_at(t)
            return tuple(pt if s == "z" else pt.conj() for s in pattern)

        return points

    def etas(self) -> np.ndarray:
        return np.abs(self.zs.imag)


def solve_characteristic(z_T: complex, T: float, step: float = 1e-3, *,
                         N: int, W: int, C0: float = 10.0) -> Trajectory:
    """Integrate the characteristic backward from (T, z_T) to t = 0 by RK4.

    The forward trajectory is exposed on a uniform grid with step <= 1e-3.
    Raises NumericalError if the backward path leaves |z| <= C0 or touches
    the real axis before t = 0 (neither occurs for bulk terminal data).
    Records t_star where eta crosses (W/N)^2 if the crossing happens.
    """
    z_T = complex(z_T)
    if z_T.imag == 0.0:
        raise ValueError("terminal point must be off the real axis")
    if step <= 0 or step > 1e-3:
        raise ValueError("step must be positive and at most 1e-3")
    n = max(1, int(np.ceil(T / step)))
    h = T / n
    zs = np.empty(n + 1, dtype=complex)
    zs[n] = z_T
    z = z_T
    for i in range(n, 0, -1):
        z = _rk4_step(z, -h)
        if abs(z) > C0:
            raise NumericalError(f"trajectory left |z| <= {C0} at t = {(i - 1) * h:.4f}")
        if abs(z.imag) < 1e-12:
            raise NumericalError(f"trajectory touched the real axis at t = {(i - 1) * h:.4f}")
        zs[i - 1] = z
    times = np.linspace(0.0, T, n + 1)
    traj = Trajectory(times=times, zs=zs, N=N, W=W)
    crit = (W / N) ** 2
    etas = traj.etas()
    t_star = None
    if etas[-1] < crit < etas[0]:
        lo, hi = 0.0, T  # eta is strictly decreasing: bisect eta(t) - crit
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if abs(traj.z_at(mid).imag) > crit:
                lo = mid
            else:
                hi = mid
        t_star = 0.5 * (lo + hi)
    return Trajectory(times=times, zs=zs, N=N, W=W, t_star=t_star)


def ou_evolve(s: MatrixSample, dt: float, seed: int) -> MatrixSample:
    """Exact Ornstein-Uhlenbeck transition on the normalized matrix.

    h_{t+dt} = e^{-dt/2} h_t + sqrt(1 - e^{-dt}) g with g a fresh
    standardized Gaussian draw of the same symmetry class; the first two
    moments of H are preserved exactly for every dt >= 0.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    lineage = s.lineage + (("ou", float(dt), int(seed)),)
    if dt == 0.0:
        return MatrixSample(values=s.values, h=s.h, profile=s.profile,
                            symmetry=s.symmetry, distribution=s.distribution,
                            seed=s.seed, lineage=lineage)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    g = _normalized_matrix(s.profile.N, s.symmetry, EntryDistribution.GAUSSIAN, rng)
    h = np.exp(-dt / 2.0) * s.h + np.sqrt(-np.expm1(-dt)) * g
    H = s.profile.sqrt_entries * h
    return MatrixSample(values=H, h=h, profile=s.profile, symmetry=s.symmetry,
                        distribution=s.distribution, seed=s.seed, lineage=lineage)


def check_theta_ode(p: VarianceProfile, trajectory: Trajectory, t: float, h: float,
                    kind: str = "theta") -> float:
    """Central-difference residual of dTheta/dt = (I + Theta) Theta.

    Uses the same-point kernel Theta(z_t) (or Xi(z_t)); returns the max
    entrywise deviation relative to the max entry of (I + Theta) Theta.
    Second order in h by construction.
    """
    from .kernels import two_point_kernel

    def kernel_at(s):
        pt = trajectory.point_at(s)
        return two_point_kernel(p, pt, pt, kind).values

    plus, minus, mid = kernel_at(t + h), kernel_at(t - h), kernel_at(t)
    fd = (plus - minus) / (2.0 * h)
    rhs = (np.eye(p.N) + mid) @ mid
    return float(np.max(np.abs(fd - rhs)) / np.max(np.abs(rhs)))


def flow_psi_trace(p: VarianceProfile, z_T: complex, *, T: float = 1.0,
                   n_steps: int = 6, batch: int = 20, seed: int = 0, k: int = 2,
                   K: int = 8, sym=SymmetryClass.COMPLEX_HERMITIAN,
                   dist=EntryDistribution.GAUSSIAN, ups_family: str = "exponential",
                   ups_D: float = 6.0, n_tuples: int = 64, step: float = 1e-3) -> list:
    """Psi time series along one characteristic under the OU evolution.

    A batch of samples is evolved by the exact OU transition between the
    grid times; at each time the averaged and entrywise Psi of the length-k
    special-observable template chain are recomputed at z_t.  Returns rows
    {t, re, im, eta, ell, psi_av, psi_iso} with eta strictly decreasing.
    """
    from .chains import PsiSampler, eigendecompose
    from .ensemble import sample_matrix
    from .kernels import fitted_upsilon

    if k not in (1, 2, 3):
        raise ValueError("template chain length must be 1, 2, or 3")
    traj = solve_characteristic(z_T, T, step, N=p.N, W=p.W)
    times = np.linspace(0.0, T, n_steps)
    samples = [sample_matrix(p, sym, dist, seed + i) for i in range(batch)]
    rows = []
    for j, t in enumerate(times):
        if j > 0:
            dt = float(times[j] - times[j - 1])
            samples = [ou_evolve(s, dt, seed + 7919 * (j * batch + i))
                       for i, s in enumerate(samples)]
        pt = traj.point_at(float(t))
        ups = fitted_upsilon(p, pt, family=ups_family, D=ups_D)
        sampler = PsiSampler(p, pt, ups, K, ks=(k,), n_tuples=n_tuples, seed=seed)
        psi_av = psi_iso = 0.0
        for s in samples:
            cache = eigendecompose(s)
            G = cache.resolvent(pt.z)
            stats = sampler.measure(G)
            psi_av = max(psi_av, stats[(k, "av")])
            psi_iso = max(psi_iso, stats[(k, "iso")])
        rows.append({"t": float(t), "re": pt.z.real, "im": pt.z.imag,
                     "eta": pt.eta, "ell": pt.ell,
                     "psi_av": psi_av, "psi_iso": psi_iso})
    return rows
