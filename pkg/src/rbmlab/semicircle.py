"""Scalar self-consistent equation, semicircle density, bulk spectral domain.

The Stieltjes transform m(z) of the semicircle law solves m^2 + z m + 1 = 0
with sign(Im m) = sign(Im z); because the column sums of every variance
profile here are exactly 1, m(z) * I is also the exact deterministic
approximation of the resolvent.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "stieltjes_m",
    "semicircle_density",
    "in_bulk_domain",
    "localization_length",
    "SpectralPoint",
    "spectral_point",
]


def stieltjes_m(z):
    """Root of m^2 + z*m + 1 = 0 with (Im m)(Im z) > 0 and |m| < 1.

    Closed-form quadratic with an explicit branch fix: the two roots have
    product 1, so the Stieltjes branch is the root inside the unit disk
    (for real z outside [-2, 2] it is the root of smaller modulus).
    Raises ValueError for z on the branch cut [-2, 2].
    """
    z = complex(z)
    if z.imag == 0.0 and abs(z.real) <= 2.0:
        raise ValueError("z on the spectral segment [-2, 2]; m is not defined there")
    s = np.sqrt(z * z - 4.0 + 0j)
    # big root without cancellation, small root by the product-of-roots identity
    big = -(z + s) / 2.0 if abs(z + s) >= abs(z - s) else -(z - s) / 2.0
    m = 1.0 / big
    if z.imag != 0.0 and m.imag * z.imag < 0:
        m = big  # defensive; cannot happen for the small root
    return m


def semicircle_density(E):
    """Semicircle density (1/2pi) * sqrt(max(4 - E^2, 0)); vectorized."""
    E = np.asarray(E, dtype=float)
    out = np.sqrt(np.clip(4.0 - E * E, 0.0, None)) / (2.0 * np.pi)
    return out if out.ndim else float(out)


def localization_length(W, N, eta):
    """Resolvent length scale ell(eta) = min(W / sqrt(eta), N)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return float(min(W / np.sqrt(eta), N))


def in_bulk_domain(z, kappa, delta0, C0, N) -> bool:
    """Membership in the bulk spectral domain.

    Requires N^(delta0-1) <= |Im z|, |z| <= C0, and |(m/|m|)^2 - 1| >= kappa.
    The last criterion (rather than a window on Re z) keeps the domain
    invariant under the backward characteristic flow.
    """
    if kappa <= 0 or delta0 <= 0 or C0 <= 0:
        raise ValueError("kappa, delta0, C0 must be positive")
    z = complex(z)
    eta = abs(z.imag)
    if eta < N ** (-1.0 + delta0) or abs(z) > C0:
        return False
    m = stieltjes_m(z)
    phase = m / abs(m)
    return abs(phase * phase - 1.0) >= kappa


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter with cached m(z), eta = |Im z| and ell(eta)."""

    z: complex
    m: complex
    eta: float
    ell: float

    def conj(self) -> "SpectralPoint":
        return SpectralPoint(z=self.z.conjugate(), m=self.m.conjugate(),
                             eta=self.eta, ell=self.ell)

    @property
    def ell_eta(self) -> float:
        return self.ell * self.eta


def spectral_point(z, N, W) -> SpectralPoint:
    """Construct a SpectralPoint for the geometry (N, W); requires Im z != 0."""
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("spectral points must lie off the real axis")
    eta = abs(z.imag)
    return SpectralPoint(z=z, m=stieltjes_m(z), eta=eta,
                         ell=localization_length(W, N, eta))
