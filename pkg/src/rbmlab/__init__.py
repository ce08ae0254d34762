"""Numerical laboratory for Hermitian random band matrices.

Modules
-------
ensemble    variance profiles and matrix sampling
semicircle  scalar self-consistent equation and spectral domain
kernels     two-point kernels, control functions, norms, propagators
mterms      deterministic approximations of resolvent chains
chains      random chain evaluation and Psi control quantities
flow        characteristic flow and Ornstein-Uhlenbeck evolution
harness     Monte Carlo experiments, reports, figures

Submodules load lazily so the command line can cap the BLAS thread pool
before numpy is imported.
"""

import importlib

from .errors import NumericalError, StatisticsError

__version__ = "0.1.0"

_SUBMODULES = ("chains", "ensemble", "flow", "harness", "kernels", "mterms",
               "plotting", "semicircle")

__all__ = [*_SUBMODULES, "NumericalError", "StatisticsError", "__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
