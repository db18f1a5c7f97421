"""Stochastic geodesics on Riemannian manifolds and Lie groups.

Set ``STOGEO_THREADS`` before the first import to cap the BLAS thread
pools that numpy uses for the vectorized path ensembles.
"""
import os as _os

_threads = _os.environ.get("STOGEO_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import ChartError, ConfigError, NumericalError, StogeoError  # noqa: E402

__all__ = ["ChartError", "ConfigError", "NumericalError", "StogeoError"]
__version__ = "0.1.0"
