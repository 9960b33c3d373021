"""Diagonal-Gaussian mixture density kernels.

These are the inner loops of EM and of the Monte Carlo density grid. A
compiled Cython build is used when available; otherwise the numpy
implementation in ``_kernels_py`` runs. Setting ``GMVAE_PURE_PYTHON=1``
forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py as python_impl

try:
    if os.environ.get("GMVAE_PURE_PYTHON"):
        raise ImportError("pure-python mode requested")
    from . import _kernels as compiled_impl
except ImportError:
    compiled_impl = None

BACKEND = "cython" if compiled_impl is not None else "python"
_impl = compiled_impl if compiled_impl is not None else python_impl


def _prep(points, means, variances):
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    means = np.ascontiguousarray(np.atleast_2d(means), dtype=np.float64)
    variances = np.ascontiguousarray(np.atleast_2d(variances), dtype=np.float64)
    if means.shape != variances.shape or points.shape[1] != means.shape[1]:
        raise ValueError(f"shape mismatch: points {points.shape}, means {means.shape}, variances {variances.shape}")
    if not (variances > 0).all():
        raise ValueError("variances must be strictly positive")
    return points, means, variances


def component_logpdf(points, means, variances) -> np.ndarray:
    """``out[i, k] = log N(points[i] | means[k], diag(variances[k]))``."""
    return _impl.component_logpdf(*_prep(points, means, variances))


def mixture_logpdf(points, means, variances, log_weights) -> np.ndarray:
    """``out[i] = log sum_k exp(log_weights[k]) N(points[i] | means[k], diag(variances[k]))``."""
    points, means, variances = _prep(points, means, variances)
    log_weights = np.ascontiguousarray(log_weights, dtype=np.float64)
    if log_weights.shape != (means.shape[0],):
        raise ValueError(f"log_weights must have shape ({means.shape[0]},)")
    return _impl.mixture_logpdf(points, means, variances, log_weights)
