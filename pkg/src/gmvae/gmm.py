"""Diagonal-covariance Gaussian mixture fitted by expectation-maximisation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import ConfigError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6


@dataclass
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def k(self):
        return self.weights.shape[0]

    def to_dict(self):
        return {
            "k": int(self.k),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float), np.asarray(d["variances"], float))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class EmResult:
    params: GmmParams
    trace: list
    converged: bool
    reseeds: int


def _log_joint(params, x):
    return kernels.component_logpdf(x, params.means, params.variances) + np.log(params.weights)


def responsibilities(params: GmmParams, x) -> np.ndarray:
    lj = _log_joint(params, np.atleast_2d(x))
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def log_likelihood(params: GmmParams, x) -> float:
    """Mean per-point log-likelihood."""
    return float(logsumexp(_log_joint(params, np.atleast_2d(x)), axis=1).mean())


def gmm_density(params: GmmParams, points) -> np.ndarray:
    points = np.atleast_2d(points)
    return np.exp(kernels.mixture_logpdf(points, params.means, params.variances, np.log(params.weights)))


def kmeans_pp_centers(x, k, rng):
    """k-means++ seeding: each new centre drawn with probability proportional
    to squared distance from the nearest existing centre."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def em_fit(data, k, max_iters=500, tol=1e-8, seed=0) -> EmResult:
    """Fit a K-component diagonal GMM.

    Stops after ``max_iters`` iterations or once the mean log-likelihood
    improves by less than ``tol``. ``trace[i]`` is the mean log-likelihood
    of the parameters after iteration ``i``. A component whose total
    responsibility vanishes is re-seeded at the worst-explained point
    (lowest mixture density) with the global variance.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 1 or n < k:
        raise ConfigError(f"need N >= K >= 1, got N={n}, K={k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    params = GmmParams(np.full(k, 1.0 / k), kmeans_pp_centers(x, k, rng), np.tile(global_var, (k, 1)))
    trace = []
    reseeds = 0
    converged = False
    for _ in range(max_iters):
        lj = _log_joint(params, x)
        ll = logsumexp(lj, axis=1, keepdims=True)
        resp = np.exp(lj - ll)
        nk = resp.sum(axis=0)
        means = (resp.T @ x) / np.maximum(nk, 1e-300)[:, None]
        variances = np.empty((k, d))
        for j in range(k):
            diff = x - means[j]
            variances[j] = (resp[:, j : j + 1] * diff * diff).sum(axis=0) / max(nk[j], 1e-300)
        weights = nk / n
        for j in np.flatnonzero(nk < 1e-8):
            worst = int(np.argmin(ll[:, 0]))
            means[j] = x[worst]
            variances[j] = global_var
            weights[j] = 1.0 / n
            reseeds += 1
            log.info("re-seeded empty component %d at point %d", j, worst)
        weights = weights / weights.sum()
        params = GmmParams(weights, means, np.maximum(variances, VARIANCE_FLOOR))
        trace.append(log_likelihood(params, x))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
    return EmResult(params, trace, converged, reseeds)
