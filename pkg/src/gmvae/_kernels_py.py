"""Pure-numpy versions of the compiled mixture kernels."""

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2 * np.pi)


def _rows_per_chunk(k, d, budget=4_000_000):
    return max(1, budget // max(1, k * d))


def component_logpdf(points, means, variances):
    n, d = points.shape
    k = means.shape[0]
    norm = -0.5 * d * LOG_2PI - 0.5 * np.log(variances).sum(axis=1)
    inv = 1.0 / variances
    out = np.empty((n, k))
    step = _rows_per_chunk(k, d)
    for i in range(0, n, step):
        diff = points[i : i + step, None, :] - means[None, :, :]
        out[i : i + step] = norm - 0.5 * (diff * diff * inv).sum(axis=2)
    return out


def mixture_logpdf(points, means, variances, log_weights):
    n, d = points.shape
    out = np.empty(n)
    step = _rows_per_chunk(means.shape[0], d)
    for i in range(0, n, step):
        lp = component_logpdf(points[i : i + step], means, variances) + log_weights
        out[i : i + step] = logsumexp(lp, axis=1)
    return out
