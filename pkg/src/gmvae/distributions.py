"""Log-densities, KL divergences and the mixture-component posterior.

Every function takes and returns :class:`~gmvae.autodiff.Tensor` objects so
the results stay differentiable. Reductions run over the last axis only:
a ``(batch, dim)`` input yields one value per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)
BERNOULLI_CLAMP = 1e-7


@dataclass
class DiagGaussian:
    mean: ad.Tensor
    var: ad.Tensor

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ShapeError(f"mean {self.mean.shape} and variance {self.var.shape} differ")
        if not (self.var.value > 0).all():
            raise DomainError("variance must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> ad.Tensor:
        return ad.sqrt(self.var)

    def component(self, k: int) -> DiagGaussian:
        """Select component ``k`` from a ``(batch, K, dim)`` stack."""
        if self.mean.ndim != 3:
            raise ShapeError("component() needs a (batch, K, dim) stack")
        b, _, d = self.mean.shape
        pick = lambda t: ad.reshape(ad.slice(t, k, k + 1, axis=1), (b, d))  # noqa: E731
        return DiagGaussian(pick(self.mean), pick(self.var))


@dataclass
class CategoricalPosterior:
    probs: ad.Tensor
    log_probs: ad.Tensor

    @property
    def k(self) -> int:
        return self.probs.shape[-1]


def _check_var(*gs):
    for g in gs:
        if not (g.var.value > 0).all():
            raise DomainError("variance must be strictly positive")


def gaussian_logpdf(x: ad.Tensor, g: DiagGaussian) -> ad.Tensor:
    """Sum over the last axis of the diagonal-Gaussian log-density."""
    if x.shape != g.mean.shape:
        raise ShapeError(f"point {x.shape} and Gaussian {g.mean.shape} differ")
    _check_var(g)
    sq = ad.square(x - g.mean) / g.var
    per_dim = ad.scale(ad.log(g.var) + sq, -0.5) - 0.5 * LOG_2PI
    return ad.sum(per_dim, axis=-1)


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> ad.Tensor:
    """KL(q || p) in closed form, summed over the last axis."""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"KL between shapes {q.mean.shape} and {p.mean.shape}")
    _check_var(q, p)
    ratio = q.var / p.var
    per_dim = ratio - ad.log(ratio) + ad.square(q.mean - p.mean) / p.var - 1.0
    return ad.scale(ad.sum(per_dim, axis=-1), 0.5)


def kl_to_standard_normal(q: DiagGaussian) -> ad.Tensor:
    _check_var(q)
    per_dim = q.var - ad.log(q.var) + ad.square(q.mean) - 1.0
    return ad.scale(ad.sum(per_dim, axis=-1), 0.5)


def clamp(x: ad.Tensor, lo: float, hi: float) -> ad.Tensor:
    return -ad.maximum_const(-ad.maximum_const(x, lo), -hi)


def bernoulli_loglik(y: ad.Tensor, probs: ad.Tensor) -> ad.Tensor:
    """Sum over the last axis of ``y ln p + (1-y) ln(1-p)``, with ``p``
    clamped to ``[1e-7, 1 - 1e-7]``."""
    if y.shape != probs.shape:
        raise ShapeError(f"targets {y.shape} and probabilities {probs.shape} differ")
    p = clamp(probs, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
    ll = y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)
    return ad.sum(ll, axis=-1)


def reparam_sample(g: DiagGaussian, noise) -> ad.Tensor:
    """``mean + std * noise``; ``noise`` is a standard-normal array or tensor."""
    if not isinstance(noise, ad.Tensor):
        noise = g.mean.graph.const(noise)
    if noise.shape != g.mean.shape:
        raise ShapeError(f"noise {noise.shape} does not match Gaussian {g.mean.shape}")
    return g.mean + g.std * noise


def z_posterior(x: ad.Tensor, components: DiagGaussian, log_pi=None) -> CategoricalPosterior:
    """Posterior over mixture components for points ``x`` of shape (batch, dim).

    ``components`` holds (batch, K, dim) means and variances. The uniform
    prior is used unless ``log_pi`` (length K) is given. Normalisation is
    done in log space.
    """
    if components.mean.ndim != 3:
        raise ShapeError(f"components must be (batch, K, dim), got {components.mean.shape}")
    b, k, d = components.mean.shape
    if k == 0:
        raise ConfigError("need at least one mixture component")
    if x.shape != (b, d):
        raise ShapeError(f"points {x.shape} do not match components {components.mean.shape}")
    logits = gaussian_logpdf(ad.expand(x, 1, k), components)
    if log_pi is not None:
        log_pi = np.asarray(log_pi, dtype=np.float64)
        if log_pi.shape != (k,):
            raise ShapeError(f"log prior must have shape ({k},)")
        logits = ad.add_bias(logits, x.graph.const(log_pi))
    return categorical_from_logits(logits)


def categorical_from_logits(logits: ad.Tensor) -> CategoricalPosterior:
    return CategoricalPosterior(ad.softmax(logits), ad.log_softmax(logits))


def kl_categorical_uniform(c: CategoricalPosterior, k: int | None = None) -> ad.Tensor:
    """KL(c || uniform over K), per row. Zero-probability entries contribute 0."""
    k = c.k if k is None else k
    return ad.sum(c.probs * (c.log_probs + math.log(k)), axis=-1)
