"""The Gaussian-mixture VAE: networks, evidence lower bound, clustering and sampling.

Generative chain: ``w ~ N(0, I)``, ``z ~ Uniform(K)``,
``x | w, z ~ N(mu_z(w), diag(var_z(w)))``, ``y | x ~ decoder(x)``.
Inference uses ``q(x | y) q(w | y)`` and the exact component posterior
``p(z | x, w)``, so no discrete variable is ever sampled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from . import nn
from .errors import ConfigError, NumericalError, ShapeError


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    k: int
    n_x: int
    n_w: int
    likelihood: str
    recognition_hidden: tuple = (120, 120)
    mixture_hidden: tuple = (120,)
    decoder_hidden: tuple = (120, 120)

    def __post_init__(self):
        if min(self.input_dim, self.k, self.n_x, self.n_w) < 1:
            raise ConfigError(f"architecture dimensions must be positive: {self}")
        if self.likelihood not in ("gaussian", "bernoulli"):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")

    @classmethod
    def synthetic(cls, k=5):
        return cls(input_dim=2, k=k, n_x=2, n_w=2, likelihood="gaussian")

    @classmethod
    def mnist(cls, k=16):
        # dense stand-in for the convolutional stacks; latent widths unchanged
        return cls(
            input_dim=784,
            k=k,
            n_x=200,
            n_w=150,
            likelihood="bernoulli",
            recognition_hidden=(500, 500),
            mixture_hidden=(500,),
            decoder_hidden=(500, 500),
        )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("recognition_hidden", "mixture_hidden", "decoder_hidden"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class GmvaeModel:
    arch: Architecture
    params: dict | None = None

    def __post_init__(self):
        a = self.arch
        self.phi = nn.recognition_net(a.input_dim, a.recognition_hidden, a.n_x, a.n_w)
        self.beta = nn.mixture_net(a.n_w, a.mixture_hidden, a.n_x, a.k)
        self.theta = nn.decoder_net(a.n_x, a.decoder_hidden, a.input_dim, a.likelihood)
        if self.params is None:
            self.params = nn.init_params(self.nets, 0)

    @classmethod
    def create(cls, arch: Architecture, seed: int = 0):
        model = cls(arch, {})
        model.params = nn.init_params(model.nets, seed)
        return model

    @property
    def nets(self):
        return [self.phi, self.beta, self.theta]

    @property
    def k(self):
        return self.arch.k

    @property
    def n_x(self):
        return self.arch.n_x

    @property
    def n_w(self):
        return self.arch.n_w

    def copy(self):
        return GmvaeModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def n_params(self):
        return sum(net.n_params() for net in self.nets)


@dataclass(frozen=True)
class ElboBreakdown:
    """Per-data-point ELBO terms in nats.

    ``total`` is accumulated as ``((reconstruction + conditional_prior) +
    w_prior) + z_prior``. ``z_kl`` is the unclamped expected
    KL(p(z|x,w) || p(z)), reported as a positive number.
    """

    reconstruction: float
    conditional_prior: float
    w_prior: float
    z_prior: float
    total: float
    z_kl: float


# graph-level building blocks; ``p`` is a dict of bound parameter tensors


def _as_tensor(graph, y):
    return y if isinstance(y, ad.Tensor) else graph.const(np.atleast_2d(np.asarray(y, dtype=np.float64)))


def recognize_t(model, p, y):
    if y.shape[-1] != model.arch.input_dim:
        raise ShapeError(f"expected observations of width {model.arch.input_dim}, got {y.shape[-1]}")
    h = model.phi(p, y)
    return dist.DiagGaussian(h["mu_x"], h["var_x"]), dist.DiagGaussian(h["mu_w"], h["var_w"])


def mixture_params_t(model, p, w):
    """All K components from one pass of the mixture network: (batch, K, N_x)."""
    if w.shape[-1] != model.n_w:
        raise ShapeError(f"expected w of width {model.n_w}, got {w.shape[-1]}")
    h = model.beta(p, w)
    shape = (w.shape[0], model.k, model.n_x)
    return dist.DiagGaussian(ad.reshape(h["means"], shape), ad.reshape(h["vars"], shape))


def decode_t(model, p, x):
    if x.shape[-1] != model.n_x:
        raise ShapeError(f"expected x of width {model.n_x}, got {x.shape[-1]}")
    h = model.theta(p, x)
    if model.arch.likelihood == "gaussian":
        return dist.DiagGaussian(h["mean"], h["var"])
    return h["probs"]


def log_likelihood_t(model, y, decoded):
    if model.arch.likelihood == "gaussian":
        return dist.gaussian_logpdf(y, decoded)
    return dist.bernoulli_loglik(y, decoded)


def _tile(t, m):
    return t if m == 1 else ad.concat([t] * m, axis=0)


# numpy-facing wrappers; each evaluates in a fresh gradient-free graph


def _frozen(model):
    g = ad.Graph()
    return g, nn.bind(g, model.params, trainable=False)


def recognize(model, y):
    g, p = _frozen(model)
    return recognize_t(model, p, _as_tensor(g, y))


def mixture_params(model, w):
    g, p = _frozen(model)
    return mixture_params_t(model, p, _as_tensor(g, w))


def decode(model, x):
    g, p = _frozen(model)
    return decode_t(model, p, _as_tensor(g, x))


# objective


def draw_noise(model, batch_size, m, rng):
    """Standard-normal draws for one ELBO evaluation, in a fixed order."""
    return {
        "recon": rng.standard_normal((batch_size, model.n_x)),
        "x": rng.standard_normal((m * batch_size, model.n_x)),
        "w": rng.standard_normal((m * batch_size, model.n_w)),
    }


def elbo_graph(model, batch, m, lam, noise, graph=None, trainable=True):
    """Build the negative-ELBO loss on a tape.

    Returns ``(graph, loss, terms)`` where ``terms`` maps each ELBO term name
    to its scalar tensor. The reconstruction term uses one draw of x; the
    conditional-prior and z-prior expectations share ``m`` draws of (x, w).
    """
    if m < 1:
        raise ConfigError(f"number of Monte Carlo draws must be >= 1, got {m}")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    g = graph if graph is not None else ad.Graph()
    p = nn.bind(g, model.params, trainable=trainable)
    y = _as_tensor(g, batch)
    b = y.shape[0]
    k = model.k

    q_x, q_w = recognize_t(model, p, y)

    x_rec = dist.reparam_sample(q_x, noise["recon"])
    rec = ad.mean(log_likelihood_t(model, y, decode_t(model, p, x_rec)))

    w_kl = ad.mean(dist.kl_to_standard_normal(q_w))

    mu_x, var_x = _tile(q_x.mean, m), _tile(q_x.var, m)
    x_j = dist.reparam_sample(dist.DiagGaussian(mu_x, var_x), noise["x"][: m * b])
    w_j = dist.reparam_sample(dist.DiagGaussian(_tile(q_w.mean, m), _tile(q_w.var, m)), noise["w"][: m * b])
    comps = mixture_params_t(model, p, w_j)
    post = dist.z_posterior(x_j, comps)

    q_x_per_k = dist.DiagGaussian(ad.expand(mu_x, 1, k), ad.expand(var_x, 1, k))
    kl_per_k = dist.kl_diag_gaussians(q_x_per_k, comps)
    cond_kl = ad.mean(ad.sum(post.probs * kl_per_k, axis=-1))
    z_kl = ad.mean(dist.kl_categorical_uniform(post, k))
    z_term = -ad.maximum_const(z_kl, lam)

    total = ((rec - cond_kl) - w_kl) + z_term
    terms = {
        "reconstruction": rec,
        "conditional_prior": -cond_kl,
        "w_prior": -w_kl,
        "z_prior": z_term,
        "total": total,
        "z_kl": z_kl,
    }
    return g, -total, terms


def breakdown(terms) -> ElboBreakdown:
    vals = {name: float(t.value) for name, t in terms.items()}
    for name, v in vals.items():
        if not math.isfinite(v):
            raise NumericalError(f"non-finite ELBO term {name}", term=name)
    return ElboBreakdown(**vals)


def elbo(model, batch, m, lam, rng) -> ElboBreakdown:
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    noise = draw_noise(model, batch.shape[0], m, rng)
    _, _, terms = elbo_graph(model, batch, m, lam, noise, trainable=False)
    return breakdown(terms)


def loss_and_grads(model, batch, m, lam, rng):
    """One stochastic evaluation of the negative ELBO and its parameter gradients."""
    noise = draw_noise(model, batch.shape[0], m, rng)
    g, loss, terms = elbo_graph(model, batch, m, lam, noise)
    result = breakdown(terms)
    grads = g.backward(loss)
    return result, grads


# clustering and generation


def cluster_assign(model, y, m=10, rng=None, chunk=None):
    """Average the component posterior over ``m`` draws of (x, w) from q.

    ``m = 0`` uses the posterior means instead of draws. Returns
    ``(assignments, posteriors)``; ties go to the lowest component index.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if m > 0 and rng is None:
        raise ConfigError("cluster_assign with m > 0 needs an rng")
    draws = max(m, 1)
    if chunk is None:
        chunk = max(1, 4_000_000 // (draws * model.k * model.n_x))
    out = np.empty((y.shape[0], model.k))
    for start in range(0, y.shape[0], chunk):
        yb = y[start : start + chunk]
        g, p = _frozen(model)
        q_x, q_w = recognize_t(model, p, g.const(yb))
        if m == 0:
            x, w = q_x.mean, q_w.mean
        else:
            n = yb.shape[0]
            x = dist.reparam_sample(
                dist.DiagGaussian(_tile(q_x.mean, m), _tile(q_x.var, m)), rng.standard_normal((m * n, model.n_x))
            )
            w = dist.reparam_sample(
                dist.DiagGaussian(_tile(q_w.mean, m), _tile(q_w.var, m)), rng.standard_normal((m * n, model.n_w))
            )
        post = dist.z_posterior(x, mixture_params_t(model, p, w)).probs.value
        out[start : start + chunk] = post.reshape(draws, -1, model.k).mean(axis=0)
    return np.argmax(out, axis=1), out


def generate(model, k, w, rng=None, noise=None, n=1):
    """Decode ``n`` draws of x from component ``k`` of the mixture at ``w``.

    Returns Bernoulli means (grayscale, no pixel sampling) or the Gaussian
    decoder mean, shape ``(n, input_dim)``. Either ``rng`` or explicit
    standard-normal ``noise`` of shape ``(n, n_x)`` must be given.
    """
    if not 0 <= k < model.k:
        raise IndexError(f"component {k} out of range for K={model.k}")
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if noise is None:
        noise = rng.standard_normal((n, model.n_x))
    noise = np.atleast_2d(noise)
    if w.shape[0] == 1 and noise.shape[0] > 1:
        w = np.repeat(w, noise.shape[0], axis=0)
    g, p = _frozen(model)
    comp = mixture_params_t(model, p, g.const(w)).component(k)
    x = dist.reparam_sample(comp, noise)
    decoded = decode_t(model, p, x)
    if isinstance(decoded, dist.DiagGaussian):
        return decoded.mean.value
    return decoded.value


def prior_samples(model, n, rng):
    """Draw (w, z, x) from the generative chain; returns decoder outputs.

    For a Gaussian decoder the result is ``(mean, var)`` arrays; for a
    Bernoulli decoder, the probabilities.
    """
    w = rng.standard_normal((n, model.n_w))
    z = rng.integers(0, model.k, size=n)
    eps = rng.standard_normal((n, model.n_x))
    g, p = _frozen(model)
    comps = mixture_params_t(model, p, g.const(w))
    rows = np.arange(n)
    mu = comps.mean.value[rows, z]
    var = comps.var.value[rows, z]
    x = mu + np.sqrt(var) * eps
    decoded = decode_t(model, p, g.const(x))
    if isinstance(decoded, dist.DiagGaussian):
        return decoded.mean.value, decoded.var.value
    return decoded.value
