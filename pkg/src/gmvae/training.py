"""Adam, the training loop and per-epoch metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as gm
from .errors import ConfigError, NumericalError
from .evaluation import unsupervised_accuracy

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Raises NumericalError without touching anything if a gradient is not
    finite.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}", term=name)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainConfig:
    dataset: str = "synthetic"
    k: int = 5
    m: int = 1
    lam: float = 0.0
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    lr: float = 1e-4
    eval_every: int = 1
    eval_m: int = 10
    # synthetic data
    n_points: int = 10_000
    noise_sd: float = 0.05
    data_seed: int = 0
    # mnist data
    train_subset: int = 10_000
    binarize: str = "none"

    def __post_init__(self):
        for name in ("k", "m", "batch_size", "eval_every", "n_points", "train_subset"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_m < 0:
            raise ConfigError(f"eval_m must be >= 0, got {self.eval_m}")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ConfigError(f"lam must be a finite value >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    reconstruction: float
    conditional_prior: float
    w_prior: float
    z_prior: float
    total: float
    z_kl: float
    accuracy: float | None = None
    wall_time: float = 0.0


# wall_time is left out so the CSV is reproducible byte for byte
CSV_FIELDS = ["epoch", "step", "reconstruction", "conditional_prior", "w_prior", "z_prior", "total", "z_kl", "accuracy"]


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            row = []
            for name in CSV_FIELDS:
                v = getattr(r, name)
                row.append("" if v is None else repr(v) if isinstance(v, float) else v)
            w.writerow(row)


def stream(seed, *tags):
    """Independent PCG64 stream for a (seed, tag...) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tags])))


STREAM_TRAIN, STREAM_EVAL = 1, 2


def evaluate(model, dataset, m, seed, tag=()):
    """Cluster ``dataset`` and score against its labels with the anchor protocol."""
    _, post = gm.cluster_assign(model, dataset.observations, m=m, rng=stream(seed, STREAM_EVAL, *tag))
    return unsupervised_accuracy(post, dataset.labels)


class TrainingAborted(NumericalError):
    """Carries the last parameters and metrics recorded before the failure."""

    def __init__(self, cause, model, metrics):
        super().__init__(str(cause), node=getattr(cause, "node", None), term=getattr(cause, "term", None))
        self.model = model
        self.metrics = metrics


def train(model, dataset, config: TrainConfig, eval_dataset=None, progress=None):
    """Maximise the ELBO with Adam.

    Runs ``epochs * ceil(N / batch_size)`` steps. Each epoch reshuffles the
    data from the run seed. Every ``eval_every`` epochs a MetricsRecord with
    the epoch-averaged ELBO terms is appended; if labels are available the
    record also carries the unsupervised accuracy on ``eval_dataset``
    (default: the training set). Returns ``(model, metrics)``; the model is
    updated in place.
    """
    if dataset.n == 0:
        raise ConfigError("empty dataset")
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    rng = stream(config.seed, STREAM_TRAIN)
    opt = AdamState(lr=config.lr)
    metrics = []
    good = {k: v.copy() for k, v in model.params.items()}
    obs = dataset.observations
    n, bs = dataset.n, config.batch_size
    start = time.perf_counter()
    step = 0
    names = ("reconstruction", "conditional_prior", "w_prior", "z_prior", "total", "z_kl")
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        sums = dict.fromkeys(names, 0.0)
        weight = 0
        try:
            for i in range(0, n, bs):
                batch = obs[perm[i : i + bs]]
                result, grads = gm.loss_and_grads(model, batch, config.m, config.lam, rng)
                adam_step(opt, model.params, grads)
                step += 1
                for name in names:
                    sums[name] += getattr(result, name) * batch.shape[0]
                weight += batch.shape[0]
        except NumericalError as exc:
            model.params = good
            log.error("numerical failure at epoch %d step %d: %s", epoch, step, exc)
            raise TrainingAborted(exc, model, metrics) from exc
        if epoch % config.eval_every and epoch != config.epochs:
            continue
        if not all(np.isfinite(v).all() for v in model.params.values()):
            model.params = good
            raise TrainingAborted(NumericalError("non-finite parameters"), model, metrics)
        good = {k: v.copy() for k, v in model.params.items()}
        acc = None
        if eval_dataset.labels is not None:
            acc = evaluate(model, eval_dataset, config.eval_m, config.seed, (epoch,)).accuracy
        rec = MetricsRecord(
            epoch=epoch, step=step, accuracy=acc, wall_time=time.perf_counter() - start,
            **{k: v / weight for k, v in sums.items()},
        )
        metrics.append(rec)
        if progress is not None:
            progress(rec)
    return model, metrics


def summarize(metrics, config: TrainConfig, final_accuracy=None) -> dict:
    accs = [r.accuracy for r in metrics if r.accuracy is not None]
    last = metrics[-1] if metrics else None
    return {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "epochs_run": last.epoch if last else 0,
        "steps": last.step if last else 0,
        "final_elbo": last.total if last else None,
        "final_z_kl": last.z_kl if last else None,
        "final_accuracy": final_accuracy if final_accuracy is not None else (accs[-1] if accs else None),
        "best_accuracy": max(accs) if accs else None,
    }
