"""Clustering accuracy, data-space density estimates and sample grids."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass
class ClusterReport:
    accuracy: float
    assignments: np.ndarray
    anchors: list[int]
    anchor_labels: list[int]
    member_counts: list[int]
    empty_clusters: list[int] = field(default_factory=list)

    @property
    def occupancy(self) -> np.ndarray:
        counts = np.asarray(self.member_counts, dtype=np.float64)
        return counts / counts.sum()

    def n_occupied(self, threshold=0.05) -> int:
        return int((self.occupancy >= threshold).sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_points": int(sum(self.member_counts)),
            "clusters": [
                {"cluster": i, "anchor_index": a, "anchor_label": lab, "member_count": c}
                for i, (a, lab, c) in enumerate(zip(self.anchors, self.anchor_labels, self.member_counts))
            ],
            "occupancy": [float(x) for x in self.occupancy],
            "empty_clusters": self.empty_clusters,
        }


def unsupervised_accuracy(posteriors, labels) -> ClusterReport:
    """Score a soft clustering with the anchor protocol.

    Each cluster takes the true label of the point with the highest
    posterior for that cluster (its anchor); every point belongs to the
    argmax of its own posterior row and is counted correct when its
    cluster's label matches its own. Ties resolve to the lowest index, and
    several clusters may share a label.
    """
    post = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels)
    if post.ndim != 2 or post.shape[0] != labels.shape[0]:
        raise ConfigError(f"posteriors {post.shape} do not match {labels.shape[0]} labels")
    k = post.shape[1]
    assign = np.argmax(post, axis=1)
    anchors = np.argmax(post, axis=0)
    cluster_label = labels[anchors]
    counts = np.bincount(assign, minlength=k)
    correct = cluster_label[assign] == labels
    return ClusterReport(
        accuracy=float(correct.mean()),
        assignments=assign,
        anchors=[int(a) for a in anchors],
        anchor_labels=[int(x) for x in cluster_label],
        member_counts=[int(c) for c in counts],
        empty_clusters=[int(i) for i in np.flatnonzero(counts == 0)],
    )


# density on a 2-D grid


def grid_points(bounds, resolution):
    """Cell centres of a ``resolution`` x ``resolution`` grid over
    ``bounds = (xmin, xmax, ymin, ymax)``; row index follows y."""
    xmin, xmax, ymin, ymax = bounds
    if not (xmax > xmin and ymax > ymin) or resolution < 1:
        raise ConfigError(f"invalid grid bounds {bounds} / resolution {resolution}")
    xs = xmin + (np.arange(resolution) + 0.5) * (xmax - xmin) / resolution
    ys = ymin + (np.arange(resolution) + 0.5) * (ymax - ymin) / resolution
    gx, gy = np.meshgrid(xs, ys)
    return xs, ys, np.c_[gx.ravel(), gy.ravel()]


def cell_area(bounds, resolution):
    xmin, xmax, ymin, ymax = bounds
    return (xmax - xmin) * (ymax - ymin) / resolution**2


def mixture_density_grid(means, variances, log_weights, bounds, resolution):
    _, _, pts = grid_points(bounds, resolution)
    logp = kernels.mixture_logpdf(pts, means, variances, log_weights)
    return np.exp(logp).reshape(resolution, resolution)


def density_grid(model, bounds, resolution, samples, rng):
    """Monte Carlo estimate of p(y) over a 2-D grid.

    Draws ``samples`` tuples (w, z, x) from the prior chain, and averages the
    Gaussian decoder density N(y | mu(x), var(x)) over them at each cell
    centre. Returns an array indexed ``[y_index, x_index]``.
    """
    from .model import prior_samples

    if model.arch.input_dim != 2 or model.arch.likelihood != "gaussian":
        raise ConfigError("density_grid needs a model with a 2-D Gaussian observation space")
    mean, var = prior_samples(model, samples, rng)
    log_w = np.full(samples, -math.log(samples))
    return mixture_density_grid(mean, var, log_w, bounds, resolution)


def mass_fraction_near(grid, bounds, distance_fn, radius):
    """Share of the grid's mass in cells whose centre is within ``radius``
    according to ``distance_fn(points)``."""
    res = grid.shape[0]
    _, _, pts = grid_points(bounds, res)
    near = (distance_fn(pts) <= radius).reshape(res, res)
    total = grid.sum()
    return float(grid[near].sum() / total) if total > 0 else 0.0


def write_density_csv(path, grid, bounds) -> None:
    """One ``x,y,density`` row per cell, x varying fastest."""
    res = grid.shape[0]
    _, _, pts = grid_points(bounds, res)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "density"])
        for (x, y), d in zip(pts, grid.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(d))])


# image sample grids


def _side(model):
    side = math.isqrt(model.arch.input_dim)
    if side * side != model.arch.input_dim:
        raise ConfigError(f"input dimension {model.arch.input_dim} is not a square image")
    return side


def to_gray(probs) -> np.ndarray:
    return np.round(np.clip(probs, 0.0, 1.0) * 255.0).astype(np.uint8)


def tile(images, rows, cols, side) -> np.ndarray:
    images = np.asarray(images).reshape(rows, cols, side, side)
    return images.transpose(0, 2, 1, 3).reshape(rows * side, cols * side)


def sample_grid(model, mode, rng, component=0, cols=10, rows=10, w_range=(-2.0, 2.0)):
    """Grayscale grid of generated images.

    ``vary-z``: one row per mixture component, ``cols`` samples each, w = 0.
    ``vary-w``: component ``component`` with one fixed x-noise draw while the
    first two w coordinates sweep ``w_range`` across columns and rows.
    """
    from .model import generate

    side = _side(model)
    if mode == "vary-z":
        w = np.zeros(model.n_w)
        imgs = [generate(model, k, w, noise=rng.standard_normal((cols, model.n_x))) for k in range(model.k)]
        return tile(to_gray(np.concatenate(imgs)), model.k, cols, side)
    if mode == "vary-w":
        lo, hi = w_range
        noise = np.repeat(rng.standard_normal((1, model.n_x)), rows * cols, axis=0)
        w = np.zeros((rows, cols, model.n_w))
        w[:, :, 0] = np.linspace(lo, hi, cols)[None, :]
        if model.n_w > 1:
            w[:, :, 1] = np.linspace(lo, hi, rows)[:, None]
        imgs = generate(model, component, w.reshape(-1, model.n_w), noise=noise)
        return tile(to_gray(imgs), rows, cols, side)
    raise ConfigError(f"unknown sample-grid mode {mode!r}")


def write_pgm(path, image) -> None:
    """Binary PGM (P5, maxval 255)."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = open(path, "rb").read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
