"""Datasets: the five-arc synthetic set and MNIST in IDX format."""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, ConfigError, DimensionMismatch, TruncatedFile

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    observations: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.observations.ndim != 2:
            raise ConfigError(f"observations must be (N, D), got {self.observations.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ConfigError(f"{self.n} observations but {self.labels.shape[0]} labels")
        if not np.isfinite(self.observations).all():
            raise ConfigError(f"dataset {self.name!r} contains non-finite observations")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def d(self) -> int:
        return self.observations.shape[1]

    def subset(self, idx, name=None):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.observations[idx], labels, name or self.name)

    def to_csv(self, path):
        """Write ``x,y,label`` rows (2-D data only)."""
        if self.d != 2:
            raise ConfigError("CSV export is for 2-D datasets")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label"])
            labels = self.labels if self.labels is not None else [""] * self.n
            for (a, b), lab in zip(self.observations, labels):
                w.writerow([repr(float(a)), repr(float(b)), lab])


# synthetic arcs


@dataclass(frozen=True)
class ArcGeometry:
    """Arc ``a`` is centred on a circle of radius ``radius`` at angle
    ``2 pi a / n_arcs``; its points lie at distance ``arc_radius`` from that
    centre, spanning ``span`` radians around the direction obtained by
    rotating the outward direction by ``orientation`` radians.

    The default quarter turn gives a pinwheel with no mirror symmetry.
    With ``orientation = 0`` the arcs bulge straight outwards and the set is
    symmetric under reflection, which lets a model fold mirror-image arcs
    onto each other.
    """

    radius: float = 1.5
    arc_radius: float = 1.0
    span: float = 3 * math.pi / 4
    orientation: float = math.pi / 2

    def center(self, a, n_arcs):
        t = 2 * math.pi * a / n_arcs
        return np.array([self.radius * math.cos(t), self.radius * math.sin(t)])

    def angle_range(self, a, n_arcs):
        t = 2 * math.pi * a / n_arcs + self.orientation
        return t - self.span / 2, t + self.span / 2

    def distance_to_arcs(self, points, n_arcs):
        """Euclidean distance from each point to the nearest noiseless arc."""
        points = np.atleast_2d(points)
        best = np.full(points.shape[0], np.inf)
        for a in range(n_arcs):
            c = self.center(a, n_arcs)
            lo, hi = self.angle_range(a, n_arcs)
            rel = points - c
            phi = np.arctan2(rel[:, 1], rel[:, 0])
            mid = (lo + hi) / 2
            # wrap to (-pi, pi] around the arc midpoint
            off = (phi - mid + math.pi) % (2 * math.pi) - math.pi
            off = np.clip(off, -self.span / 2, self.span / 2)
            nearest = c + self.arc_radius * np.c_[np.cos(mid + off), np.sin(mid + off)]
            best = np.minimum(best, np.linalg.norm(points - nearest, axis=1))
        return best


def gen_arcs(n=10_000, n_arcs=5, noise_sd=0.05, seed=0, geometry: ArcGeometry | None = None) -> Dataset:
    if n_arcs < 1 or n < n_arcs:
        raise ConfigError(f"need n >= n_arcs >= 1, got n={n}, n_arcs={n_arcs}")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be non-negative")
    geo = geometry or ArcGeometry()
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = [n // n_arcs + (1 if a < n % n_arcs else 0) for a in range(n_arcs)]
    points, labels = [], []
    for a, count in enumerate(counts):
        lo, hi = geo.angle_range(a, n_arcs)
        phi = rng.uniform(lo, hi, size=count)
        p = geo.center(a, n_arcs) + geo.arc_radius * np.c_[np.cos(phi), np.sin(phi)]
        points.append(p + noise_sd * rng.standard_normal(p.shape))
        labels.append(np.full(count, a))
    return Dataset(np.concatenate(points), np.concatenate(labels), f"arcs{n_arcs}")


# MNIST IDX


def _read_header(raw, magic, n_dims, path):
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: file too short for magic number", 0)
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{path}: expected magic 0x{magic:08x}, got 0x{got:08x}", 0)
    end = 4 + 4 * n_dims
    if len(raw) < end:
        raise TruncatedFile(f"{path}: header needs {end} bytes, file has {len(raw)}", len(raw))
    dims = struct.unpack(f">{n_dims}I", raw[4:end])
    expected = end + math.prod(dims)
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: header claims {expected} bytes, file has {len(raw)}", len(raw))
    if len(raw) > expected:
        raise DimensionMismatch(f"{path}: header claims {expected} bytes, file has {len(raw)}", expected)
    return dims, end


def read_idx_images(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n, rows, cols), off = _read_header(raw, IDX_IMAGES_MAGIC, 3, path)
    if (rows, cols) != (28, 28):
        raise DimensionMismatch(f"{path}: expected 28x28 images, got {rows}x{cols}", 8)
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,), off = _read_header(raw, IDX_LABELS_MAGIC, 1, path)
    return np.frombuffer(raw, dtype=np.uint8, offset=off)


def load_mnist_idx(images_path, labels_path, name="mnist") -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 28, 28)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, images.shape[0], 28, 28))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def data_dir(explicit=None) -> Path:
    return Path(explicit or os.environ.get("GMVAE_DATA_DIR", "data"))


def find_mnist(split, root=None):
    """Locate the IDX pair for ``split`` under ``root``; returns paths or None."""
    root = data_dir(root)
    names = MNIST_FILES[split]
    for cand in (root, root / "mnist", root / "MNIST" / "raw"):
        paths = [cand / f for f in names]
        if all(p.exists() for p in paths):
            return tuple(paths)
    return None


def load_mnist(split, root=None) -> Dataset:
    paths = find_mnist(split, root)
    if paths is None:
        raise ConfigError(
            f"MNIST {split} files {MNIST_FILES[split]} not found under {data_dir(root)}; "
            "set GMVAE_DATA_DIR to the directory holding the uncompressed IDX files"
        )
    return load_mnist_idx(*paths, name=f"mnist-{split}")


def binarize(dataset: Dataset, mode="none", seed=0) -> Dataset:
    """``threshold`` (>= 0.5 -> 1), ``stochastic`` (Bernoulli draw per pixel)
    or ``none`` (values left in [0, 1])."""
    x = dataset.observations
    if mode == "none":
        out = x.copy()
    elif mode == "threshold":
        out = (x >= 0.5).astype(np.float64)
    elif mode == "stochastic":
        rng = np.random.Generator(np.random.PCG64(seed))
        out = (rng.random(x.shape) < x).astype(np.float64)
    else:
        raise ConfigError(f"unknown binarization mode {mode!r}")
    return Dataset(out, dataset.labels, dataset.name)
