"""Dense layers, multi-head MLPs and the parameter checkpoint format.

Parameters live outside the graph in a flat ``{name: ndarray}`` dict so the
optimizer can update them in place; each training step binds them to a
fresh :class:`~gmvae.autodiff.Graph` as leaves.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity", "exp")

# added to every exp-parameterised variance
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class DenseLayer:
    """``activation(x @ W + b)`` with ``W`` stored as (n_in, n_out)."""

    name: str
    n_in: int
    n_out: int
    activation: str = "identity"

    def __post_init__(self):
        if self.n_in <= 0 or self.n_out <= 0:
            raise ConfigError(f"layer {self.name}: dimensions must be positive, got {self.n_in}->{self.n_out}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"layer {self.name}: unknown activation {self.activation!r}")

    @property
    def weight_name(self):
        return f"{self.name}.W"

    @property
    def bias_name(self):
        return f"{self.name}.b"

    def n_params(self) -> int:
        return self.n_in * self.n_out + self.n_out

    def __call__(self, params, x: ad.Tensor) -> ad.Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"layer {self.name}: expected input width {self.n_in}, got {x.shape[-1]}")
        h = ad.add_bias(x @ params[self.weight_name], params[self.bias_name])
        return _activate(h, self.activation)


def _activate(h, activation):
    if activation == "identity":
        return h
    if activation == "exp":
        return ad.exp(h) + VARIANCE_FLOOR
    return getattr(ad, activation)(h)


@dataclass(frozen=True)
class MultiHeadMlp:
    """A shared trunk whose last activation feeds several output heads."""

    name: str
    trunk: tuple[DenseLayer, ...]
    heads: dict[str, DenseLayer] = field(default_factory=dict)

    @classmethod
    def build(cls, name, input_dim, hidden, heads):
        """``hidden`` is a list of ``(width, activation)``; ``heads`` maps a
        head name to ``(width, activation)``."""
        trunk = []
        width = input_dim
        for i, (n_out, act) in enumerate(hidden):
            trunk.append(DenseLayer(f"{name}.h{i}", width, n_out, act))
            width = n_out
        head_layers = {h: DenseLayer(f"{name}.{h}", width, n, act) for h, (n, act) in heads.items()}
        return cls(name, tuple(trunk), head_layers)

    @property
    def input_dim(self) -> int:
        return self.trunk[0].n_in if self.trunk else next(iter(self.heads.values())).n_in

    def layers(self):
        return list(self.trunk) + list(self.heads.values())

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers())

    def __call__(self, params, x: ad.Tensor) -> dict[str, ad.Tensor]:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"{self.name}: expected input (batch, {self.input_dim}), got {x.shape}")
        h = x
        for layer in self.trunk:
            h = layer(params, h)
        return {name: layer(params, h) for name, layer in self.heads.items()}


def init_params(nets, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; deterministic per ``seed``.

    Layers are initialised in declaration order from one PCG64 stream.
    """
    if isinstance(nets, MultiHeadMlp):
        nets = [nets]
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for net in nets:
        for layer in net.layers():
            s = np.sqrt(6.0 / (layer.n_in + layer.n_out))
            params[layer.weight_name] = rng.uniform(-s, s, size=(layer.n_in, layer.n_out))
            params[layer.bias_name] = np.zeros(layer.n_out)
    return params


def forward(mlp: MultiHeadMlp, params: dict[str, np.ndarray], x) -> dict[str, np.ndarray]:
    """Evaluate ``mlp`` on a numpy batch without tracking gradients."""
    g = ad.Graph()
    bound = bind(g, params, trainable=False)
    out = mlp(bound, g.const(np.atleast_2d(x)))
    return {k: v.value for k, v in out.items()}


def bind(graph: ad.Graph, params: dict[str, np.ndarray], trainable: bool = True) -> dict[str, ad.Tensor]:
    if trainable:
        return {k: graph.param(v, k) for k, v in params.items()}
    return {k: graph.const(v) for k, v in params.items()}


# architectures


def recognition_net(input_dim, hidden, n_x, n_w, activation="relu"):
    """Shared trunk split into mean/variance heads for both latents."""
    return MultiHeadMlp.build(
        "phi",
        input_dim,
        [(h, activation) for h in hidden],
        {"mu_w": (n_w, "identity"), "var_w": (n_w, "exp"), "mu_x": (n_x, "identity"), "var_x": (n_x, "exp")},
    )


def mixture_net(n_w, hidden, n_x, k):
    """One tanh layer, then K mean streams and K variance streams packed into two heads."""
    return MultiHeadMlp.build(
        "beta",
        n_w,
        [(h, "tanh") for h in hidden],
        {"means": (k * n_x, "identity"), "vars": (k * n_x, "exp")},
    )


def decoder_net(n_x, hidden, output_dim, likelihood):
    if likelihood == "gaussian":
        heads = {"mean": (output_dim, "identity"), "var": (output_dim, "exp")}
    elif likelihood == "bernoulli":
        heads = {"probs": (output_dim, "sigmoid")}
    else:
        raise ConfigError(f"unknown likelihood {likelihood!r}")
    return MultiHeadMlp.build("theta", n_x, [(h, "relu") for h in hidden], heads)


# checkpoint format
#
#   bytes 0-7   b"GMVAECKP"
#   bytes 8-11  format version, uint32 little-endian
#   bytes 12-15 header length H, uint32 little-endian
#   next H      UTF-8 JSON header: {"arrays": [{"name", "shape", "offset", "count"}, ...]}
#   remainder   float64 little-endian values, arrays in header order, row-major

CHECKPOINT_MAGIC = b"GMVAECKP"
CHECKPOINT_VERSION = 1


def save_params(path, params: dict[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    header = json.dumps({"arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for name in sorted(params):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    params = {}
    for e in header["arrays"]:
        chunk = data[e["offset"] : e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ConfigError(f"{path}: truncated data for {e['name']}")
        params[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return params
