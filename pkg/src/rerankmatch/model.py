"""Two-part MLP: a ReLU feature extractor followed by a linear classification head.

``dims = [d_in, h_1, ..., d_f, C]``: every layer up to ``d_f`` belongs to the
extractor (ReLU between its layers, none after the last), and the final
``d_f -> C`` map is the head.

Checkpoint format
-----------------
One ASCII header line ``rerankmatch-mlp dims=<d0>,<d1>,...,<dL>\\n`` followed by
the raw parameters as little-endian float64, layer by layer: the weight
matrix (``fan_in x fan_out``, row-major) then its bias vector.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_MAGIC = "rerankmatch-mlp"


@dataclass
class ModelParams:
    dims: tuple
    weights: list
    biases: list

    @property
    def n_classes(self):
        return self.dims[-1]

    @property
    def representation_dim(self):
        return self.dims[-2]

    def nodes(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def named_nodes(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layer{i}.weight", w
            yield f"layer{i}.bias", b

    def copy(self):
        return ModelParams(
            self.dims,
            [ad.param(w.value, w.name) for w in self.weights],
            [ad.param(b.value, b.name) for b in self.biases],
        )

    def flat(self):
        return np.concatenate([n.value.ravel() for n in self.nodes()])


@dataclass
class ForwardOutput:
    representation: ad.Node
    logits: ad.Node


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ConfigError(f"dims needs at least input, representation and class sizes, got {dims}")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"all layer sizes must be positive, got {dims}")
    return dims


def init_params(seed, dims):
    """He-uniform weights (variance 2/fan_in), zero biases; deterministic in ``seed``."""
    dims = _check_dims(dims)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(ad.param(rng.uniform(-limit, limit, size=(fan_in, fan_out)), f"layer{i}.weight"))
        biases.append(ad.param(np.zeros(fan_out), f"layer{i}.bias"))
    return ModelParams(dims, weights, biases)


def forward(params, x):
    x = ad.as_node(x)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise ShapeError(f"forward: expected input [n x {params.dims[0]}], got {x.shape}")
    h = x
    n_extractor = len(params.weights) - 1
    for i in range(n_extractor):
        h = h @ params.weights[i] + params.biases[i]
        if i < n_extractor - 1:
            h = ad.relu(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    return ForwardOutput(representation=h, logits=logits)


def save_checkpoint(params, path):
    path = Path(path)
    header = f"{CHECKPOINT_MAGIC} dims={','.join(str(d) for d in params.dims)}\n"
    payload = np.concatenate([n.value.ravel() for n in params.nodes()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def load_checkpoint(path):
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        magic, dims_field = raw[:newline].decode("ascii").split(" ", 1)
        if magic != CHECKPOINT_MAGIC or not dims_field.startswith("dims="):
            raise ValueError
        dims = _check_dims(dims_field[len("dims="):].split(","))
    except (ValueError, UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad header {raw[:newline][:80]!r}") from exc
    body = raw[newline + 1:]
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(body) != 8 * expected:
        raise CheckpointError(f"{path}: expected {expected} float64 values, found {len(body) / 8:g}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    weights, biases, pos = [], [], 0
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = values[pos:pos + fan_out]
        pos += fan_out
        weights.append(ad.param(w, f"layer{i}.weight"))
        biases.append(ad.param(b, f"layer{i}.bias"))
    return ModelParams(dims, weights, biases)
