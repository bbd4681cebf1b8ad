"""Feed-forward networks, Adam, and checkpoint serialization.

Parameters live in flat dicts mapping dotted names to float64 arrays; each
training step wraps them in leaf Tensors, builds the graph, and updates the
arrays in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "badgesteer-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class DenseNetwork:
    """Shape of a fully connected net: linear layers with a fixed hidden
    activation and a linear final layer.

    prefix names the parameter block, e.g. prefix "enc" with sizes (77, 128,
    40) owns enc.W0, enc.b0, enc.W1, enc.b1.
    """

    prefix: str
    sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def param_names(self):
        names = []
        for i in range(len(self.sizes) - 1):
            names += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return names

    def init(self, rng):
        """Glorot-uniform weights, zero biases."""
        params = {}
        for i, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            params[f"{self.prefix}.W{i}"] = glorot_uniform(rng, fi, fo)
            params[f"{self.prefix}.b{i}"] = np.zeros(fo)
        return params

    def forward(self, params, x):
        """params: mapping name -> Tensor; x: Tensor (batch, sizes[0])."""
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.sizes) - 2
        for i in range(last + 1):
            h = ad.add(ad.matmul(h, params[f"{self.prefix}.W{i}"]), params[f"{self.prefix}.b{i}"])
            if i < last:
                h = act(h)
        return h


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One Adam update, in place over `params`. Returns params.

    Raises FloatingPointError naming the offending parameter if a gradient
    is non-finite.  Missing gradients are treated as zero (parameter left
    untouched by this step's moment decay as well: simpler and equivalent for
    our always-dense gradients).
    """
    state.step += 1
    t = state.step
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        params[name] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


def save_checkpoint(path, params, meta=None):
    """JSON checkpoint: versioned header, then name -> shape + row-major values.

    json round-trips float64 exactly (repr is shortest-round-trip), so a
    save/load/save cycle is byte-stable.
    """
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {
                "shape": list(arr.shape),
                "data": np.asarray(arr, dtype=np.float64).ravel().tolist(),
            }
            for name, arr in sorted(params.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (params dict, meta dict). Rejects unknown formats/versions."""
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in blob["params"].items()
    }
    return params, blob.get("meta", {})
