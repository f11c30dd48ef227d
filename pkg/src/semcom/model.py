"""Per-modality MLP encoders, the server-side decoder, and momentum SGD."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .errors import ContractError, DimensionError, ValidationError
from .ndcore import Tensor


class MLP:
    """Dense ReLU network; ``weights[i]`` has shape (out, in)."""

    def __init__(self, dims, weights, biases):
        self.dims = list(dims)
        self.weights = weights
        self.biases = biases

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dims[0]:
            raise DimensionError(f"input width {x.shape[1]}, expected {self.dims[0]}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = nd.add(nd.matmul(h, nd.transpose(w)), b)
            if i < last:
                h = nd.relu(h)
        return h

    def copy(self):
        clone = type(self).__new__(type(self))
        clone.dims = list(self.dims)
        clone.weights = [Tensor(w.data, requires_grad=True) for w in self.weights]
        clone.biases = [Tensor(b.data, requires_grad=True) for b in self.biases]
        return clone


class Encoder(MLP):
    @property
    def out_dim(self) -> int:
        return self.dims[-1]


class Decoder(MLP):
    def forward(self, z: Tensor) -> Tensor:
        return nd.log_softmax(super().forward(z))


def init_params(dims, seed: int, kind: type = Encoder):
    """Kaiming-uniform weights (std sqrt(2/fan_in)) and zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValidationError(f"layer dims must list >= 2 positive sizes, got {dims}", ["dims"])
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return kind(dims, weights, biases)


def encode(encoder: Encoder, x) -> Tensor:
    return encoder.forward(x if isinstance(x, Tensor) else Tensor(x))


def decode(decoder: Decoder, z_concat: Tensor) -> Tensor:
    return decoder.forward(z_concat)


# ----------------------------------------------------------------- optimiser

@dataclass
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"

    def validate(self) -> None:
        bad = []
        if not self.lr > 0:
            bad.append("lr")
        if not 0 <= self.momentum < 1:
            bad.append("momentum")
        if self.weight_decay < 0:
            bad.append("weight_decay")
        if self.schedule not in ("cosine", "constant"):
            bad.append("schedule")
        if bad:
            raise ValidationError("invalid optimiser config", bad)


def learning_rate(cfg: OptimConfig, epoch: float, total_epochs: int) -> float:
    if cfg.schedule == "constant" or total_epochs <= 0:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class SGD:
    """Momentum SGD with coupled weight decay; velocity persists across steps."""

    def __init__(self, params, cfg: OptimConfig, total_epochs: int):
        cfg.validate()
        self.params = list(params)
        self.cfg = cfg
        self.total_epochs = total_epochs
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, epoch: float) -> None:
        sgd_step(self.params, self.velocity, self.cfg, learning_rate(self.cfg, epoch, self.total_epochs))


def sgd_step(params, velocity, cfg: OptimConfig, lr: float) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v (in place)."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"missing gradient for parameter {p.name or i}")
    for i, p in enumerate(params):
        v = cfg.momentum * velocity[i] + p.grad + cfg.weight_decay * p.data
        velocity[i] = v
        p.data = p.data - lr * v


# ---------------------------------------------------------------- checkpoint

_MAGIC = b"SEMCKPT1"


def save_checkpoint(path, model: MLP, seed: int, stage: str) -> None:
    """Magic, u64 header length, JSON header, then little-endian f64 data."""
    tensors = model.parameters()
    order = []
    for i in range(len(model.weights)):
        order += [f"weight{i}", f"bias{i}"]
    header = {
        "kind": type(model).__name__,
        "layer_dims": model.dims,
        "tensor_order": order,
        "shapes": [list(t.shape) for t in tensors],
        "seed": seed,
        "stage": stage,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in tensors:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(model, header)``; values round-trip bit-exactly."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValidationError(f"{path}: not a semcom checkpoint", ["magic"])
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n])
    offset = 16 + n
    arrays = []
    for shape in header["shapes"]:
        count = shape[0] * shape[1]
        if offset + 8 * count > len(raw):
            raise ValidationError(f"{path}: truncated payload", ["payload"])
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
        arrays.append(arr.reshape(shape))
        offset += 8 * count
    if offset != len(raw):
        raise ValidationError(f"{path}: trailing or missing bytes", ["payload"])
    kind = {"Encoder": Encoder, "Decoder": Decoder}[header["kind"]]
    weights = [Tensor(a, requires_grad=True) for a in arrays[0::2]]
    biases = [Tensor(a, requires_grad=True) for a in arrays[1::2]]
    return kind(header["layer_dims"], weights, biases), header
