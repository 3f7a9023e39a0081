"""The four sub-networks (feature extractor F, classifier C, loss predictor P,
domain discriminator D), SGD with momentum, and parameter checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DimensionError

CHECKPOINT_FORMAT = "seqada-params"
CHECKPOINT_VERSION = 1


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        # He-uniform: Var[U(-a, a)] = a^2 / 3 = 2 / fan_in
        bound = np.sqrt(6.0 / fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True,
                             name=f"{name}.weight")
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.bias")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"{self.weight.name}: expected (m, {self.in_dim}) input, got {x.shape}")
        return dc.add_bias(dc.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Stack of dense layers with relu between them.

    ``final`` selects the output nonlinearity: ``"relu"``, ``"sigmoid"`` or
    ``None`` for raw outputs.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator, name: str, final: str | None = None):
        self.name = name
        self.final = final
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x) -> Tensor:
        h = dc.as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = dc.relu(h)
        if self.final == "relu":
            h = dc.relu(h)
        elif self.final == "sigmoid":
            h = dc.sigmoid(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class NetDims:
    input_dim: int = 2
    hidden: int = 64
    feature_dim: int = 32
    predictor_dim: int = 32
    num_classes: int = 2

    def validate(self) -> None:
        for key, value in vars(self).items():
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}", field=key)


@dataclass
class ModelBundle:
    F: MLP
    C: MLP
    P: MLP
    D: MLP
    dims: NetDims = field(default_factory=NetDims)

    def modules(self) -> dict[str, MLP]:
        return {"F": self.F, "C": self.C, "P": self.P, "D": self.D}

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for m in self.modules().values() for p in m.parameters()}

    def freeze_classifier(self) -> None:
        for p in self.C.parameters():
            p.requires_grad = False

    @property
    def classifier_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.C.parameters())

    def param_hash(self, module: str) -> str:
        h = hashlib.sha256()
        for p in self.modules()[module].parameters():
            h.update(p.name.encode())
            h.update(p.values.tobytes())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise ConfigError("checkpoint parameter names do not match this bundle")
        for name, values in state.items():
            if params[name].shape != np.shape(values):
                raise DimensionError(f"{name}: checkpoint shape {np.shape(values)} != {params[name].shape}")
            params[name].values[...] = values


def init_bundle(dims: NetDims, seed: int) -> ModelBundle:
    dims.validate()
    rng = np.random.default_rng(seed)
    return ModelBundle(
        F=MLP([dims.input_dim, dims.hidden, dims.feature_dim], rng, "F", final="relu"),
        C=MLP([dims.feature_dim, dims.num_classes], rng, "C"),
        P=MLP([dims.feature_dim, dims.predictor_dim, 1], rng, "P"),
        D=MLP([dims.feature_dim, dims.hidden, 1], rng, "D", final="sigmoid"),
        dims=dims,
    )


def forward_features(bundle: ModelBundle, x) -> Tensor:
    return bundle.F(x)


def forward_classifier(bundle: ModelBundle, f: Tensor) -> Tensor:
    return bundle.C(f)


def forward_loss_predictor(bundle: ModelBundle, f: Tensor) -> Tensor:
    return bundle.P(f)


def forward_discriminator(bundle: ModelBundle, f: Tensor) -> Tensor:
    return bundle.D(f)


class SGD:
    """``v <- momentum * v + grad``; ``theta <- theta - lr * v``.

    With ``clip_norm`` set, the gradients of all trainable parameters are
    first rescaled so that their joint L2 norm is at most ``clip_norm``.
    """

    def __init__(self, params: list[Tensor], lr: float = 0.01, momentum: float = 0.9,
                 clip_norm: float | None = None):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}", field="learning_rate")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}", field="momentum")
        if clip_norm is not None and clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {clip_norm}", field="grad_clip")
        self.params = list(params)
        self.clip_norm = clip_norm
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        dc.zero_grads(self.params)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in self.params if p.requires_grad)))

    def step(self, zero_after: bool = True) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for p, v in zip(self.params, self.velocity):
            if not p.requires_grad:
                continue
            v *= self.momentum
            v += p.grad if scale == 1.0 else scale * p.grad
            p.values -= self.lr * v
            if zero_after:
                p.grad.fill(0.0)


def step(optimizer: SGD, zero_after: bool = True) -> None:
    optimizer.step(zero_after=zero_after)


def save_params(path, bundle: ModelBundle, extra: dict | None = None) -> None:
    """Write parameters as versioned JSON text.

    Layout: ``{"format": "seqada-params", "version": 1, "dims": {...},
    "params": [{"name", "shape", "values"}...], "extra": {...}}`` with
    ``values`` flattened row-major. Floats are written with ``repr`` so a
    round trip is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": vars(bundle.dims),
        "classifier_frozen": bundle.classifier_frozen,
        "params": [
            {"name": name, "shape": list(p.shape), "values": p.values.reshape(-1).tolist()}
            for name, p in bundle.named_parameters().items()
        ],
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path) -> tuple[ModelBundle, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    bundle = init_bundle(NetDims(**doc["dims"]), seed=0)
    bundle.load_state({e["name"]: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for e in doc["params"]})
    if doc.get("classifier_frozen"):
        bundle.freeze_classifier()
    return bundle, doc.get("extra", {})
