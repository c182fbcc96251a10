"""Declarative network specs, parameter stores and the forward/backward driver."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import layers as L

LAYER_KINDS = ("conv2d", "dense", "batchnorm", "relu", "maxpool", "globalavgpool", "flatten")


class ShapeError(ValueError):
    """Raised when a tensor's dimensions do not fit a layer or spec."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int = 0
    kernel: int = 3
    stride: int = 1
    units: int = 0
    pool: int = 2

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and (self.kernel < 1 or self.channels < 1 or self.stride < 1):
            raise ValueError(f"conv2d needs kernel, channels, stride >= 1, got {self}")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense layer needs units >= 1")
        if self.kind == "maxpool" and self.pool < 1:
            raise ValueError("maxpool size must be >= 1")


def conv(channels, kernel=3, stride=1):
    return LayerSpec("conv2d", channels=channels, kernel=kernel, stride=stride)


def dense(units):
    return LayerSpec("dense", units=units)


BATCHNORM = LayerSpec("batchnorm")
RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool")
GAP = LayerSpec("globalavgpool")
FLATTEN = LayerSpec("flatten")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input_shape must be (W, H, C) of positive ints, got {self.input_shape}")
        shapes = propagate_shapes(self)
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(f"network ends in shape {shapes[-1]}, expected ({self.num_classes},) logits")

    def digest(self) -> bytes:
        """Stable 32-byte hash of the architecture, used in checkpoint headers."""
        return hashlib.sha256(repr((self.input_shape, self.layers, self.num_classes)).encode()).digest()


def propagate_shapes(spec: NetworkSpec) -> list:
    """Per-sample shapes: the input followed by the output of every layer."""
    shape = spec.input_shape
    shapes = [shape]
    pool_stage = 0
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (conv2d) needs a (W, H, C) input, got {shape}")
            p = layer.kernel // 2
            w = (shape[0] + 2 * p - layer.kernel) // layer.stride + 1
            h = (shape[1] + 2 * p - layer.kernel) // layer.stride + 1
            if w < 1 or h < 1:
                raise ShapeError(f"layer {i} (conv2d) kernel {layer.kernel} does not fit input {shape}")
            shape = (w, h, layer.channels)
        elif k == "maxpool":
            pool_stage += 1
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (maxpool stage {pool_stage}) needs a (W, H, C) input, got {shape}")
            w, h = shape[0] // layer.pool, shape[1] // layer.pool
            if w < 1 or h < 1:
                raise ShapeError(
                    f"maxpool stage {pool_stage} (layer {i}) cannot pool {shape[:2]} by {layer.pool}: input too small")
            shape = (w, h, shape[2])
        elif k == "globalavgpool":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (globalavgpool) needs a (W, H, C) input, got {shape}")
            shape = (shape[2],)
        elif k == "flatten":
            shape = (int(np.prod(shape)),)
        elif k == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i} (dense) needs a flat input, got {shape}; add flatten or globalavgpool")
            shape = (layer.units,)
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class Parameters:
    """Ordered name -> array store.

    Names are ``"<layer index>.<field>"``. Batchnorm running statistics live
    here too (``running_mean`` / ``running_var``) but are not trainable.
    """

    tensors: dict

    @property
    def names(self):
        return list(self.tensors)

    @property
    def trainable(self):
        return [n for n in self.tensors if not n.split(".", 1)[1].startswith("running_")]

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def trainable_size(self) -> int:
        return sum(self.tensors[n].size for n in self.trainable)

    def __getitem__(self, name):
        return self.tensors[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()]) if self.tensors else np.zeros(0)

    def unflatten(self, vector) -> "Parameters":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ShapeError(f"expected a flat vector of length {self.size}, got shape {vector.shape}")
        out, offset = {}, 0
        for name, t in self.tensors.items():
            out[name] = vector[offset:offset + t.size].reshape(t.shape).copy()
            offset += t.size
        return Parameters(out)

    def replace(self, updates: dict) -> "Parameters":
        unknown = set(updates) - set(self.tensors)
        if unknown:
            raise KeyError(f"unknown parameter names {sorted(unknown)}")
        return Parameters({n: (np.asarray(updates[n], dtype=np.float64) if n in updates else t)
                           for n, t in self.tensors.items()})

    def same_layout(self, other: "Parameters") -> bool:
        return (list(self.tensors) == list(other.tensors)
                and all(self.tensors[n].shape == other.tensors[n].shape for n in self.tensors))

    def copy(self) -> "Parameters":
        return Parameters({n: t.copy() for n, t in self.tensors.items()})


def param_shapes(spec: NetworkSpec) -> dict:
    """Name -> shape for every tensor the spec owns, in flattening order."""
    shapes = propagate_shapes(spec)
    out = {}
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i]
        if layer.kind == "conv2d":
            out[f"{i}.w"] = (layer.kernel, layer.kernel, in_shape[2], layer.channels)
            out[f"{i}.b"] = (layer.channels,)
        elif layer.kind == "dense":
            out[f"{i}.w"] = (in_shape[0], layer.units)
            out[f"{i}.b"] = (layer.units,)
        elif layer.kind == "batchnorm":
            for name in ("gamma", "beta", "running_mean", "running_var"):
                out[f"{i}.{name}"] = (in_shape[-1],)
    return out


def init_params(spec: NetworkSpec, rng) -> Parameters:
    """He-normal conv/dense weights, zero biases, batchnorm gamma=1 beta=0."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    tensors = {}
    for name, shape in param_shapes(spec).items():
        field_name = name.split(".", 1)[1]
        if field_name == "w":
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        elif field_name in ("gamma", "running_var"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return Parameters(tensors)


def check_params(spec: NetworkSpec, params: Parameters):
    expected = param_shapes(spec)
    got = {n: t.shape for n, t in params.tensors.items()}
    if list(expected) != list(got) or any(expected[n] != got[n] for n in expected):
        raise ShapeError("parameters do not match the network spec layout")


@dataclass
class ForwardCache:
    layers: list
    input_shape: tuple
    running: dict = field(default_factory=dict)


@dataclass
class Gradients:
    params: dict
    input: np.ndarray
    # refreshed batchnorm running statistics (train mode only)
    running: dict = field(default_factory=dict)


def forward(spec: NetworkSpec, params: Parameters, batch, mode="eval", momentum=0.9):
    """Run the network on ``batch`` of shape ``(B,) + input_shape``.

    In train mode batchnorm uses batch statistics and the refreshed running
    statistics are returned in ``cache.running``; ``params`` is never mutated.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match (B,) + {spec.input_shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input batch contains non-finite values")
    check_params(spec, params)
    train = mode == "train"
    caches, running = [], {}
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k == "conv2d":
            x, c = L.conv2d_forward(x, params[f"{i}.w"], params[f"{i}.b"], layer.stride)
        elif k == "dense":
            x, c = L.dense_forward(x, params[f"{i}.w"], params[f"{i}.b"])
        elif k == "batchnorm":
            x, c, new = L.batchnorm_forward(x, params[f"{i}.gamma"], params[f"{i}.beta"],
                                            params[f"{i}.running_mean"], params[f"{i}.running_var"],
                                            train, momentum)
            if new is not None:
                running[f"{i}.running_mean"], running[f"{i}.running_var"] = new
        elif k == "relu":
            x, c = L.relu_forward(x)
        elif k == "maxpool":
            x, c = L.maxpool_forward(x, layer.pool)
        elif k == "globalavgpool":
            x, c = L.globalavgpool_forward(x)
        else:
            x, c = L.flatten_forward(x)
        caches.append(c)
    return x, ForwardCache(caches, tuple(np.shape(batch)), running)


_BACKWARD = {
    "conv2d": L.conv2d_backward,
    "dense": L.dense_backward,
    "batchnorm": L.batchnorm_backward,
    "relu": L.relu_backward,
    "maxpool": L.maxpool_backward,
    "globalavgpool": L.globalavgpool_backward,
    "flatten": L.flatten_backward,
}


def backward(spec: NetworkSpec, cache: ForwardCache, dlogits, input_grad=True) -> Gradients:
    """Back-propagate an upstream gradient on the logits.

    ``input_grad=False`` skips the (costly) input gradient of a leading conv
    layer; ``Gradients.input`` is then ``None``.
    """
    if len(cache.layers) != len(spec.layers):
        raise ShapeError("forward cache does not match the spec")
    d = np.asarray(dlogits, dtype=np.float64)
    grads = {}
    for i in range(len(spec.layers) - 1, -1, -1):
        kind = spec.layers[i].kind
        if i == 0 and kind == "conv2d" and not input_grad:
            d, pg = L.conv2d_backward(d, cache.layers[i], input_grad=False)
        else:
            d, pg = _BACKWARD[kind](d, cache.layers[i])
        for name, g in pg.items():
            grads[f"{i}.{name}"] = g
    return Gradients(grads, d)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k}), got {labels}")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def loss_and_gradients(spec, params, batch, labels, mode="train", input_grad=True):
    """Mean cross-entropy plus parameter and input gradients.

    In train mode ``grads.running`` carries the refreshed batchnorm statistics;
    apply them with ``params.replace(grads.running)`` after the optimiser step.
    """
    logits, cache = forward(spec, params, batch, mode)
    loss, dlogits = cross_entropy(logits, labels)
    grads = backward(spec, cache, dlogits, input_grad)
    grads.running = cache.running
    return loss, grads


def predict(spec, params, batch, batch_size=None):
    """Eval-mode class predictions; argmax ties go to the lowest class index."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch_size is None or batch_size >= len(batch):
        return forward(spec, params, batch, "eval")[0].argmax(axis=1)
    out = [forward(spec, params, batch[i:i + batch_size], "eval")[0].argmax(axis=1)
           for i in range(0, len(batch), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


VGG15_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))


def build_vgg15(input_shape, num_classes, hidden=512) -> NetworkSpec:
    """Five conv blocks (2, 2, 3, 3, 3 convs) + GAP + two dense layers."""
    layers = []
    for channels, depth in VGG15_BLOCKS:
        for _ in range(depth):
            layers += [conv(channels), BATCHNORM, RELU]
        layers.append(MAXPOOL)
    layers += [GAP, dense(hidden), RELU, dense(num_classes)]
    return NetworkSpec(tuple(input_shape), tuple(layers), num_classes)


def build_tiny(input_shape, num_classes) -> NetworkSpec:
    """Desk-scale surrogate: two single-conv blocks of 8 and 16 channels, GAP, dense."""
    layers = []
    for channels in (8, 16):
        layers += [conv(channels), BATCHNORM, RELU, MAXPOOL]
    layers += [GAP, dense(num_classes)]
    return NetworkSpec(tuple(input_shape), tuple(layers), num_classes)


class Classifier:
    """A network spec seen as a differentiable function of its input.

    If ``base_shape`` is smaller than the spec's input, inputs of that shape are
    centre-padded with ``pad_value`` before the network and input gradients are
    cropped back, so attacks can operate on the unpadded features.
    """

    def __init__(self, spec: NetworkSpec, base_shape: Optional[tuple] = None, pad_value: float = 0.5):
        self.spec = spec
        self.base_shape = tuple(base_shape) if base_shape is not None else spec.input_shape
        self.pad_value = pad_value
        full = spec.input_shape
        if len(self.base_shape) != 3 or any(b > f for b, f in zip(self.base_shape, full)) \
                or self.base_shape[2] != full[2]:
            raise ShapeError(f"base shape {self.base_shape} cannot be padded to {full}")
        self.offset = ((full[0] - self.base_shape[0]) // 2, (full[1] - self.base_shape[1]) // 2)

    @property
    def num_classes(self):
        return self.spec.num_classes

    def prepare(self, x):
        """Map a (B,) + base_shape batch onto the network's input shape."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] == self.spec.input_shape:
            return x
        if x.shape[1:] != self.base_shape:
            raise ShapeError(f"input shape {x.shape[1:]} is neither {self.base_shape} nor {self.spec.input_shape}")
        out = np.full((x.shape[0],) + self.spec.input_shape, self.pad_value)
        ow, oh = self.offset
        out[:, ow:ow + x.shape[1], oh:oh + x.shape[2], :] = x
        return out

    def _crop(self, dx, shape):
        if shape[1:] == self.spec.input_shape:
            return dx
        ow, oh = self.offset
        return dx[:, ow:ow + shape[1], oh:oh + shape[2], :]

    def logits(self, params, x):
        return forward(self.spec, params, self.prepare(x), "eval")[0]

    def loss_input_grad(self, params, x, y):
        """Per-sample losses and the gradient of their sum w.r.t. ``x`` (eval mode)."""
        x = np.asarray(x, dtype=np.float64)
        logits, cache = forward(self.spec, params, self.prepare(x), "eval")
        loss, dlogits = cross_entropy(logits, y)
        grads = backward(self.spec, cache, dlogits * len(x))
        p = softmax(logits)
        per_sample = -np.log(np.maximum(p[np.arange(len(x)), np.asarray(y)], 1e-300))
        return per_sample, self._crop(grads.input, x.shape)

    def logit_input_grad(self, params, x, dlogits):
        """Vector-Jacobian product: gradient of ``sum(dlogits * logits)`` w.r.t. ``x``."""
        x = np.asarray(x, dtype=np.float64)
        _, cache = forward(self.spec, params, self.prepare(x), "eval")
        return self._crop(backward(self.spec, cache, dlogits).input, x.shape)

    def logits_and_jacobian(self, params, x):
        """Logits (B, K) and per-class input gradients (K, B) + x.shape[1:]."""
        x = np.asarray(x, dtype=np.float64)
        logits, cache = forward(self.spec, params, self.prepare(x), "eval")
        jac = []
        for k in range(self.num_classes):
            onehot = np.zeros_like(logits)
            onehot[:, k] = 1.0
            jac.append(self._crop(backward(self.spec, cache, onehot).input, x.shape))
        return logits, np.stack(jac)
