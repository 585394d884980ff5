"""Small dense feature extractor trained with SGD + momentum.

Stands in for a CNN: a stack of affine layers with ReLU / PReLU / identity
activations mapping raw inputs to pre-normalization features ``f``. The
training objectives (vMFML, softmax, margin vMFML, softmax + center loss)
are thin wrappers owning the loss-layer parameters.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .directional import as_batch, normalize
from .errors import DimensionMismatchError, DivergenceError, DomainError
from .losses import (
    KAPPA_FLOOR,
    VmfmlHead,
    center_loss,
    softmax_forward_backward,
    vmfml_backward,
    vmfml_forward,
)

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "prelu", "identity")
PRELU_INIT = 0.25


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "identity"
    alpha: np.ndarray | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionMismatchError(f"bad layer shapes W {self.weight.shape}, b {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.activation == "prelu":
            if self.alpha is None:
                self.alpha = np.full(self.weight.shape[0], PRELU_INIT)
            self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
            if self.alpha.shape[0] != self.weight.shape[0] or not np.all(np.isfinite(self.alpha)):
                raise DomainError("prelu alpha must be finite, one per output channel")
        else:
            self.alpha = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNetwork:
    layers: list
    input_dim: int

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.in_dim != dim:
                raise DimensionMismatchError(f"layer {i} expects input {layer.in_dim}, previous gives {dim}")
            dim = layer.out_dim

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else self.input_dim

    @classmethod
    def init(cls, input_dim: int, hidden, feature_dim: int, rng: np.random.Generator,
             activation: str = "prelu") -> "DenseNetwork":
        """Glorot-uniform weights, zero biases; the last layer is linear."""
        dims = [input_dim, *hidden, feature_dim]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            act = activation if i < len(dims) - 2 else "identity"
            layers.append(Layer(rng.uniform(-bound, bound, (fan_out, fan_in)), np.zeros(fan_out), act))
        return cls(layers, input_dim)

    def parameters(self):
        """Yield ``(name, array)`` for every trainable tensor, in declaration order."""
        for i, layer in enumerate(self.layers):
            yield f"layer{i}.weight", layer.weight
            yield f"layer{i}.bias", layer.bias
            if layer.alpha is not None:
                yield f"layer{i}.alpha", layer.alpha

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation,
                   None if l.alpha is None else l.alpha.copy()) for l in self.layers],
            self.input_dim,
        )


def _activate(layer: Layer, a: np.ndarray) -> np.ndarray:
    if layer.activation == "relu":
        return np.maximum(a, 0.0)
    if layer.activation == "prelu":
        return np.where(a > 0, a, a * layer.alpha)
    return a


def _forward_cache(net: DenseNetwork, inputs):
    h = as_batch(inputs, "inputs")
    if h.shape[1] != net.input_dim:
        raise DimensionMismatchError(f"inputs have {h.shape[1]} columns, network expects {net.input_dim}")
    cache = []
    for layer in net.layers:
        a = h @ layer.weight.T + layer.bias
        cache.append((h, a))
        h = _activate(layer, a)
    return h, cache


def forward(net: DenseNetwork, inputs) -> np.ndarray:
    """Raw (unnormalized) features for a batch of inputs."""
    return _forward_cache(net, inputs)[0]


def backward(net: DenseNetwork, inputs, grad_features):
    """Reverse-mode pass. Returns ``(param_grads, grad_inputs)``; ``param_grads`` maps parameter names to arrays."""
    out, cache = _forward_cache(net, inputs)
    g = np.asarray(grad_features, dtype=float)
    if g.shape != out.shape:
        raise DimensionMismatchError(f"grad_features shape {g.shape} != features shape {out.shape}")
    grads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h_in, a = cache[i]
        if layer.activation == "relu":
            g = g * (a > 0)
        elif layer.activation == "prelu":
            grads[f"layer{i}.alpha"] = np.sum(g * np.where(a > 0, 0.0, a), axis=0)
            g = g * np.where(a > 0, 1.0, layer.alpha)
        grads[f"layer{i}.weight"] = g.T @ h_in
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        g = g @ layer.weight
    return grads, g


def extract_features(net: DenseNetwork, inputs, flip_policy: str = "none", image_shape=None) -> np.ndarray:
    """Unit features; ``horizontal-flip-max`` takes the elementwise max over an image and its mirror."""
    x = as_batch(inputs, "inputs")
    if flip_policy == "none":
        return normalize(forward(net, x))
    if flip_policy != "horizontal-flip-max":
        raise DomainError(f"unknown flip policy {flip_policy!r}")
    if image_shape is None:
        raise DomainError("horizontal flip needs image-shaped inputs (image_shape=(height, width))")
    h, w = image_shape
    if h * w != x.shape[1]:
        raise DimensionMismatchError(f"image shape {image_shape} does not match {x.shape[1]} input columns")
    flipped = x.reshape(-1, h, w)[:, :, ::-1].reshape(x.shape[0], -1)
    return normalize(np.maximum(forward(net, x), forward(net, flipped)))


# ---------------------------------------------------------------- objectives

class VmfmlObjective:
    """vMFML loss layer with its trainable class weights and (optionally) kappa."""

    name = "vmfml"

    def __init__(self, head: VmfmlHead):
        self.weights = head.weights.copy()
        self.kappa = np.array([head.kappa])
        self.kappa_policy = head.kappa_policy
        self.lr_multiplier = head.lr_multiplier
        self.margin = head.margin

    @property
    def head(self) -> VmfmlHead:
        return VmfmlHead(self.weights, float(self.kappa[0]), self.kappa_policy, self.lr_multiplier, self.margin)

    def parameters(self):
        yield "head.weight", self.weights
        if self.kappa_policy == "learned":
            yield "head.kappa", self.kappa

    def lr_scale(self, name: str) -> float:
        return self.lr_multiplier if name == "head.kappa" else 1.0

    def decays(self, name: str) -> bool:
        return name != "head.kappa"

    def loss_and_grads(self, features, labels, reduction="mean"):
        out = vmfml_backward(self.head, features, labels, reduction)
        grads = {"head.weight": out.grad_weights}
        if self.kappa_policy == "learned":
            grads["head.kappa"] = np.array([out.grad_kappa])
        return out.loss, out.grad_features, grads

    def loss(self, features, labels, reduction="mean") -> float:
        return vmfml_forward(self.head, features, labels, reduction).loss

    def logits(self, features) -> np.ndarray:
        return normalize(features) @ normalize(self.weights).T

    def after_step(self, lr: float) -> None:
        np.maximum(self.kappa, KAPPA_FLOOR, out=self.kappa)


class SoftmaxObjective:
    name = "softmax"

    def __init__(self, weights, biases=None):
        self.weights = np.array(weights, dtype=float)
        self.biases = np.zeros(self.weights.shape[0]) if biases is None else np.array(biases, dtype=float)

    @classmethod
    def init(cls, n_classes: int, dim: int, rng: np.random.Generator) -> "SoftmaxObjective":
        bound = math.sqrt(6.0 / (n_classes + dim))
        return cls(rng.uniform(-bound, bound, (n_classes, dim)))

    def parameters(self):
        yield "softmax.weight", self.weights
        yield "softmax.bias", self.biases

    def lr_scale(self, name: str) -> float:
        return 1.0

    def decays(self, name: str) -> bool:
        return True

    def loss_and_grads(self, features, labels, reduction="mean"):
        out = softmax_forward_backward(self.weights, self.biases, features, labels, reduction)
        return out.loss, out.grad_features, {"softmax.weight": out.grad_weights,
                                             "softmax.bias": out.extra["grad_biases"]}

    def loss(self, features, labels, reduction="mean") -> float:
        return softmax_forward_backward(self.weights, self.biases, features, labels, reduction).loss

    def logits(self, features) -> np.ndarray:
        return as_batch(features) @ self.weights.T + self.biases

    def after_step(self, lr: float) -> None:
        pass


class SoftmaxCenterObjective(SoftmaxObjective):
    """Softmax plus ``lam`` times center loss; centers move by their own rate, outside SGD."""

    name = "softmax+center"

    def __init__(self, weights, biases=None, centers=None, lam: float = 0.01, center_lr: float = 0.5):
        super().__init__(weights, biases)
        self.centers = np.zeros_like(self.weights) if centers is None else np.array(centers, dtype=float)
        self.lam = lam
        self.center_lr = center_lr
        self._pending = None

    def loss_and_grads(self, features, labels, reduction="mean"):
        loss, gf, grads = super().loss_and_grads(features, labels, reduction)
        c_loss, c_gf, c_gc = center_loss(features, labels, self.centers, reduction)
        self._pending = c_gc
        return loss + self.lam * c_loss, gf + self.lam * c_gf, grads

    def loss(self, features, labels, reduction="mean") -> float:
        return super().loss(features, labels, reduction) + self.lam * center_loss(
            features, labels, self.centers, reduction)[0]

    def after_step(self, lr: float) -> None:
        if self._pending is not None:
            self.centers -= self.center_lr * self._pending
            self._pending = None


# ---------------------------------------------------------------- training

@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 120
    epochs: int = 10
    schedule: list | None = None  # [(epoch, lr), ...]; None = x0.1 drop at 80% of epochs
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise DomainError("learning rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise DomainError("weight decay must be >= 0")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise DomainError("batch size must be a positive integer")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise DomainError("epochs must be a non-negative integer")

    def lr_at(self, epoch: int) -> float:
        schedule = self.schedule
        if schedule is None:
            schedule = [(0, self.learning_rate), (int(math.floor(0.8 * self.epochs)), self.learning_rate * 0.1)]
            if self.epochs < 2:
                schedule = schedule[:1]
        lr = self.learning_rate
        for start, value in sorted(schedule):
            if epoch >= start:
                lr = value
        return lr


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)
    eval_accuracy: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False


def accuracy(net: DenseNetwork, objective, inputs, labels) -> float:
    pred = np.argmax(objective.logits(forward(net, inputs)), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def _all_params(net, objective):
    yield from net.parameters()
    yield from objective.parameters()


def train(net: DenseNetwork, objective, dataset, cfg: SgdConfig, eval_data=None) -> TrainReport:
    """Mini-batch SGD with momentum, updating ``net`` and ``objective`` in place.

    Update rule: ``v <- m v - lr (g + wd theta)``, ``theta <- theta + v``,
    with batch-mean losses. Weight decay skips kappa and PReLU slopes; kappa
    uses its own learning-rate multiplier. Raises ``DivergenceError`` (with
    the partial report attached as ``.report``) on a non-finite loss.
    """
    inputs, labels = dataset
    inputs = as_batch(inputs, "inputs")
    labels = np.asarray(labels)
    n = inputs.shape[0]
    if n == 0 or labels.shape[0] != n:
        raise DimensionMismatchError("dataset must be non-empty with one label per input")
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(p) for name, p in _all_params(net, objective)}
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb = inputs[idx], labels[idx]
            feats = forward(net, xb)
            loss, grad_f, grads = objective.loss_and_grads(feats, yb, reduction="mean")
            if not math.isfinite(loss):
                report.diverged = True
                report.wall_time = time.perf_counter() - start
                err = DivergenceError(f"non-finite loss at epoch {epoch}")
                err.report = report
                raise err
            total += loss * idx.size
            net_grads, _ = backward(net, xb, grad_f)
            grads.update(net_grads)
            for name, param in _all_params(net, objective):
                g = grads[name]
                if name.startswith("layer"):
                    scale, decay = 1.0, not name.endswith(".alpha")
                else:
                    scale, decay = objective.lr_scale(name), objective.decays(name)
                if cfg.weight_decay and decay:
                    g = g + cfg.weight_decay * param
                v = velocity[name]
                v *= cfg.momentum
                v -= lr * scale * g
                param += v
            objective.after_step(lr)
        report.train_loss.append(total / n)
        report.train_accuracy.append(accuracy(net, objective, inputs, labels))
        if eval_data is not None:
            ex, ey = eval_data
            report.eval_loss.append(objective.loss(forward(net, ex), ey))
            report.eval_accuracy.append(accuracy(net, objective, ex, ey))
        log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, report.train_loss[-1])
    report.wall_time = time.perf_counter() - start
    return report


def intra_class_cosine(features, labels) -> float:
    """Mean cosine between each unit feature and its class mean direction."""
    x = normalize(as_batch(features))
    labels = np.asarray(labels)
    vals = []
    for c in np.unique(labels):
        members = x[labels == c]
        vals.append(members @ normalize(members.sum(axis=0)))
    return float(np.mean(np.concatenate(vals)))
