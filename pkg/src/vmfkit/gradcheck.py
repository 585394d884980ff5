"""Central finite-difference checks of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import VmfmlHead, center_loss, softmax_forward_backward, vmfml_backward, vmfml_loss_value
from .network import DenseNetwork, SoftmaxObjective, VmfmlObjective, backward, forward

STEP = 1e-5
TOLERANCE = 1e-6
# denominators below this are treated as absolute error (both gradients ~ 0)
_FLOOR = 1e-8


def numerical_gradient(fn, arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``arr``, perturbed in place and restored."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        plus = fn()
        flat[i] = old - h
        minus = fn()
        flat[i] = old
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), _FLOOR))


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def check_vmfml(head: VmfmlHead, features, labels, h: float = STEP, corrupt: str | None = None):
    """Compare ``vmfml_backward`` with finite differences of ``vmfml_forward`` for f, W and kappa."""
    f = np.array(features, dtype=float)
    w = head.weights.copy()
    k = np.array([head.kappa])
    out = vmfml_backward(head, f, labels)

    def loss():
        return vmfml_loss_value(w, float(k[0]), f, labels, head.margin)

    analytic = {"vmfml.features": out.grad_features, "vmfml.weights": out.grad_weights,
                "vmfml.kappa": np.array([out.grad_kappa])}
    numeric = {"vmfml.features": numerical_gradient(loss, f, h),
               "vmfml.weights": numerical_gradient(loss, w, h),
               "vmfml.kappa": numerical_gradient(loss, k, h)}
    return _compare(analytic, numeric, corrupt), out


def check_softmax(weights, biases, features, labels, h: float = STEP, corrupt: str | None = None):
    w = np.array(weights, dtype=float)
    b = np.array(biases, dtype=float)
    f = np.array(features, dtype=float)
    out = softmax_forward_backward(w, b, f, labels)

    def loss():
        return softmax_forward_backward(w, b, f, labels).loss

    analytic = {"softmax.features": out.grad_features, "softmax.weights": out.grad_weights,
                "softmax.biases": out.extra["grad_biases"]}
    numeric = {"softmax.features": numerical_gradient(loss, f, h),
               "softmax.weights": numerical_gradient(loss, w, h),
               "softmax.biases": numerical_gradient(loss, b, h)}
    return _compare(analytic, numeric, corrupt)


def check_center(features, labels, centers, h: float = STEP, corrupt: str | None = None):
    f = np.array(features, dtype=float)
    c = np.array(centers, dtype=float)
    _, gf, gc = center_loss(f, labels, c)

    def loss():
        return center_loss(f, labels, c)[0]

    numeric = {"center.features": numerical_gradient(loss, f, h), "center.centers": numerical_gradient(loss, c, h)}
    return _compare({"center.features": gf, "center.centers": gc}, numeric, corrupt)


def check_network(net: DenseNetwork, objective, inputs, labels, h: float = STEP, corrupt: str | None = None):
    """End-to-end check: loss -> head -> network parameters -> inputs."""
    x = np.array(inputs, dtype=float)

    def loss():
        return objective.loss(forward(net, x), labels, reduction="sum")

    _, grad_f, head_grads = objective.loss_and_grads(forward(net, x), labels, reduction="sum")
    net_grads, grad_in = backward(net, x, grad_f)
    analytic, numeric = {}, {}
    for name, param in list(net.parameters()) + list(objective.parameters()):
        analytic[name] = net_grads.get(name, head_grads.get(name))
        numeric[name] = numerical_gradient(loss, param, h)
    analytic["inputs"] = grad_in
    numeric["inputs"] = numerical_gradient(loss, x, h)
    return _compare(analytic, numeric, corrupt)


def _compare(analytic: dict, numeric: dict, corrupt: str | None) -> list[CheckResult]:
    results = []
    for name, a in analytic.items():
        a = np.asarray(a, dtype=float)
        if corrupt is not None and name == corrupt and a.size:
            a = a + 1e-3 * (1.0 + np.abs(a))
        results.append(CheckResult(name, relative_error(a, numeric[name])))
    return results


def random_vmfml_instance(rng: np.random.Generator, d: int, m: int, n: int, margin: float = 1.0,
                          kappa_policy: str = "fixed"):
    head = VmfmlHead(rng.standard_normal((m, d)) * rng.uniform(0.5, 2.0, (m, 1)),
                     kappa=float(rng.uniform(1.0, 32.0)), kappa_policy=kappa_policy, margin=margin)
    features = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0, (n, 1))
    labels = rng.integers(0, m, n)
    return head, features, labels


def run_suite(seed: int = 0, vmfml_instances: int = 108, hidden=(6,), input_dim: int = 8,
              feature_dim: int = 4, n_classes: int = 3, corrupt: str | None = None) -> list[CheckResult]:
    """Full finite-difference suite: vMFML on a (d, M, N) grid, margin vMFML, softmax, center loss and
    end-to-end networks (vMFML and softmax heads). ``hidden=None`` checks a zero-layer network, whose
    own parameter list is empty."""
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    grid = [(d, m, n) for d in (4, 8, 64) for m in (3, 10) for n in (1, 16)]
    for i in range(vmfml_instances):
        d, m, n = grid[i % len(grid)]
        head, f, y = random_vmfml_instance(rng, d, m, n)
        results += check_vmfml(head, f, y, corrupt=corrupt)[0]
    for margin in (2.0, 4.0):
        head, f, y = random_vmfml_instance(rng, 8, 5, 4, margin=margin)
        results += [CheckResult(f"margin{margin:g}:" + r.name, r.error) for r in check_vmfml(head, f, y)[0]]
    w, b = rng.standard_normal((5, 8)), rng.standard_normal(5)
    results += check_softmax(w, b, rng.standard_normal((4, 8)), rng.integers(0, 5, 4), corrupt=corrupt)
    results += check_center(rng.standard_normal((6, 4)), rng.integers(0, 3, 6), rng.standard_normal((3, 4)),
                            corrupt=corrupt)
    for kind in ("vmfml", "softmax"):
        if hidden is None:
            net, input_dim = DenseNetwork([], feature_dim), feature_dim
        else:
            net = DenseNetwork.init(input_dim, list(hidden), feature_dim, rng, activation="prelu")
        for layer in net.layers:
            layer.bias[:] = rng.standard_normal(layer.bias.shape) * 0.1
            if layer.alpha is not None:
                layer.alpha[:] = rng.uniform(0.1, 0.4, layer.alpha.shape)
        if kind == "vmfml":
            obj = VmfmlObjective(VmfmlHead.init(n_classes, feature_dim, rng, kappa_policy="learned", kappa=4.0))
        else:
            obj = SoftmaxObjective.init(n_classes, feature_dim, rng)
        x = rng.standard_normal((5, input_dim))
        y = rng.integers(0, n_classes, 5)
        results += [CheckResult(f"{kind}-net:" + r.name, r.error)
                    for r in check_network(net, obj, x, y, corrupt=corrupt)]
    return results
