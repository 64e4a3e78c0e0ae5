"""Minimal differentiable-layer engine used by every trained model.

Deliberately small: dense affine layers, ReLU/sigmoid nonlinearities, a
shared-operator graph convolution, softmax cross-entropy and binary
cross-entropy losses, and full-batch Adam. Everything is float64 numpy
and deterministic for a fixed seed, which is what makes run artifacts
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, NumericError

LATENT_DIM = 20


@dataclass
class TrainConfig:
    """Optimizer and schedule settings shared by all trained models.

    batch_size None means one full-batch step per epoch; otherwise epochs
    iterate consecutive slices in a fixed order, keeping training
    bit-reproducible for a fixed seed.
    """

    epochs: int = 100
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    seed: int = 0
    batch_size: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer: params/grads dicts plus forward/backward."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Affine(Layer):
    """Dense layer y = x W + b.

    init "he" precedes ReLU, "xavier" precedes sigmoid/softmax heads.
    """

    def __init__(self, n_in: int, n_out: int, init: str, rng: np.random.Generator):
        super().__init__()
        if init == "he":
            w = he_uniform(rng, n_in, (n_in, n_out))
        elif init == "xavier":
            w = xavier_uniform(rng, n_in, n_out, (n_in, n_out))
        else:
            raise ConfigError(f"unknown init scheme {init!r}")
        self.params = {"W": w, "b": np.zeros(n_out)}
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._x
        self.grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        # Stable in both tails.
        pos = x >= 0
        z = np.where(pos, -x, x)
        e = np.exp(z)
        self._p = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._p

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._p * (1.0 - self._p)


class GraphConv(Layer):
    """Shared-operator graph convolution: out = (A H) W per day.

    Input has shape (days, nodes, f_in); the operator A is fixed at
    construction and is not a trainable parameter. No bias term, matching
    the first-order propagation rule.
    """

    def __init__(self, n_in: int, n_out: int, operator: np.ndarray, rng: np.random.Generator):
        super().__init__()
        self.operator = np.asarray(operator, dtype=np.float64)
        self.params = {"W": he_uniform(rng, n_in, (n_in, n_out))}
        self._ah: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.operator.shape[0]:
            raise DataError(
                f"graph layer expects (days, {self.operator.shape[0]}, f) input, "
                f"got {x.shape}"
            )
        self._ah = np.einsum("nm,dmf->dnf", self.operator, x)
        return self._ah @ self.params["W"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads = {"W": np.einsum("dnf,dng->fg", self._ah, dout)}
        d_ah = dout @ self.params["W"].T
        return np.einsum("mn,dmf->dnf", self.operator, d_ah)


class Flatten(Layer):
    """(days, nodes, f) -> (days, nodes * f), row-major per day."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class SoftmaxCrossEntropy:
    """Mean softmax cross-entropy against integer class labels."""

    def forward(self, logits: np.ndarray, labels: np.ndarray) -> float:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self._log_probs = shifted - log_z
        self._labels = labels
        return float(-self._log_probs[np.arange(len(labels)), labels].mean())

    def backward(self) -> np.ndarray:
        probs = np.exp(self._log_probs)
        probs[np.arange(len(self._labels)), self._labels] -= 1.0
        return probs / len(self._labels)

    def predictions(self) -> np.ndarray:
        return self._log_probs.argmax(axis=1)


class BinaryCrossEntropy:
    """Elementwise binary cross-entropy between probabilities and targets.

    Probabilities are clipped away from {0, 1} by 1e-12 inside the logs;
    the gradient differentiates the same clipped expression.
    """

    _EPS = 1e-12

    def forward(self, probs: np.ndarray, targets: np.ndarray) -> float:
        self._p = np.clip(probs, self._EPS, 1.0 - self._EPS)
        self._x = targets
        loss = -(targets * np.log(self._p) + (1.0 - targets) * np.log(1.0 - self._p))
        return float(loss.mean())

    def backward(self) -> np.ndarray:
        n = self._p.size
        return (-self._x / self._p + (1.0 - self._x) / (1.0 - self._p)) / n


class Network:
    """A plain sequential stack of layers."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        for layer in self.layers if upto is None else self.layers[:upto]:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def param_items(self) -> list[tuple[int, str, np.ndarray]]:
        return [
            (i, name, arr)
            for i, layer in enumerate(self.layers)
            for name, arr in sorted(layer.params.items())
        ]

    def grad_arrays(self) -> list[np.ndarray]:
        return [self.layers[i].grads[name] for i, name, _ in self.param_items()]


class Adam:
    """Adam with decoupled weight decay.

    After the bias-corrected Adam update, parameters shrink by the factor
    (1 - lr * weight_decay); decoupling keeps the decay magnitude
    independent of the adaptive step scaling.
    """

    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        shrink = 1.0 - cfg.learning_rate * cfg.weight_decay
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if cfg.weight_decay:
                p *= shrink


def train_network(
    net: Network,
    loss,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    track_accuracy: bool = False,
) -> tuple[list[float], list[float]]:
    """Run the configured number of epochs; returns (loss_log, accuracy_log).

    Logged losses are the pre-update values of each epoch (weighted over
    batches when batching is on).
    """
    params = [arr for _, _, arr in net.param_items()]
    opt = Adam(params, cfg)
    n = inputs.shape[0]
    size = n if cfg.batch_size is None else min(cfg.batch_size, n)
    loss_log: list[float] = []
    acc_log: list[float] = []
    for epoch in range(cfg.epochs):
        total, correct = 0.0, 0.0
        for start in range(0, n, size):
            xb = inputs[start : start + size]
            tb = targets[start : start + size]
            out = net.forward(xb)
            batch_loss = loss.forward(out, tb)
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            total += batch_loss * xb.shape[0]
            if track_accuracy:
                correct += float((loss.predictions() == tb).sum())
            net.backward(loss.backward())
            opt.step(net.grad_arrays())
        loss_log.append(total / n)
        if track_accuracy:
            acc_log.append(correct / n)
    return loss_log, acc_log


def grad_check(
    net: Network,
    loss,
    probe_input: np.ndarray,
    targets: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Compare backprop parameter gradients against central differences.

    Returns the max over parameters of |g_a - g_n| / max(1, |g_a| + |g_n|).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")

    def eval_loss() -> float:
        return loss.forward(net.forward(probe_input), targets)

    base = eval_loss()
    if not np.isfinite(base):
        raise NumericError("non-finite loss on probe input")
    net.backward(loss.backward())
    analytic = [g.copy() for g in net.grad_arrays()]

    worst = 0.0
    for (_, _, arr), g_a in zip(net.param_items(), analytic):
        flat = arr.reshape(-1)
        ga_flat = g_a.reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + epsilon
            up = eval_loss()
            flat[idx] = saved - epsilon
            down = eval_loss()
            flat[idx] = saved
            g_n = (up - down) / (2.0 * epsilon)
            denom = max(1.0, abs(ga_flat[idx]) + abs(g_n))
            worst = max(worst, abs(ga_flat[idx] - g_n) / denom)
    return worst
