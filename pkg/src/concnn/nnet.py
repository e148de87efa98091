"""Minimal feed-forward network for the weight function, with exact gradients.

The network maps (lagged shares, covariates) to a strictly positive scalar
weight: affine layers with ReLU hidden activations and a Softplus output,
preceded by a per-feature affine normalizer fitted on training data.
Parameters live in one flat float64 vector with a fixed layout
(W1, b1, W2, b2, ...), which makes the optimizer and the finite-difference
checks straightforward.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArchitecture, NonFiniteInput

MODEL_FORMAT_VERSION = 1

MAX_HIDDEN_LAYERS = 4
MAX_WIDTH = 32


def softplus(z):
    """Numerically stable log(1 + e^z)."""
    z = np.asarray(z, dtype=float)
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def softplus_inv(y: float) -> float:
    """Inverse of softplus, y > 0."""
    return float(np.log(np.expm1(y)))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z):
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class Architecture:
    """Shape of the weight network: input width and hidden widths."""

    input_dim: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise InvalidArchitecture("input_dim must be >= 1")
        if len(self.hidden) > MAX_HIDDEN_LAYERS:
            raise InvalidArchitecture(f"at most {MAX_HIDDEN_LAYERS} hidden layers")
        for w in self.hidden:
            if not 1 <= w <= MAX_WIDTH:
                raise InvalidArchitecture(f"hidden widths must be in [1, {MAX_WIDTH}]")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, output layer last."""
        dims = [self.input_dim, *self.hidden, 1]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine transform z = (x - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.scale <= 0):
            raise InvalidArchitecture("normalizer scales must be > 0")

    @staticmethod
    def identity(dim: int) -> "Normalizer":
        return Normalizer(mean=np.zeros(dim), scale=np.ones(dim))

    @staticmethod
    def fit(features: np.ndarray) -> "Normalizer":
        """Mean/std normalizer from a (m, dim) feature matrix."""
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale = np.where(scale < 1e-8, 1.0, scale)
        return Normalizer(mean=mean, scale=scale)


@dataclass
class WeightNet:
    """Weight function: parameters plus architecture and normalizer."""

    architecture: Architecture
    parameters: np.ndarray
    normalizer: Normalizer

    def __post_init__(self) -> None:
        if len(self.parameters) != self.architecture.n_params:
            raise InvalidArchitecture(
                f"parameter vector length {len(self.parameters)} does not match "
                f"architecture ({self.architecture.n_params} expected)"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Unpack the flat vector into (W, b) pairs; W has shape (out, in)."""
        out, off = [], 0
        for fi, fo in self.architecture.layer_dims:
            w = self.parameters[off:off + fi * fo].reshape(fo, fi)
            off += fi * fo
            b = self.parameters[off:off + fo]
            off += fo
            out.append((w, b))
        return out

    def copy(self) -> "WeightNet":
        return WeightNet(self.architecture, self.parameters.copy(), self.normalizer)


@dataclass(frozen=True)
class Gradient:
    """Flat parameter gradient plus gradient w.r.t. the raw input features."""

    params: np.ndarray
    inputs: np.ndarray


def init_params(arch: Architecture, seed: int) -> WeightNet:
    """He-uniform weights, zero biases, final bias at softplus^-1(1).

    The final-bias choice starts every product near weight 1 (equal
    competitiveness), which avoids the all-zero-prediction failure mode of
    nets initialized deep in the flat Softplus tail.
    """
    rng = np.random.default_rng(seed)
    parts = []
    dims = arch.layer_dims
    for k, (fi, fo) in enumerate(dims):
        bound = np.sqrt(6.0 / fi)
        w = rng.uniform(-bound, bound, size=(fo, fi))
        b = np.zeros(fo)
        if k == len(dims) - 1:
            b[:] = softplus_inv(1.0)
        parts.append(w.ravel())
        parts.append(b)
    params = np.concatenate(parts)
    return WeightNet(arch, params, Normalizer.identity(arch.input_dim))


def forward_batch(net: WeightNet, inputs: np.ndarray):
    """Evaluate the net on a (m, input_dim) matrix.

    Returns (outputs (m,), cache) where the cache carries the activations
    needed by backward_batch.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[np.newaxis, :]
    if not np.all(np.isfinite(inputs)):
        raise NonFiniteInput("non-finite network input")
    z = (inputs - net.normalizer.mean) / net.normalizer.scale
    acts = [z]
    pre = []
    layers = net.layers()
    a = z
    for w, b in layers[:-1]:
        p = a @ w.T + b
        pre.append(p)
        a = relu(p)
        acts.append(a)
    w, b = layers[-1]
    p_out = (a @ w.T + b)[:, 0]
    out = softplus(p_out)
    return out, (inputs, acts, pre, p_out)


def forward(net: WeightNet, x: np.ndarray) -> float:
    """Single-input evaluation; always strictly positive."""
    out, _ = forward_batch(net, np.asarray(x, dtype=float)[np.newaxis, :])
    return float(out[0])


def backward_batch(net: WeightNet, cache, upstream: np.ndarray):
    """Reverse-mode gradient of sum_m upstream[m] * output[m].

    Returns (flat parameter gradient, per-sample raw-input gradients (m, dim)).
    ReLU subgradient at 0 is taken as 0.
    """
    inputs, acts, pre, p_out = cache
    upstream = np.asarray(upstream, dtype=float)
    layers = net.layers()
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)

    # output layer: d softplus(p) = sigmoid(p)
    dp = (upstream * sigmoid(p_out))[:, np.newaxis]
    w_out, _ = layers[-1]
    grads_w[-1] = dp.T @ acts[-1]
    grads_b[-1] = dp.sum(axis=0)
    da = dp @ w_out

    for k in range(len(layers) - 2, -1, -1):
        dpk = da * (pre[k] > 0)
        w_k, _ = layers[k]
        grads_w[k] = dpk.T @ acts[k]
        grads_b[k] = dpk.sum(axis=0)
        da = dpk @ w_k

    # da is now the gradient w.r.t. the normalized input
    input_grads = da / net.normalizer.scale

    flat = np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
    )
    if not np.all(np.isfinite(flat)):
        raise NonFiniteInput("non-finite gradient")
    return flat, input_grads


def backward(net: WeightNet, x: np.ndarray, upstream: float = 1.0) -> Gradient:
    """Exact gradient of upstream * forward(net, x)."""
    _, cache = forward_batch(net, np.asarray(x, dtype=float)[np.newaxis, :])
    flat, input_grads = backward_batch(net, cache, np.array([upstream]))
    return Gradient(params=flat, inputs=input_grads[0])


def input_lipschitz_bound(net: WeightNet) -> np.ndarray:
    """Certified per-feature bound on |d output / d input_j|.

    Product of absolute-value weight matrices; valid because ReLU and
    Softplus derivatives lie in [0, 1].
    """
    layers = net.layers()
    bound = np.abs(layers[0][0])
    for w, _ in layers[1:]:
        bound = np.abs(w) @ bound
    return bound[0] / net.normalizer.scale


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    near_kink: bool
    worst_index: int


def check_gradient(
    net: WeightNet,
    x: np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() against central finite differences.

    Relative error uses an absolute floor of 1e-8 in the denominator.  When
    some hidden pre-activation sits within |step| of the ReLU kink the
    report flags kink proximity (the comparison is still performed).
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    x = np.asarray(x, dtype=float)
    grad = backward(net, x, upstream=1.0)

    _, (_, _, pre, _) = forward_batch(net, x[np.newaxis, :])
    near_kink = any(np.any(np.abs(p) <= 10 * step) for p in pre)

    base = net.parameters
    fd = np.empty_like(base)
    for j in range(len(base)):
        pert = base.copy()
        pert[j] = base[j] + step
        hi = forward(WeightNet(net.architecture, pert, net.normalizer), x)
        pert[j] = base[j] - step
        lo = forward(WeightNet(net.architecture, pert, net.normalizer), x)
        fd[j] = (hi - lo) / (2 * step)

    denom = np.maximum(np.maximum(np.abs(fd), np.abs(grad.params)), 1e-8)
    rel = np.abs(fd - grad.params) / denom
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(
        max_rel_error=max_rel,
        passed=max_rel < tolerance or near_kink,
        near_kink=near_kink,
        worst_index=worst,
    )


# -- serialization -----------------------------------------------------------

def save_net(net: WeightNet, path: str) -> None:
    """Write a self-describing, bit-exact model file (JSON)."""
    doc = {
        "format": "concnn-weightnet",
        "version": MODEL_FORMAT_VERSION,
        "architecture": {
            "input_dim": net.architecture.input_dim,
            "hidden": list(net.architecture.hidden),
        },
        "normalizer": {
            "mean": base64.b64encode(np.ascontiguousarray(net.normalizer.mean).tobytes()).decode(),
            "scale": base64.b64encode(np.ascontiguousarray(net.normalizer.scale).tobytes()).decode(),
        },
        "parameters": base64.b64encode(np.ascontiguousarray(net.parameters).tobytes()).decode(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_net(path: str) -> WeightNet:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "concnn-weightnet" or doc.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidArchitecture(f"unsupported model file {path}")
    arch = Architecture(
        input_dim=int(doc["architecture"]["input_dim"]),
        hidden=tuple(int(h) for h in doc["architecture"]["hidden"]),
    )

    def _arr(b64: str) -> np.ndarray:
        return np.frombuffer(base64.b64decode(b64), dtype=np.float64).copy()

    norm = Normalizer(mean=_arr(doc["normalizer"]["mean"]),
                      scale=_arr(doc["normalizer"]["scale"]))
    return WeightNet(arch, _arr(doc["parameters"]), norm)
