"""Dense networks in plain numpy: forward/backward, Adam, soft target updates.

Weights are stored ``(fan_in, fan_out)`` and inputs are row batches, so a layer
computes ``x @ W + b``. A network may take a second input (``extra``) that is
concatenated to the activations entering layer ``inject_at``; the critic uses
this to receive the action at its second hidden layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NumericError, ProtocolError

CHECKPOINT_FORMAT = 1


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str = "identity"  # "identity" or "tanh_scaled"
    out_low: np.ndarray | None = None
    out_high: np.ndarray | None = None
    inject_at: int | None = None
    extra_dim: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected_in = w.shape[0]
            if i > 0:
                expected_in = self.weights[i - 1].shape[1] + (self.extra_dim if i == self.inject_at else 0)
            if w.shape[0] != expected_in or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i} shapes do not chain: W{w.shape}, b{b.shape}")
        if self.output == "tanh_scaled":
            if self.out_low is None or self.out_high is None:
                raise ValueError("tanh_scaled output needs out_low/out_high")
            self.out_low = np.asarray(self.out_low, dtype=float)
            self.out_high = np.asarray(self.out_high, dtype=float)
        elif self.output != "identity":
            raise ValueError(f"unknown output activation {self.output!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0] - (self.extra_dim if self.inject_at == 0 else 0)

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output,
            None if self.out_low is None else self.out_low.copy(),
            None if self.out_high is None else self.out_high.copy(),
            self.inject_at,
            self.extra_dim,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for a in self.arrays():
            a[...] = vec[i : i + a.size].reshape(a.shape)
            i += a.size
        self.version += 1

    def check_finite(self) -> None:
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise NumericError("network parameters became non-finite")


def init_params(
    layer_sizes,
    kind: str,
    rng: np.random.Generator,
    out_low=None,
    out_high=None,
    extra_dim: int = 0,
    inject_at: int | None = None,
    final_scale: float = 3e-3,
) -> NetworkParams:
    """Fan-in uniform initialisation; the last layer is uniform in ``±final_scale``.

    ``kind`` is ``"actor"`` (tanh output scaled to ``[out_low, out_high]``) or
    ``"critic"`` (linear output).
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if kind not in ("actor", "critic"):
        raise ValueError(f"kind must be 'actor' or 'critic', got {kind!r}")
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in = sizes[i] + (extra_dim if i == inject_at else 0)
        fan_out = sizes[i + 1]
        bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    if kind == "actor":
        return NetworkParams(weights, biases, "tanh_scaled", out_low, out_high, inject_at, extra_dim)
    return NetworkParams(weights, biases, "identity", None, None, inject_at, extra_dim)


class Cache(NamedTuple):
    inputs: list  # activations entering each layer (after any concatenation)
    pre: list  # pre-activations of each layer
    output_tanh: np.ndarray | None
    version: int
    squeeze: bool
    owner: int


def mlp_forward(params: NetworkParams, x, extra=None):
    """Return ``(output, cache)``; 1-D inputs give 1-D outputs."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
        if extra is not None:
            extra = np.asarray(extra, dtype=float)[None, :]
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.in_dim}")
    if params.inject_at is not None:
        if extra is None or extra.shape[-1] != params.extra_dim:
            raise ValueError(f"network expects an extra input of width {params.extra_dim}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if i == params.inject_at:
            h = np.concatenate([h, extra], axis=1)
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    t = None
    if params.output == "tanh_scaled":
        t = np.tanh(h)
        h = params.out_low + (params.out_high - params.out_low) * 0.5 * (t + 1.0)
    cache = Cache(inputs, pre, t, params.version, squeeze, id(params))
    return (h[0] if squeeze else h), cache


class Gradients(NamedTuple):
    param_grads: list  # [(dW, db), ...] per layer
    input_grad: np.ndarray
    extra_grad: np.ndarray | None


def mlp_backward(params: NetworkParams, cache: Cache, output_grad) -> Gradients:
    if cache.owner != id(params) or cache.version != params.version:
        raise ProtocolError("cache does not belong to the current parameters; run forward again")
    g = np.asarray(output_grad, dtype=float)
    if cache.squeeze:
        g = g.reshape(1, -1)
    if params.output == "tanh_scaled":
        g = g * (params.out_high - params.out_low) * 0.5 * (1.0 - cache.output_tanh**2)
    n_layers = len(params.weights)
    grads = [None] * n_layers
    extra_grad = None
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            g = g * (cache.pre[i] > 0)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ params.weights[i].T
        if i == params.inject_at:
            split = g.shape[1] - params.extra_dim
            extra_grad = g[:, split:]
            g = g[:, :split]
    if cache.squeeze:
        g = g[0]
        extra_grad = None if extra_grad is None else extra_grad[0]
    return Gradients(grads, g, extra_grad)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    numeric_floor: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **kw) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(opt: AdamState, params: NetworkParams, grads, lr: float) -> NetworkParams:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    flat_grads = []
    for gw, gb in grads:
        flat_grads += [gw, gb]
    arrays = params.arrays()
    if len(flat_grads) != len(arrays):
        raise ValueError("gradient list does not match the parameter layout")
    for i, g in enumerate(flat_grads):
        if g.shape != arrays[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {arrays[i].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NumericError(f"non-finite gradient: {bad} entries in tensor {i} (shape {g.shape})")
    opt.step_count += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step_count
    c2 = 1.0 - b2**opt.step_count
    for p, g, m, v in zip(arrays, flat_grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr != 0.0:
            p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.numeric_floor)
    params.version += 1
    return params


def soft_update(target: NetworkParams, source: NetworkParams, tau: float) -> NetworkParams:
    """``target <- tau * source + (1 - tau) * target`` in place."""
    t_arrays, s_arrays = target.arrays(), source.arrays()
    if len(t_arrays) != len(s_arrays) or any(a.shape != b.shape for a, b in zip(t_arrays, s_arrays)):
        raise ValueError("soft_update needs identically shaped networks")
    for t, s in zip(t_arrays, s_arrays):
        # difference form keeps t bitwise fixed when it already equals s
        t += tau * (s - t)
    target.version += 1
    return target


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int

    @property
    def pass_(self) -> bool:
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    params: NetworkParams,
    probe_input,
    tol: float = 1e-4,
    h: float = 1e-5,
    extra=None,
    backward: Callable = mlp_backward,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic parameter gradients with central differences.

    The probed scalar is ``sum(c * output)`` for a fixed random ``c``.
    """
    if params.n_params() > 10_000:
        raise ValueError("grad_check is brute force; keep networks under 10k parameters")
    x = np.atleast_2d(np.asarray(probe_input, dtype=float))
    ex = None if extra is None else np.atleast_2d(np.asarray(extra, dtype=float))
    coef = np.random.default_rng(seed).standard_normal((x.shape[0], params.out_dim))

    def objective() -> float:
        out, _ = mlp_forward(params, x, ex)
        return float(np.sum(coef * out))

    _, cache = mlp_forward(params, x, ex)
    grads = backward(params, cache, coef)
    analytic = np.concatenate([np.concatenate([gw.ravel(), gb.ravel()]) for gw, gb in grads.param_grads])
    base = params.flat()
    numeric = np.empty_like(base)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + h
        params.set_flat(base)
        up = objective()
        base[i] = orig - h
        params.set_flat(base)
        down = objective()
        base[i] = orig
        numeric[i] = (up - down) / (2 * h)
    params.set_flat(base)
    err = float(np.max(relative_error(analytic, numeric))) if base.size else 0.0
    return GradCheckReport(err, err <= tol, base.size)


# -- checkpoints -------------------------------------------------------------

def params_to_arrays(params: NetworkParams, prefix: str) -> dict[str, np.ndarray]:
    meta = {
        "output": params.output,
        "inject_at": params.inject_at,
        "extra_dim": params.extra_dim,
        "n_layers": len(params.weights),
    }
    out = {f"{prefix}.meta": np.array(json.dumps(meta))}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b
    if params.out_low is not None:
        out[f"{prefix}.out_low"] = params.out_low
        out[f"{prefix}.out_high"] = params.out_high
    return out


def params_from_arrays(data, prefix: str) -> NetworkParams:
    meta = json.loads(str(data[f"{prefix}.meta"]))
    n = meta["n_layers"]
    weights = [np.array(data[f"{prefix}.W{i}"], dtype=float) for i in range(n)]
    biases = [np.array(data[f"{prefix}.b{i}"], dtype=float) for i in range(n)]
    low = np.array(data[f"{prefix}.out_low"]) if f"{prefix}.out_low" in data else None
    high = np.array(data[f"{prefix}.out_high"]) if f"{prefix}.out_high" in data else None
    return NetworkParams(weights, biases, meta["output"], low, high, meta["inject_at"], meta["extra_dim"])


def save_params(path, params: NetworkParams) -> None:
    arrays = params_to_arrays(params, "net")
    arrays["format"] = np.array(CHECKPOINT_FORMAT)
    np.savez(path, **arrays)


def load_params(path) -> NetworkParams:
    with np.load(path) as data:
        if int(data["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {int(data['format'])}")
        return params_from_arrays(data, "net")
