"""Minimal dense reverse-mode differentiation on float64 numpy arrays.

A Tape records each primitive in execution order; backward() replays the
records in reverse, visiting each node exactly once. Only the primitives
needed by the two in-repo models exist. Every op validates that its output
is finite so silent NaN propagation cannot happen. Gradients flow only
through tensors that depend on a parameter; pure-constant subgraphs are
never recorded, which keeps frozen-weight math out of the backward sweep.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Sequence

import numpy as np


def _require_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # Summing is cheaper than isfinite().all() and still detects NaN/inf.
    if not math.isfinite(float(np.sum(arr))):
        raise ArithmeticError(f"non-finite values produced by {op}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "needs_grad", "tape")

    def __init__(self, data, tape: "Tape", needs_grad: bool):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.needs_grad:
            return
        if self.grad is None:
            # Copy: g may be shared with other consumers of the same buffer.
            self.grad = np.array(np.broadcast_to(g, self.data.shape))
        else:
            self.grad += g


class Tape:
    """Execution record for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def const(self, data) -> Tensor:
        return Tensor(data, self, needs_grad=False)

    def param(self, data) -> Tensor:
        return Tensor(data, self, needs_grad=True)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
        if out.needs_grad:
            self._records.append((out, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, back in reversed(self._records):
            if out.grad is not None:
                back(out.grad)


def _out(inputs: Sequence[Tensor], data: np.ndarray, op: str) -> Tensor:
    needs = any(t.needs_grad for t in inputs)
    return Tensor(_require_finite(data, op), inputs[0].tape, needs_grad=needs)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either both 2-D or equal leading batch dims."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        if a.data.shape[:-2] != b.data.shape[:-2]:
            raise ValueError(
                f"matmul batch dims differ: {a.data.shape} vs {b.data.shape}"
            )
    out = _out((a, b), np.matmul(a.data, b.data), "matmul")

    def backward(g: np.ndarray) -> None:
        if a.needs_grad:
            a.accumulate(np.matmul(g, _swap(b.data)))
        if b.needs_grad:
            b.accumulate(np.matmul(_swap(a.data), g))

    return a.tape.record(out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may broadcast over a's leading axes."""
    if a.data.shape != b.data.shape:
        if b.data.shape != a.data.shape[a.data.ndim - b.data.ndim :]:
            raise ValueError(f"add shapes incompatible: {a.data.shape} vs {b.data.shape}")
    out = _out((a, b), a.data + b.data, "add")
    lead = a.data.ndim - b.data.ndim

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        if b.needs_grad:
            b.accumulate(g.sum(axis=tuple(range(lead))) if lead else g)

    return a.tape.record(out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = _out((a, b), a.data * b.data, "mul")

    def backward(g: np.ndarray) -> None:
        if a.needs_grad:
            a.accumulate(g * b.data)
        if b.needs_grad:
            b.accumulate(g * a.data)

    return a.tape.record(out, backward)


def scale(a: Tensor, s: float) -> Tensor:
    out = _out((a,), a.data * s, "scale")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * s)

    return a.tape.record(out, backward)


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; mask is an additive constant (no grad)."""
    z = a.data if mask is None else a.data + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _out((a,), y, "softmax_rows")

    def backward(g: np.ndarray) -> None:
        dot = (g * y).sum(axis=-1, keepdims=True)
        a.accumulate(y * (g - dot))

    return a.tape.record(out, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out = _out((x, gamma, beta), xhat * gamma.data + beta.data, "layer_norm")

    def backward(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        if gamma.needs_grad:
            gamma.accumulate((g * xhat).sum(axis=lead))
        if beta.needs_grad:
            beta.accumulate(g.sum(axis=lead))
        if x.needs_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate((gx - m1 - xhat * m2) / sigma)

    return x.tape.record(out, backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GeLU; the backward differentiates the approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = _out((x,), 0.5 * x.data * (1.0 + t), "gelu")

    def backward(g: np.ndarray) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        d = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        x.accumulate(g * d)

    return x.tape.record(out, backward)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = _out((x,), x.data * s, "silu")

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * s * (1.0 + x.data * (1.0 - s)))

    return x.tape.record(out, backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    out = _out((table,), table.data[ids], "embedding_lookup")

    def backward(g: np.ndarray) -> None:
        if not table.needs_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return table.tape.record(out, backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(a.data.reshape(shape), a.tape, needs_grad=a.needs_grad)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.reshape(a.data.shape))

    return a.tape.record(out, backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes), a.tape, needs_grad=a.needs_grad)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.transpose(inverse))

    return a.tape.record(out, backward)


def reduce_mean(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    out = _out((a,), a.data.mean(axis=axis), "reduce_mean")

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.expand_dims(g, axis).repeat(n, axis=axis) / n)

    return a.tape.record(out, backward)


def cross_entropy_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token cross entropy; logits (N, V), integer targets (N,)."""
    targets = np.asarray(targets, dtype=np.intp)
    n = logits.data.shape[0]
    zmax = logits.data.max(axis=-1, keepdims=True)
    zs = logits.data - zmax
    lse = np.log(np.exp(zs).sum(axis=-1)) + zmax[:, 0]
    picked = logits.data[np.arange(n), targets]
    out = _out((logits,), np.array((lse - picked).mean()), "cross_entropy_loss")

    def backward(g: np.ndarray) -> None:
        p = np.exp(zs)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        logits.accumulate(float(g) * p / n)

    return logits.tape.record(out, backward)


def mean_squared_error(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    diff = pred.data - tdata
    inputs = (pred, target) if isinstance(target, Tensor) else (pred,)
    out = _out(inputs, np.array((diff**2).mean()), "mean_squared_error")

    def backward(g: np.ndarray) -> None:
        d = float(g) * 2.0 * diff / diff.size
        pred.accumulate(d)
        if isinstance(target, Tensor):
            target.accumulate(-d)

    return pred.tape.record(out, backward)


def finite_diff_check(
    build_loss: Callable[[list[Tensor]], Tensor],
    parameters: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    num_samples: int = 64,
    seed: int = 42,
) -> float:
    """Compare reverse-mode gradients with central differences.

    build_loss receives freshly wrapped parameter tensors and must return a
    scalar loss built on their tape. Returns the max relative error over
    num_samples randomly sampled coordinates (relative to the larger of the
    two gradients, floored at 1).
    """
    params = [np.asarray(p, dtype=np.float64).copy() for p in parameters]

    def value() -> float:
        tape = Tape()
        loss = build_loss([tape.param(p) for p in params])
        return float(loss.data)

    tape = Tape()
    wrapped = [tape.param(p) for p in params]
    loss = build_loss(wrapped)
    tape.backward(loss)
    grads = [
        w.grad if w.grad is not None else np.zeros_like(w.data) for w in wrapped
    ]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > num_samples:
        picked = rng.choice(len(coords), size=num_samples, replace=False)
        coords = [coords[int(c)] for c in picked]

    worst = 0.0
    for i, j in coords:
        flat = params[i].reshape(-1)
        keep = flat[j]
        flat[j] = keep + epsilon
        up = value()
        flat[j] = keep - epsilon
        down = value()
        flat[j] = keep
        fd = (up - down) / (2 * epsilon)
        ad = float(grads[i].reshape(-1)[j])
        err = abs(fd - ad) / max(1.0, abs(fd), abs(ad))
        worst = max(worst, err)
    return worst


def save_named_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Versioned JSON checkpoint of named float64 arrays (lossless)."""
    payload = {
        "version": "hydra-params/1",
        "arrays": {
            name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
            for name, a in arrays.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_named_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != "hydra-params/1":
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')!r}")
    return {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
