"""AdamW with a linear-warmup cosine learning-rate schedule.

Parameters live as plain numpy arrays owned by the caller; step() consumes a
matching list of gradient arrays. Decoupled weight decay, so weight_decay=0
reduces to Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def cosine_warmup_lr(step: int, peak_lr: float, total_steps: int, warmup_frac: float = 0.03) -> float:
    """Learning rate at a 0-based step: linear ramp to peak over the warmup
    fraction, then cosine decay hitting exactly zero at total_steps."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return 0.0
    progress = (step - warmup) / (total_steps - warmup)
    return peak_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class AdamW:
    params: list[np.ndarray]
    peak_lr: float
    total_steps: int
    warmup_frac: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list, repr=False)
    _v: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]

    def current_lr(self) -> float:
        return cosine_warmup_lr(self.step_count, self.peak_lr, self.total_steps, self.warmup_frac)

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} grads, got {len(grads)}")
        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= lr * update
