"""Desk-scale decoder-only transformer with frozen base weights and
trainable low-rank adapters on all seven projections.

The model exists to generate adapter gradient-norm traces and to serve as a
training oracle; it is not a general framework. Base weights are seeded
random and never updated. Each adapted projection computes
x @ W + (x @ A) @ B with A Gaussian-initialized and B starting at zero, so an
untrained model matches the frozen base exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .core import COMPONENT_ORDER, RankSchedule
from .errors import ShapeMismatchError, TrainingDivergedError
from .optim import AdamW

LORA_INIT_STD = 0.02
BASE_INIT_STD = 0.02


@dataclass(frozen=True)
class ToyModelConfig:
    num_layers: int = 8
    hidden_dim: int = 64
    intermediate_dim: int = 172
    num_heads: int = 4
    vocab_size: int = 256
    seq_len: int = 16
    batch_size: int = 16
    steps: int = 200
    peak_lr: float = 1e-3
    warmup_frac: float = 0.03
    weight_decay: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.num_layers < 1 or self.steps < 0:
            raise ValueError("num_layers must be >= 1 and steps >= 0")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )


def _component_dims(cfg: ToyModelConfig) -> dict[str, tuple[int, int]]:
    d, m = cfg.hidden_dim, cfg.intermediate_dim
    return {
        "Q": (d, d), "K": (d, d), "V": (d, d), "O": (d, d),
        "Up": (d, m), "Down": (m, d), "Gate": (d, m),
    }


class ToyLoraModel:
    """Frozen decoder stack plus per-component LoRA matrices."""

    def __init__(self, config: ToyModelConfig, schedule: RankSchedule):
        if schedule.num_layers != config.num_layers:
            raise ShapeMismatchError(
                f"schedule covers {schedule.num_layers} layers, config has "
                f"{config.num_layers}"
            )
        self.config = config
        self.schedule = schedule
        rng = np.random.default_rng(config.seed)
        d, m, v = config.hidden_dim, config.intermediate_dim, config.vocab_size
        dims = _component_dims(config)

        self.frozen: dict[str, np.ndarray] = {
            "embed": rng.normal(0.0, BASE_INIT_STD, (v, d)),
            "pos": rng.normal(0.0, BASE_INIT_STD, (config.seq_len, d)),
            "lm_head": rng.normal(0.0, BASE_INIT_STD, (d, v)),
            "ln_f.gamma": np.ones(d),
            "ln_f.beta": np.zeros(d),
        }
        self.lora: dict[tuple[int, str, str], np.ndarray] = {}
        for layer in range(1, config.num_layers + 1):
            for comp in COMPONENT_ORDER:
                n_in, n_out = dims[comp.value]
                self.frozen[f"layer{layer}.{comp.value}.weight"] = rng.normal(
                    0.0, BASE_INIT_STD, (n_in, n_out)
                )
                r = schedule.layers[layer - 1][comp]
                if r < 1:
                    raise ValueError(
                        f"layer {layer} component {comp.value} has rank {r}; "
                        "the toy model needs every rank >= 1"
                    )
                self.lora[(layer, comp.value, "A")] = rng.normal(0.0, LORA_INIT_STD, (n_in, r))
                self.lora[(layer, comp.value, "B")] = np.zeros((r, n_out))
            for ln in ("ln1", "ln2"):
                self.frozen[f"layer{layer}.{ln}.gamma"] = np.ones(d)
                self.frozen[f"layer{layer}.{ln}.beta"] = np.zeros(d)

        hd = d // config.num_heads
        mask = np.triu(np.full((config.seq_len, config.seq_len), -1e9), k=1)
        self._mask = mask
        self._hd = hd

    def trainable_items(self) -> list[tuple[tuple[int, str, str], np.ndarray]]:
        """LoRA arrays in a fixed order: layer, component, A before B."""
        keys = [
            (layer, comp.value, block)
            for layer in range(1, self.config.num_layers + 1)
            for comp in COMPONENT_ORDER
            for block in ("A", "B")
        ]
        return [(k, self.lora[k]) for k in keys]

    def trainable_param_count(self) -> int:
        return sum(a.size for _, a in self.trainable_items())

    def _proj(self, tape, hf, layer: int, comp: str, wrapped, use_lora: bool):
        w = tape.const(self.frozen[f"layer{layer}.{comp}.weight"])
        out = T.matmul(hf, w)
        if use_lora:
            a, b = wrapped[(layer, comp)]
            out = T.add(out, T.matmul(T.matmul(hf, a), b))
        return out

    def _ln(self, tape, x, name: str):
        return T.layer_norm(
            x, tape.const(self.frozen[f"{name}.gamma"]), tape.const(self.frozen[f"{name}.beta"])
        )

    def build_logits(
        self,
        tape: T.Tape,
        ids: np.ndarray,
        use_lora: bool = True,
        lora_tensors: dict[tuple[int, str], tuple[T.Tensor, T.Tensor]] | None = None,
    ):
        """Forward pass returning (logits tensor (B*T, vocab), wrapped LoRA).

        lora_tensors lets a caller supply pre-wrapped adapter tensors (the
        finite-difference harness does); otherwise the model's own arrays
        are wrapped as parameters.
        """
        cfg = self.config
        bsz, seq = ids.shape
        d, heads, hd = cfg.hidden_dim, cfg.num_heads, self._hd

        wrapped: dict[tuple[int, str], tuple[T.Tensor, T.Tensor]] = {}
        if use_lora:
            if lora_tensors is not None:
                wrapped = lora_tensors
            else:
                for layer in range(1, cfg.num_layers + 1):
                    for comp in COMPONENT_ORDER:
                        wrapped[(layer, comp.value)] = (
                            tape.param(self.lora[(layer, comp.value, "A")]),
                            tape.param(self.lora[(layer, comp.value, "B")]),
                        )

        x0 = self.frozen["embed"][ids] + self.frozen["pos"][:seq]
        x = tape.const(x0)
        mask = self._mask[:seq, :seq]
        for layer in range(1, cfg.num_layers + 1):
            h = self._ln(tape, x, f"layer{layer}.ln1")
            hf = T.reshape(h, (bsz * seq, d))
            q = self._proj(tape, hf, layer, "Q", wrapped, use_lora)
            k = self._proj(tape, hf, layer, "K", wrapped, use_lora)
            v = self._proj(tape, hf, layer, "V", wrapped, use_lora)

            def heads_of(t):
                return T.reshape(
                    T.transpose(T.reshape(t, (bsz, seq, heads, hd)), (0, 2, 1, 3)),
                    (bsz * heads, seq, hd),
                )

            qh, kh, vh = heads_of(q), heads_of(k), heads_of(v)
            scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(hd))
            probs = T.softmax_rows(scores, mask=mask)
            ctx = T.matmul(probs, vh)
            ctx = T.reshape(
                T.transpose(T.reshape(ctx, (bsz, heads, seq, hd)), (0, 2, 1, 3)),
                (bsz * seq, d),
            )
            attn_out = self._proj(tape, ctx, layer, "O", wrapped, use_lora)
            x = T.add(x, T.reshape(attn_out, (bsz, seq, d)))

            h2 = self._ln(tape, x, f"layer{layer}.ln2")
            hf2 = T.reshape(h2, (bsz * seq, d))
            up = self._proj(tape, hf2, layer, "Up", wrapped, use_lora)
            gate = self._proj(tape, hf2, layer, "Gate", wrapped, use_lora)
            act = T.mul(T.silu(gate), up)
            down = self._proj(tape, act, layer, "Down", wrapped, use_lora)
            x = T.add(x, T.reshape(down, (bsz, seq, d)))

        hf_final = T.reshape(self._ln(tape, x, "ln_f"), (bsz * seq, d))
        logits = T.matmul(hf_final, tape.const(self.frozen["lm_head"]))
        return logits, wrapped

    def build_loss(
        self,
        tape: T.Tape,
        ids: np.ndarray,
        targets: np.ndarray,
        use_lora: bool = True,
        lora_tensors: dict[tuple[int, str], tuple[T.Tensor, T.Tensor]] | None = None,
    ):
        """Forward pass returning (loss tensor, wrapped LoRA tensors)."""
        logits, wrapped = self.build_logits(
            tape, ids, use_lora=use_lora, lora_tensors=lora_tensors
        )
        loss = T.cross_entropy_loss(logits, targets.reshape(-1))
        return loss, wrapped

    def logits(self, ids: np.ndarray, use_lora: bool = True) -> np.ndarray:
        """Forward pass returning (batch, seq, vocab) logits as plain arrays."""
        bsz, seq = ids.shape
        logits, _ = self.build_logits(T.Tape(), ids, use_lora=use_lora)
        return logits.data.reshape(bsz, seq, self.config.vocab_size)

    def loss_and_grads(self, ids: np.ndarray, targets: np.ndarray):
        """Loss value plus gradients aligned with trainable_items() order."""
        tape = T.Tape()
        loss, wrapped = self.build_loss(tape, ids, targets)
        tape.backward(loss)
        grads = []
        for (layer, comp, block), arr in self.trainable_items():
            t = wrapped[(layer, comp)][0 if block == "A" else 1]
            grads.append(t.grad if t.grad is not None else np.zeros_like(arr))
        return float(loss.data), grads

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.frozen)
        for (layer, comp, block), arr in self.lora.items():
            out[f"lora.layer{layer}.{comp}.{block}"] = arr
        return out

    def save(self, path: str) -> None:
        T.save_named_arrays(path, self.named_arrays())

    def load(self, path: str) -> None:
        arrays = T.load_named_arrays(path)
        for name in self.frozen:
            self.frozen[name] = arrays[name]
        for key in self.lora:
            layer, comp, block = key
            self.lora[key] = arrays[f"lora.layer{layer}.{comp}.{block}"]


def synthetic_batch(rng: np.random.Generator, cfg: ToyModelConfig, motifs: np.ndarray):
    """Token sequences stitched from repeated motifs so next-token structure
    is learnable; returns (ids, targets) with targets shifted by one."""
    motif_len = motifs.shape[1]
    per_seq = math.ceil((cfg.seq_len + 1) / motif_len)
    picks = rng.integers(0, len(motifs), size=(cfg.batch_size, per_seq))
    seqs = motifs[picks].reshape(cfg.batch_size, -1)[:, : cfg.seq_len + 1]
    return seqs[:, :-1].copy(), seqs[:, 1:].copy()


def make_motifs(rng: np.random.Generator, vocab_size: int, count: int = 16, length: int = 4) -> np.ndarray:
    return rng.integers(0, vocab_size, size=(count, length))


@dataclass
class ToyTrainResult:
    losses: list[float]
    # (step, layer, component, grad_norm); two entries per component per step.
    grad_records: list[tuple[int, int, str, float]]
    model: ToyLoraModel


def train_toy_lora(
    config: ToyModelConfig, schedule: RankSchedule, model: ToyLoraModel | None = None
) -> ToyTrainResult:
    """Train the adapters and record per-block gradient norms every step.

    A pre-built model may be passed to continue from existing weights."""
    if model is None:
        model = ToyLoraModel(config, schedule)
    items = model.trainable_items()
    opt = AdamW(
        params=[arr for _, arr in items],
        peak_lr=config.peak_lr,
        total_steps=max(config.steps, 1),
        warmup_frac=config.warmup_frac,
        weight_decay=config.weight_decay,
    )
    data_rng = np.random.default_rng(config.seed + 1)
    motifs = make_motifs(np.random.default_rng(config.seed + 2), config.vocab_size)

    losses: list[float] = []
    records: list[tuple[int, int, str, float]] = []
    for step in range(config.steps):
        ids, targets = synthetic_batch(data_rng, config, motifs)
        try:
            loss, grads = model.loss_and_grads(ids, targets)
        except ArithmeticError as exc:
            raise TrainingDivergedError(str(exc), step=step) from exc
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss}", step=step)
        losses.append(loss)
        for ((layer, comp, _block), _arr), g in zip(items, grads):
            records.append((step, layer, comp, float(np.linalg.norm(g))))
        opt.step(grads)
    return ToyTrainResult(losses, records, model)
