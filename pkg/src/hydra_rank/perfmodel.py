"""Lightweight performance model: a one-layer transformer encoder that maps
a rank schedule to a predicted six-metric vector.

Features are per-layer rows of the seven component ranks normalized by the
baseline rank, concatenated with a sinusoidal position encoding. Targets are
z-scored per metric on the training split and de-normalized at prediction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .core import RankSchedule
from .errors import InsufficientDataError, ShapeMismatchError, TrainingDivergedError
from .optim import AdamW

METRIC_NAMES = ("MME", "MMB", "VQA-T", "POPE", "GQA", "SQA-I")
NUM_METRICS = len(METRIC_NAMES)
POS_DIMS = 8
FEATURE_DIM = 7 + POS_DIMS

MODEL_DIM = 32
NUM_HEADS = 4
FFN_DIM = 4 * MODEL_DIM


@dataclass(frozen=True)
class MetricVector:
    """Six benchmark-style scores, fixed order (see METRIC_NAMES)."""

    values: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        if len(self.values) != NUM_METRICS:
            raise ValueError(f"expected {NUM_METRICS} metrics, got {len(self.values)}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"metrics must be finite, got {self.values}")

    @classmethod
    def from_array(cls, arr) -> "MetricVector":
        return cls(tuple(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def __getitem__(self, name: str) -> float:
        return self.values[METRIC_NAMES.index(name)]


def position_encoding(num_layers: int) -> np.ndarray:
    pe = np.zeros((num_layers, POS_DIMS))
    pos = np.arange(num_layers)[:, None]
    for i in range(POS_DIMS // 2):
        freq = 1.0 / (10000.0 ** (2 * i / POS_DIMS))
        pe[:, 2 * i] = np.sin(pos[:, 0] * freq)
        pe[:, 2 * i + 1] = np.cos(pos[:, 0] * freq)
    return pe


def encode_features(schedule: RankSchedule, r_standard: int) -> np.ndarray:
    """Deterministic (num_layers, FEATURE_DIM) encoding of a schedule."""
    ranks = np.array([c.values for c in schedule.layers], dtype=np.float64)
    return np.concatenate([ranks / r_standard, position_encoding(schedule.num_layers)], axis=1)


@dataclass
class PerfModel:
    """Parameters of the regressor plus the target normalization stats."""

    r_standard: int
    num_layers: int
    params: dict[str, np.ndarray]
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def init(cls, r_standard: int, num_layers: int, seed: int) -> "PerfModel":
        rng = np.random.default_rng(seed)

        def w(shape, scale=None):
            scale = scale if scale is not None else 1.0 / math.sqrt(shape[0])
            return rng.normal(0.0, scale, shape)

        params = {
            "in.weight": w((FEATURE_DIM, MODEL_DIM)),
            "in.bias": np.zeros(MODEL_DIM),
            "attn.q": w((MODEL_DIM, MODEL_DIM)),
            "attn.k": w((MODEL_DIM, MODEL_DIM)),
            "attn.v": w((MODEL_DIM, MODEL_DIM)),
            "attn.o": w((MODEL_DIM, MODEL_DIM)),
            "ln1.gamma": np.ones(MODEL_DIM),
            "ln1.beta": np.zeros(MODEL_DIM),
            "ffn.w1": w((MODEL_DIM, FFN_DIM)),
            "ffn.b1": np.zeros(FFN_DIM),
            "ffn.w2": w((FFN_DIM, MODEL_DIM)),
            "ffn.b2": np.zeros(MODEL_DIM),
            "ln2.gamma": np.ones(MODEL_DIM),
            "ln2.beta": np.zeros(MODEL_DIM),
            # Zero head: the untrained model predicts the training mean in
            # z-space, so training can only improve on the mean baseline.
            "out.weight": np.zeros((MODEL_DIM, NUM_METRICS)),
            "out.bias": np.zeros(NUM_METRICS),
        }
        return cls(
            r_standard=r_standard,
            num_layers=num_layers,
            params=params,
            target_mean=np.zeros(NUM_METRICS),
            target_std=np.ones(NUM_METRICS),
        )

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def save(self, path: str) -> None:
        arrays = dict(self.params)
        arrays["norm.target_mean"] = self.target_mean
        arrays["norm.target_std"] = self.target_std
        arrays["meta"] = np.array([self.r_standard, self.num_layers], dtype=np.float64)
        T.save_named_arrays(path, arrays)

    @classmethod
    def load(cls, path: str) -> "PerfModel":
        arrays = T.load_named_arrays(path)
        meta = arrays.pop("meta")
        mean = arrays.pop("norm.target_mean")
        std = arrays.pop("norm.target_std")
        return cls(
            r_standard=int(meta[0]),
            num_layers=int(meta[1]),
            params=arrays,
            target_mean=mean,
            target_std=std,
        )


def _forward(tape: T.Tape, wrapped: dict[str, T.Tensor], feats: np.ndarray) -> T.Tensor:
    """Batched forward: feats (n, T, F) -> predictions (n, NUM_METRICS)."""
    n, seq, fdim = feats.shape
    x = tape.const(feats.reshape(n * seq, fdim))
    h = T.add(T.matmul(x, wrapped["in.weight"]), wrapped["in.bias"])

    hd = MODEL_DIM // NUM_HEADS

    def heads_of(t):
        return T.reshape(
            T.transpose(T.reshape(t, (n, seq, NUM_HEADS, hd)), (0, 2, 1, 3)),
            (n * NUM_HEADS, seq, hd),
        )

    q = heads_of(T.matmul(h, wrapped["attn.q"]))
    k = heads_of(T.matmul(h, wrapped["attn.k"]))
    v = heads_of(T.matmul(h, wrapped["attn.v"]))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(hd))
    ctx = T.matmul(T.softmax_rows(scores), v)
    ctx = T.reshape(
        T.transpose(T.reshape(ctx, (n, NUM_HEADS, seq, hd)), (0, 2, 1, 3)),
        (n * seq, MODEL_DIM),
    )
    attn = T.matmul(ctx, wrapped["attn.o"])
    h = T.layer_norm(T.add(h, attn), wrapped["ln1.gamma"], wrapped["ln1.beta"])

    ffn = T.add(T.matmul(h, wrapped["ffn.w1"]), wrapped["ffn.b1"])
    ffn = T.add(T.matmul(T.gelu(ffn), wrapped["ffn.w2"]), wrapped["ffn.b2"])
    h = T.layer_norm(T.add(h, ffn), wrapped["ln2.gamma"], wrapped["ln2.beta"])

    pooled = T.reduce_mean(T.reshape(h, (n, seq, MODEL_DIM)), axis=1)
    return T.add(T.matmul(pooled, wrapped["out.weight"]), wrapped["out.bias"])


def _predict_normalized(model: PerfModel, feats: np.ndarray) -> np.ndarray:
    tape = T.Tape()
    wrapped = {name: tape.const(arr) for name, arr in model.params.items()}
    return _forward(tape, wrapped, feats).data


@dataclass
class TrainReport:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)
    final_train_mse: float = math.nan
    final_val_mse: float = math.nan
    baseline_val_mse: float = math.nan
    train_indices: tuple[int, ...] = ()
    val_indices: tuple[int, ...] = ()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, train_loss, val_loss in self.epochs:
                writer.writerow([epoch, f"{train_loss:.10g}", f"{val_loss:.10g}"])


def split_indices(n: int, seed: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive train/val split from a seeded permutation."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(
    pairs: list[tuple[np.ndarray, MetricVector]],
    seed: int = 42,
    max_epochs: int = 500,
    patience: int = 20,
    learning_rate: float = 3e-3,
    r_standard: int = 128,
) -> tuple[PerfModel, TrainReport]:
    """Fit the regressor with Adam on MSE over z-scored targets.

    Splits 8:2 by seeded permutation, early-stops when validation loss has
    not improved for `patience` epochs, and restores the best snapshot.
    """
    if len(pairs) < 10:
        raise InsufficientDataError(f"need at least 10 pairs, got {len(pairs)}")
    feats = np.stack([np.asarray(f, dtype=np.float64) for f, _ in pairs])
    targets = np.stack([m.as_array() for _, m in pairs])
    num_layers = feats.shape[1]

    train_idx, val_idx = split_indices(len(pairs), seed)
    mean = targets[train_idx].mean(axis=0)
    std = targets[train_idx].std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    z = (targets - mean) / std

    model = PerfModel.init(r_standard, num_layers, seed)
    model.target_mean = mean
    model.target_std = std
    names = model.param_names()
    opt = AdamW(
        params=[model.params[n] for n in names],
        peak_lr=learning_rate,
        total_steps=max_epochs,
        warmup_frac=0.03,
    )

    def val_loss() -> float:
        pred = _predict_normalized(model, feats[val_idx])
        return float(((pred - z[val_idx]) ** 2).mean())

    report = TrainReport(train_indices=tuple(train_idx), val_indices=tuple(val_idx))
    report.baseline_val_mse = float(
        ((z[train_idx].mean(axis=0) - z[val_idx]) ** 2).mean()
    )

    best = math.inf
    best_params = {n: model.params[n].copy() for n in names}
    since_best = 0
    for epoch in range(1, max_epochs + 1):
        tape = T.Tape()
        wrapped = {n: tape.param(model.params[n]) for n in names}
        pred = _forward(tape, wrapped, feats[train_idx])
        loss = T.mean_squared_error(pred, z[train_idx])
        if not math.isfinite(float(loss.data)):
            raise TrainingDivergedError("training loss is not finite", step=epoch)
        tape.backward(loss)
        grads = [
            wrapped[n].grad if wrapped[n].grad is not None else np.zeros_like(model.params[n])
            for n in names
        ]
        opt.step(grads)

        vl = val_loss()
        report.epochs.append((epoch, float(loss.data), vl))
        if vl < best - 1e-12:
            best = vl
            best_params = {n: model.params[n].copy() for n in names}
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break

    model.params = best_params
    report.final_val_mse = best
    pred = _predict_normalized(model, feats[train_idx])
    report.final_train_mse = float(((pred - z[train_idx]) ** 2).mean())
    return model, report


def predict(model: PerfModel, schedule: RankSchedule) -> MetricVector:
    """Deterministic forward pass on one schedule, de-normalized."""
    if schedule.num_layers != model.num_layers:
        raise ShapeMismatchError(
            f"schedule has {schedule.num_layers} layers, model expects {model.num_layers}"
        )
    feats = encode_features(schedule, model.r_standard)[None, :, :]
    z = _predict_normalized(model, feats)[0]
    return MetricVector.from_array(z * model.target_std + model.target_mean)


def dataset_to_json(pairs: list[tuple[RankSchedule, MetricVector]], indent: int | None = 2) -> str:
    import json

    return json.dumps(
        [
            {"schedule": s.to_dict(), "metrics": list(m.values)}
            for s, m in pairs
        ],
        indent=indent,
    )


def dataset_from_json(text: str) -> list[tuple[RankSchedule, MetricVector]]:
    import json

    return [
        (RankSchedule.from_dict(entry["schedule"]), MetricVector.from_array(entry["metrics"]))
        for entry in json.loads(text)
    ]
