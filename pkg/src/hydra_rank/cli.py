"""Command-line pipeline driver: profile, partition, allocate, train-perf,
search, export, validate.

Options come from flags or a TOML config file (one table per subcommand);
flags win. Failures print a machine-readable JSON object to stderr and exit
2 for user/config/validation errors or 3 for internal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import perfmodel, profiler, search as search_mod
from .allocator import (
    AllocatorParams,
    FineSetting,
    allocate_coarse,
    apply_fine_setting,
    assemble_schedule,
)
from .core import (
    COMPONENT_ORDER,
    Budget,
    ModelShape,
    RankSchedule,
    param_count,
    validate,
)
from .errors import ConfigError, HydraError
from .partitioner import StagePartition, partition_stages
from .presets import coarse_preset, shape_preset, toy_config_for
from .toymodel import ToyModelConfig

log = logging.getLogger("hydra_rank")

EXPORT_COMPONENT_NAMES = {
    "Q": "q_proj",
    "K": "k_proj",
    "V": "v_proj",
    "O": "o_proj",
    "Up": "up_proj",
    "Down": "down_proj",
    "Gate": "gate_proj",
}


def schedule_to_rank_pattern(schedule: RankSchedule) -> dict:
    """Rank-pattern export: a default rank plus per-module deviations keyed
    by 'layers.<i>.<component>' with 0-based layers and adapter-library
    style component names."""
    counts = Counter(r for layer in schedule.layers for r in layer.values)
    top = max(counts.values())
    default_rank = min(r for r, c in counts.items() if c == top)
    pattern = {}
    for i, layer in enumerate(schedule.layers):
        for kind, r in zip(COMPONENT_ORDER, layer.values):
            if r != default_rank:
                pattern[f"layers.{i}.{EXPORT_COMPONENT_NAMES[kind.value]}"] = r
    return {"default_rank": default_rank, "pattern": pattern}


def cache_dir() -> str:
    return os.environ.get(
        "HYDRA_RANK_CACHE_DIR", os.path.join(os.path.expanduser("~"), ".cache", "hydra-rank")
    )


def _read_text(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"unreadable file {path!r}: {exc}") from exc


def _write_output(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))
    else:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


class _Options:
    """Flag values backed by a TOML table; explicit flags win."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = vars(args)
        self.table = {}
        config_path = self.args.get("config")
        if config_path:
            try:
                with open(config_path, "rb") as fh:
                    doc = tomllib.load(fh)
            except OSError as exc:
                raise ConfigError(f"unreadable config {config_path!r}: {exc}") from exc
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {config_path!r}: {exc}") from exc
            self.table = doc.get(section, {})

    def get(self, key: str, default=None):
        flag = self.args.get(key.replace("-", "_"))
        if flag is not None:
            return flag
        if key in self.table:
            return self.table[key]
        return default

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise ConfigError(f"missing required option --{key}")
        return value


def _resolve_shape(opt: _Options) -> tuple[ModelShape, int]:
    preset_name = opt.get("preset")
    if preset_name:
        preset = shape_preset(preset_name)
        r_standard = opt.get("r-standard", preset.r_standard)
        return preset.shape, int(r_standard)
    layers = opt.get("layers")
    hidden = opt.get("hidden-dim")
    inter = opt.get("intermediate-dim")
    r_standard = opt.get("r-standard")
    if None in (layers, hidden, inter, r_standard):
        raise ConfigError(
            "either --preset or all of --layers/--hidden-dim/--intermediate-dim/--r-standard"
        )
    return ModelShape(int(layers), int(hidden), int(inter)), int(r_standard)


def cmd_profile(args: argparse.Namespace) -> int:
    opt = _Options(args, "profile")
    from_log = opt.get("from-log")
    if from_log:
        records = profiler.read_grad_log(from_log)
        profiles = profiler.ingest_grad_log(records)
    else:
        preset = shape_preset(opt.get("preset", "toy-8"))
        config = toy_config_for(
            preset, steps=int(opt.get("steps", 200)), seed=int(opt.get("seed", 42))
        )
        profiles, records = profiler.profile_toy_model(config, rank=int(opt.get("rank", 4)))
        grad_log_out = opt.get("grad-log-out")
        if grad_log_out:
            profiler.write_grad_log(grad_log_out, records)
    _write_output(profiler.profiles_to_json(profiles), opt.get("output"))
    return 0


def cmd_partition(args: argparse.Namespace) -> int:
    opt = _Options(args, "partition")
    profiles = profiler.profiles_from_json(_read_text(opt.require("profiles")))
    partition = partition_stages(
        profiles, int(opt.require("stages")), seed=int(opt.get("seed", 42))
    )
    _write_output(partition.to_json(), opt.get("output"))
    return 0


def _allocate_schedule(opt: _Options) -> tuple[RankSchedule, object | None]:
    coarse_name = opt.get("coarse-preset")
    fine_name = opt.get("fine")
    delta_d = int(opt.get("delta-d", 2))
    if coarse_name:
        partition, coarse = coarse_preset(coarse_name)
    else:
        shape, r_standard = _resolve_shape(opt)
        partition = StagePartition.from_json(_read_text(opt.require("stages-file")))
        params = AllocatorParams(r_standard=r_standard, delta_d=delta_d)
        coarse = allocate_coarse(partition, params, shape.num_layers)
    schedule = assemble_schedule(coarse, partition)
    if fine_name and fine_name.lower() != "none":
        schedule = apply_fine_setting(schedule, FineSetting.named(fine_name), delta_d)
    return schedule, coarse


def cmd_allocate(args: argparse.Namespace) -> int:
    opt = _Options(args, "allocate")
    schedule, coarse = _allocate_schedule(opt)
    report_path = opt.get("report")
    if report_path and coarse is not None:
        with open(report_path, "w") as fh:
            fh.write(coarse.report_json() + "\n")
    _write_output(schedule.to_json(), opt.get("output"))
    return 0


def cmd_train_perf(args: argparse.Namespace) -> int:
    opt = _Options(args, "train-perf")
    pairs = perfmodel.dataset_from_json(_read_text(opt.require("dataset")))
    r_standard = int(opt.get("r-standard", 128))
    encoded = [(perfmodel.encode_features(s, r_standard), m) for s, m in pairs]
    model, report = perfmodel.train(
        encoded,
        seed=int(opt.get("seed", 42)),
        max_epochs=int(opt.get("epochs", 500)),
        patience=int(opt.get("patience", 20)),
        r_standard=r_standard,
    )
    model_out = opt.get("model-out")
    if model_out:
        model.save(model_out)
    curve_out = opt.get("curve-out")
    if curve_out:
        report.write_csv(curve_out)
    summary = {
        "pairs": len(pairs),
        "epochs_run": len(report.epochs),
        "final_train_mse": report.final_train_mse,
        "final_val_mse": report.final_val_mse,
        "baseline_val_mse": report.baseline_val_mse,
    }
    _write_output(json.dumps(summary, indent=2), opt.get("output"))
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    opt = _Options(args, "search")
    shape, r_standard = _resolve_shape(opt)
    delta_d = int(opt.get("delta-d", 2))
    params = AllocatorParams(r_standard=r_standard, delta_d=delta_d)
    seed = int(opt.get("seed", 42))

    oracle_name = opt.get("oracle", "synthetic")
    candidate_pool = None
    if oracle_name == "synthetic":
        oracle = search_mod.SyntheticOracle(r_standard=r_standard, seed=seed)
    elif oracle_name == "toy":
        preset_name = opt.get("preset", "toy-8")
        config = toy_config_for(
            shape_preset(preset_name), steps=int(opt.get("oracle-steps", 30)), seed=seed
        )
        oracle = search_mod.ToyTrainerOracle(config)
    elif oracle_name == "replay":
        oracle = search_mod.ReplayOracle.from_dataset_json(
            _read_text(opt.require("replay-dataset"))
        )
        candidate_pool = oracle.schedules
    else:
        raise ConfigError(f"unknown oracle {oracle_name!r}; use synthetic, toy, or replay")

    partition = StagePartition.from_json(_read_text(opt.require("stages-file")))
    log_path = opt.get("log")
    if log_path == "auto":
        os.makedirs(cache_dir(), exist_ok=True)
        log_path = os.path.join(cache_dir(), "search.jsonl")
    best, state = search_mod.run_search(
        oracle,
        partition,
        params,
        shape,
        max_iters=int(opt.get("iters", 3)),
        batch=int(opt.get("batch", 8)),
        seed=seed,
        candidate_pool=candidate_pool,
        log_path=log_path,
    )
    log.info(
        "search finished: %d evaluations, best score %.4f",
        state.oracle_calls,
        state.best_score,
    )
    _write_output(best.to_json(), opt.get("output"))
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    opt = _Options(args, "export")
    fmt = opt.get("format", "rank-pattern")
    if fmt != "rank-pattern":
        raise ConfigError(f"unknown export format {fmt!r}")
    schedule = RankSchedule.from_json(_read_text(opt.require("schedule")))
    _write_output(json.dumps(schedule_to_rank_pattern(schedule), indent=2), opt.get("output"))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    opt = _Options(args, "validate")
    shape, r_standard = _resolve_shape(opt)
    schedule = RankSchedule.from_json(_read_text(opt.require("schedule")))
    budget = Budget.for_shape(shape, r_standard)
    report = validate(schedule, shape, budget)
    payload = {
        "admissible": report.admissible,
        "violations": list(report.violations),
        "param_cap": budget.param_cap,
    }
    if report.admissible:
        payload["param_count"] = param_count(schedule, shape)
    _write_output(json.dumps(payload, indent=2), opt.get("output"))
    if not report.admissible:
        sys.stderr.write(
            json.dumps({"error": "validation-failure", "violations": list(report.violations)})
            + "\n"
        )
        return 2
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML config file; flags override its values")
    sub.add_argument("--seed", type=int, help="random seed (default 42)")
    sub.add_argument("--output", help="output path (default: stdout)")
    sub.add_argument("--log-level", default=None, help="logging level (default warning)")


def _add_shape_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--preset", help="model shape preset name")
    sub.add_argument("--layers", type=int)
    sub.add_argument("--hidden-dim", type=int)
    sub.add_argument("--intermediate-dim", type=int)
    sub.add_argument("--r-standard", type=int, help="baseline uniform rank")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydra-rank",
        description="Rank scheduling for low-rank adapter fine-tuning",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("profile", help="produce per-layer gradient-norm profiles")
    p.add_argument("--from-log", help="ingest an existing JSONL gradient log")
    p.add_argument("--steps", type=int, help="toy training steps (default 200)")
    p.add_argument("--rank", type=int, help="uniform adapter rank for profiling (default 4)")
    p.add_argument("--grad-log-out", help="also write the raw JSONL gradient log here")
    p.add_argument("--preset", help="toy shape preset (default toy-8)")
    _add_common(p)
    p.set_defaults(func=cmd_profile)

    p = subs.add_parser("partition", help="cluster layers into stages")
    p.add_argument("--profiles", help="profiles JSON from the profile step")
    p.add_argument("--stages", type=int, help="number of stages")
    _add_common(p)
    p.set_defaults(func=cmd_partition)

    p = subs.add_parser("allocate", help="compute a rank schedule for a partition")
    _add_shape_flags(p)
    p.add_argument("--stages-file", help="partition JSON")
    p.add_argument("--delta-d", type=int, help="stage rank step (default 2)")
    p.add_argument("--fine", help="fine setting name (setting1..setting5) or 'none'")
    p.add_argument("--coarse-preset", help="named coarse allocation (e.g. paper-config4)")
    p.add_argument("--report", help="write the iteration trace JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_allocate)

    p = subs.add_parser("train-perf", help="train the performance model on a dataset")
    p.add_argument("--dataset", help="dataset JSON of schedule/metrics pairs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--r-standard", type=int)
    p.add_argument("--model-out", help="write the model checkpoint here")
    p.add_argument("--curve-out", help="write the epoch,train_loss,val_loss CSV here")
    _add_common(p)
    p.set_defaults(func=cmd_train_perf)

    p = subs.add_parser("search", help="search the schedule space with an oracle")
    _add_shape_flags(p)
    p.add_argument("--stages-file", help="partition JSON")
    p.add_argument("--delta-d", type=int)
    p.add_argument("--oracle", help="synthetic | toy | replay (default synthetic)")
    p.add_argument("--replay-dataset", help="dataset JSON for the replay oracle")
    p.add_argument("--oracle-steps", type=int, help="toy oracle training steps")
    p.add_argument("--iters", type=int, help="search iterations (default 3)")
    p.add_argument("--batch", type=int, help="evaluations per iteration (default 8)")
    p.add_argument("--log", help="search log JSONL path ('auto' for cache dir)")
    _add_common(p)
    p.set_defaults(func=cmd_search)

    p = subs.add_parser("export", help="export a schedule to a downstream format")
    p.add_argument("--schedule", help="schedule JSON")
    p.add_argument("--format", help="export format (rank-pattern)")
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = subs.add_parser("validate", help="check a schedule against a shape budget")
    _add_shape_flags(p)
    p.add_argument("--schedule", help="schedule JSON")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr)
    try:
        return args.func(args)
    except HydraError as exc:
        sys.stderr.write(json.dumps(exc.payload()) + "\n")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        sys.stderr.write(json.dumps({"error": "internal", "message": str(exc)}) + "\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
