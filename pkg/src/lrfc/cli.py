"""Command-line front end: bake, run-trajectory, apply, compare, report.

Each command validates its configuration up front, takes an exclusive
lock on the output directory, and writes deterministic reports (JSON,
CSV, text tables) plus rendered figures.  Wall-clock timing goes to a
separate run.log so report files stay byte-identical across reruns.

Exit codes: 0 success, 1 numeric or search failure, 2 validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint, figures, reports
from .compression import SvdCache, flops_breakdown
from .exceptions import NumericError, SearchFailure, ValidationError
from .model import TrainConfig, evaluate, generate_dataset, init_reference_model, train
from .search import (
    SearchSettings,
    construct_search_space,
    reward_histogram,
    scheme_evaluator,
    validate_energy_range,
)
from .trajectory import (
    RetrainSettings,
    Trajectory,
    default_budget,
    run_apply_ranks,
    run_trajectory,
)

DEFAULT_APPLY_BUDGET = 100


@dataclass
class RunConfig:
    """Resolved settings shared by all commands; flags override file values."""

    seed: int = 42
    trajectory: tuple[float, ...] = (1.5, 2.0, 2.5, 3.0)
    budget: int | None = None
    energy_range: tuple[float, float] = (0.3, 0.8)
    episodes: int = 200
    batch: int = 8
    policy_lr: float = 0.15
    baseline_decay: float = 0.9
    quality_weight: float = 10.0
    violation_penalty_scale: float = 10.0
    learning_rate: float = 0.05
    train_batch: int = 64
    reset_period: int | None = None
    bake_epochs: int = 100
    samples: int = 500
    compare_seeds: int = 1

    def validate(self) -> None:
        Trajectory(self.trajectory)
        validate_energy_range(self.energy_range)
        self.search_settings()
        self.retrain_settings()
        # budget-vs-phase compatibility is command specific: apply allows 0,
        # trajectory runs enforce >= K+1 phases in allocate_budget
        if self.budget is not None and self.budget < 0:
            raise ValidationError("budget must be non-negative")
        if self.bake_epochs < 0 or self.samples < 0 or self.compare_seeds < 1:
            raise ValidationError("bake epochs, samples, and compare seeds must be sensible")
        if self.reset_period is not None and self.reset_period < 1:
            raise ValidationError("reset period must be positive")

    def search_settings(self) -> SearchSettings:
        return SearchSettings(
            episodes=self.episodes,
            batch_size=self.batch,
            policy_lr=self.policy_lr,
            baseline_decay=self.baseline_decay,
            quality_weight=self.quality_weight,
            violation_penalty_scale=self.violation_penalty_scale,
        )

    def retrain_settings(self) -> RetrainSettings:
        return RetrainSettings(
            learning_rate=self.learning_rate, batch_size=self.train_batch
        )

    def echo(self) -> dict:
        return {
            "seed": self.seed,
            "trajectory": list(self.trajectory),
            "budget": self.budget,
            "energy_range": list(self.energy_range),
            "episodes": self.episodes,
            "batch": self.batch,
            "policy_lr": self.policy_lr,
            "baseline_decay": self.baseline_decay,
            "quality_weight": self.quality_weight,
            "violation_penalty_scale": self.violation_penalty_scale,
            "learning_rate": self.learning_rate,
            "train_batch": self.train_batch,
            "reset_period": self.reset_period,
        }


def _parse_float_pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi - got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _parse_targets(text: str) -> tuple[float, ...]:
    return Trajectory.from_string(text).targets


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then config-file values, then explicit flag overrides."""
    valid = {f.name for f in fields(RunConfig)}
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"unreadable config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = sorted(set(data) - valid)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "trajectory" in merged and isinstance(merged["trajectory"], (list, str)):
        value = merged["trajectory"]
        merged["trajectory"] = (
            _parse_targets(value) if isinstance(value, str) else tuple(float(t) for t in value)
        )
    if "energy_range" in merged and isinstance(merged["energy_range"], list):
        merged["energy_range"] = tuple(float(e) for e in merged["energy_range"])
    try:
        config = RunConfig(**{k: v for k, v in merged.items() if k in valid})
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc
    config.validate()
    return config


@contextmanager
def output_directory(path: str):
    """Create the directory and hold an exclusive lock file inside it."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"output directory {out} is locked by another run (remove {lock} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        try:
            lock.unlink()
        except FileNotFoundError:
            pass


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _log_elapsed(out: Path, command: str, started: float) -> None:
    with (out / "run.log").open("a", encoding="utf-8") as handle:
        handle.write(f"{command} finished in {time.monotonic() - started:.2f}s\n")


def _load_run_inputs(checkpoint_path: str):
    model, metadata = checkpoint.load_model(checkpoint_path)
    train_data, test_data = generate_dataset(int(metadata["dataset_seed"]))
    return model, metadata, train_data, test_data


def cmd_bake(config: RunConfig, out_dir: str) -> int:
    started = time.monotonic()
    with output_directory(out_dir) as out:
        train_data, test_data = generate_dataset(config.seed)
        model = init_reference_model(config.seed)
        outcome = train(
            model,
            train_data,
            TrainConfig(
                epochs=config.bake_epochs,
                batch_size=config.train_batch,
                learning_rate=config.learning_rate,
                seed=config.seed,
            ),
        )
        baseline_error = evaluate(outcome.model, test_data)
        checkpoint.save_model(out / "baseline.ckpt", outcome.model, config.seed)
        metrics = {
            "seed": config.seed,
            "dataset_seed": config.seed,
            "epochs": config.bake_epochs,
            "learning_rate": config.learning_rate,
            "batch_size": config.train_batch,
            "baseline_error": baseline_error,
            "final_train_error": outcome.errors[-1] if outcome.errors else None,
            "final_train_loss": outcome.losses[-1] if outcome.losses else None,
        }
        _write(out / "bake_metrics.json", reports.dumps(metrics))
        curve = ["epoch,loss,error,learning_rate"]
        for epoch, (loss, error, lr) in enumerate(
            zip(outcome.losses, outcome.errors, outcome.learning_rates), start=1
        ):
            curve.append(
                f"{epoch},{reports.format_float(loss)},"
                f"{reports.format_float(error)},{reports.format_float(lr)}"
            )
        _write(out / "bake_curve.csv", "\n".join(curve) + "\n")
        if outcome.losses:
            figures.save_training_curve(
                outcome.losses, outcome.errors, out / "bake_curve.png"
            )
        _log_elapsed(out, "bake", started)
    print(f"baked baseline: test error {baseline_error:.4f} -> {out / 'baseline.ckpt'}")
    return 0


def _write_run_outputs(out: Path, config: RunConfig, result, layers) -> None:
    record = result.record
    _write(out / "report.json", reports.dumps(reports.record_to_dict(record, config.echo())))
    lines = [
        f"baseline error: {record.baseline_error:.4f}",
    ]
    for step in record.steps:
        target = "" if step.target is None else f" target {step.target:g}x"
        lines.append(
            f"step {step.step}{target}: scheme [{reports.scheme_to_text(step.scheme)}] "
            f"error {step.pre_retrain_error:.4f} -> {step.post_retrain_error:.4f} "
            f"({step.epochs} epochs)"
        )
    if record.final_error is not None:
        lines.append(
            f"final factorized: error {record.final_pre_error:.4f} -> "
            f"{record.final_error:.4f} at {record.breakdown.overall_speedup:.1f}x"
        )
        lines.append("")
        lines.append(reports.render_breakdown_text(record.breakdown))
    _write(out / "report.txt", "\n".join(lines) + "\n")
    _write(out / "steps.csv", reports.steps_csv(record))
    trace = reports.trace_csv(record)
    if trace.count("\n") > 1:
        _write(out / "trace.csv", trace)
        figures.save_search_trace(record, out / "search_trace.png")
    figures.save_error_curve(record, out / "error_curve.png")
    if record.final_scheme is not None:
        reports.write_scheme_file(out / "scheme.json", layers, record.final_scheme)


def cmd_run_trajectory(config: RunConfig, checkpoint_path: str, out_dir: str) -> int:
    started = time.monotonic()
    with output_directory(out_dir) as out:
        model, metadata, train_data, test_data = _load_run_inputs(checkpoint_path)
        trajectory = Trajectory(config.trajectory)
        budget = config.budget if config.budget is not None else default_budget(trajectory)
        try:
            result = run_trajectory(
                model,
                train_data,
                test_data,
                trajectory,
                budget,
                initial_energy_range=config.energy_range,
                search=config.search_settings(),
                retrain=config.retrain_settings(),
                seed=config.seed,
            )
        except SearchFailure as exc:
            if exc.partial is not None:
                _write(
                    out / "report.json",
                    reports.dumps(reports.record_to_dict(exc.partial, config.echo())),
                )
                _write(out / "report.txt", f"search failed: {exc}\n")
            raise
        _write_run_outputs(out, config, result, model.layer_specs)
        checkpoint.save_model(
            out / "final.ckpt", result.model, int(metadata["dataset_seed"])
        )
        _log_elapsed(out, "run-trajectory", started)
    record = result.record
    print(
        f"trajectory {','.join(f'{t:g}' for t in trajectory.targets)}: "
        f"error {record.baseline_error:.4f} -> {record.final_error:.4f} "
        f"at {record.breakdown.overall_speedup:.1f}x"
    )
    return 0


def cmd_apply(
    config: RunConfig, checkpoint_path: str, scheme_path: str, mode: str, out_dir: str
) -> int:
    started = time.monotonic()
    with output_directory(out_dir) as out:
        model, metadata, train_data, test_data = _load_run_inputs(checkpoint_path)
        scheme = reports.parse_scheme_file(scheme_path, model.layer_specs)
        budget = config.budget if config.budget is not None else DEFAULT_APPLY_BUDGET
        result = run_apply_ranks(
            model,
            train_data,
            test_data,
            scheme,
            mode,
            budget,
            seed=config.seed,
            retrain=config.retrain_settings(),
            reset_period=config.reset_period,
        )
        _write_run_outputs(out, config, result, model.layer_specs)
        checkpoint.save_model(
            out / "final.ckpt", result.model, int(metadata["dataset_seed"])
        )
        _log_elapsed(out, "apply", started)
    record = result.record
    print(
        f"applied [{reports.scheme_to_text(scheme)}] ({mode}): "
        f"error {record.baseline_error:.4f} -> {record.final_error:.4f}"
    )
    return 0


def cmd_compare(config: RunConfig, checkpoint_path: str, out_dir: str) -> int:
    started = time.monotonic()
    with output_directory(out_dir) as out:
        model, _, train_data, test_data = _load_run_inputs(checkpoint_path)
        layers = model.layer_specs
        trajectory = Trajectory(config.trajectory)
        final_target = trajectory.final_target
        budget = config.budget if config.budget is not None else default_budget(trajectory)
        cache = SvdCache()
        seeds = [int(s) for s in np.random.SeedSequence(config.seed).generate_state(
            config.compare_seeds
        )]

        labels = {
            "iterative": "Iterative",
            "iter_compressed": "Base-Iterative Ranks (Compressed)",
            "iter_cyclic": "Base-Iterative Ranks (Cyclic)",
            "oneshot_compressed": f"Base-{final_target:g}x (Compressed)",
            "oneshot_cyclic": f"Base-{final_target:g}x (Cyclic)",
        }
        errors = {key: [] for key in labels}
        oneshot_errors = []
        iter_schemes = []
        oneshot_schemes = []
        for seed in seeds:
            iter_run = run_trajectory(
                model, train_data, test_data, trajectory, budget,
                initial_energy_range=config.energy_range,
                search=config.search_settings(), retrain=config.retrain_settings(),
                seed=seed, svd_cache=cache,
            )
            oneshot_run = run_trajectory(
                model, train_data, test_data, Trajectory((final_target,)), budget,
                initial_energy_range=config.energy_range,
                search=config.search_settings(), retrain=config.retrain_settings(),
                seed=seed, svd_cache=cache,
            )
            errors["iterative"].append(iter_run.record.final_error)
            oneshot_errors.append(oneshot_run.record.final_error)
            iter_schemes.append(iter_run.record.final_scheme)
            oneshot_schemes.append(oneshot_run.record.final_scheme)
            for key, scheme in (("iter", iter_run.record.final_scheme),
                                ("oneshot", oneshot_run.record.final_scheme)):
                for mode in ("compressed", "cyclic"):
                    run = run_apply_ranks(
                        model, train_data, test_data, scheme, mode, budget,
                        seed=seed, retrain=config.retrain_settings(),
                        reset_period=config.reset_period, svd_cache=cache,
                    )
                    errors[f"{key}_{mode}"].append(run.record.final_error)

        baseline_error = evaluate(model, test_data)
        means = {key: sum(vals) / len(vals) for key, vals in errors.items()}
        rows = [("Baseline", baseline_error)] + [
            (labels[key], means[key]) for key in labels
        ]
        matched = sum(
            1 for it, one in zip(errors["iterative"], oneshot_errors) if it <= one
        )

        low_target = trajectory.targets[0] if len(trajectory.targets) > 1 else 1.5
        eval_fn = scheme_evaluator(model, test_data, cache)
        histograms = {}
        for target in (low_target, final_target):
            space = construct_search_space(
                layers, model.weight_matrices(), target, config.energy_range, cache
            )
            histograms[f"{target:g}x"] = reward_histogram(
                space, eval_fn, config.samples, seed=config.seed
            )

        document = {
            "config": config.echo(),
            "budget": budget,
            "seeds": seeds,
            "baseline_error": baseline_error,
            "strategies": {
                labels[key]: {"errors": errors[key], "mean": means[key]} for key in labels
            },
            "oneshot_final_errors": oneshot_errors,
            "fraction_iterative_le_oneshot": matched / len(seeds),
            "schemes": {
                "iterative": [reports.scheme_to_json(s) for s in iter_schemes],
                "oneshot": [reports.scheme_to_json(s) for s in oneshot_schemes],
            },
            "histogram_samples_per_target": config.samples,
        }
        _write(out / "comparison.json", reports.dumps(document))
        _write(out / "comparison.txt", reports.render_comparison_text(rows) + "\n")
        _write(out / "histogram.csv", reports.histogram_csv(histograms))
        if config.samples:
            figures.save_error_histogram(histograms, out / "histogram.png")
        _log_elapsed(out, "compare", started)
    print(reports.render_comparison_text(rows))
    return 0


def cmd_report(checkpoint_path: str, fmt: str) -> int:
    model, _ = checkpoint.load_model(checkpoint_path)
    breakdown = flops_breakdown(model.layer_specs, model.scheme())
    if fmt == "structured":
        sys.stdout.write(reports.dumps(reports.breakdown_to_dict(breakdown)))
    else:
        print(reports.render_breakdown_text(breakdown))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrfc",
        description="Iterative low-rank factorization compression with rank search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", required=out_required, help="output directory")

    p_bake = sub.add_parser("bake", help="train and checkpoint the reference baseline")
    add_common(p_bake)
    p_bake.add_argument("--epochs", type=int, dest="bake_epochs", help="training epochs")

    p_run = sub.add_parser("run-trajectory", help="iterative compress-retrain run")
    p_run.add_argument("checkpoint", help="baseline checkpoint to start from")
    add_common(p_run)
    p_run.add_argument("--trajectory", type=_parse_targets, help="targets, e.g. 1.5,2,3")
    p_run.add_argument("--budget", type=int, help="total retraining epochs")
    p_run.add_argument("--energy-range", type=_parse_float_pair, dest="energy_range",
                       help="initial energy range lo,hi")
    p_run.add_argument("--episodes", type=int, help="search episodes per step")
    p_run.add_argument("--batch", type=int, help="schemes sampled per episode")

    p_apply = sub.add_parser("apply", help="apply a scheme file and retrain")
    p_apply.add_argument("checkpoint")
    add_common(p_apply)
    p_apply.add_argument("--scheme", required=True, help="scheme JSON file")
    p_apply.add_argument("--mode", choices=("compressed", "cyclic"), default="compressed")
    p_apply.add_argument("--budget", type=int,
                         help=f"retraining epochs (default {DEFAULT_APPLY_BUDGET})")
    p_apply.add_argument("--reset-period", type=int, dest="reset_period",
                         help="cyclic period length (default budget/5)")

    p_cmp = sub.add_parser("compare", help="iterative vs one-shot vs direct strategies")
    p_cmp.add_argument("checkpoint")
    add_common(p_cmp)
    p_cmp.add_argument("--trajectory", type=_parse_targets)
    p_cmp.add_argument("--budget", type=int)
    p_cmp.add_argument("--energy-range", type=_parse_float_pair, dest="energy_range")
    p_cmp.add_argument("--episodes", type=int)
    p_cmp.add_argument("--batch", type=int)
    p_cmp.add_argument("--samples", type=int, help="histogram samples per target")
    p_cmp.add_argument("--compare-seeds", type=int, dest="compare_seeds",
                       help="number of paired seeds")

    p_rep = sub.add_parser("report", help="print the FLOPS breakdown of a checkpoint")
    p_rep.add_argument("checkpoint")
    p_rep.add_argument("--format", choices=("text", "structured"), default="text")
    return parser


_CONFIG_KEYS = (
    "seed", "trajectory", "budget", "energy_range", "episodes", "batch",
    "reset_period", "bake_epochs", "samples", "compare_seeds",
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.checkpoint, args.format)
        overrides = {
            key: getattr(args, key) for key in _CONFIG_KEYS if hasattr(args, key)
        }
        config = load_config(args.config, overrides)
        if args.command == "bake":
            return cmd_bake(config, args.out)
        if args.command == "run-trajectory":
            return cmd_run_trajectory(config, args.checkpoint, args.out)
        if args.command == "apply":
            return cmd_apply(config, args.checkpoint, args.scheme, args.mode, args.out)
        if args.command == "compare":
            return cmd_compare(config, args.checkpoint, args.out)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, SearchFailure) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
