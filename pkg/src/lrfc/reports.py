"""Deterministic report serialization: JSON documents, text tables, CSV.

Every float is emitted with 17 significant digits so identical runs write
byte-identical files and parsed values round-trip exactly.  Text tables
mirror the breakdown and strategy-comparison layouts used in reports:
FLOPS in millions to 2 decimals, speedups to 1 decimal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .compression import FULL, FlopsBreakdown, Scheme, searchable_layers, validate_scheme
from .exceptions import ValidationError
from .search import SearchResult
from .trajectory import ExperimentRecord, StepRecord


def format_float(value: float) -> str:
    """17-significant-digit decimal form; round-trips IEEE doubles."""
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value in report: {value!r}")
    text = "%.17g" % value
    if not any(c in text for c in ".e"):
        text += ".0"
    return text


def dumps(value) -> str:
    """Deterministic JSON with fixed float formatting and a trailing newline."""
    out = io.StringIO()
    _emit(value, out)
    out.write("\n")
    return out.getvalue()


def _emit(value, out) -> None:
    if value is None or isinstance(value, bool):
        out.write(json.dumps(value))
    elif isinstance(value, float):
        out.write(format_float(value))
    elif isinstance(value, int):
        out.write(str(value))
    elif isinstance(value, str):
        out.write(json.dumps(value))
    elif isinstance(value, dict):
        out.write("{")
        for i, (key, item) in enumerate(value.items()):
            if not isinstance(key, str):
                raise ValidationError(f"non-string report key: {key!r}")
            if i:
                out.write(",")
            out.write(json.dumps(key))
            out.write(":")
            _emit(item, out)
        out.write("}")
    elif isinstance(value, (list, tuple)):
        out.write("[")
        for i, item in enumerate(value):
            if i:
                out.write(",")
            _emit(item, out)
        out.write("]")
    else:
        raise ValidationError(f"unserializable report value of type {type(value).__name__}")


def scheme_to_json(scheme: Scheme) -> list:
    return ["full" if c is FULL else int(c) for c in scheme]


def scheme_to_text(scheme: Scheme) -> str:
    return ",".join("full" if c is FULL else str(int(c)) for c in scheme)


def breakdown_to_dict(breakdown: FlopsBreakdown) -> dict:
    return {
        "layers": [
            {
                "part": row.part,
                "layer": row.name,
                "searched": row.searchable,
                "rows": row.rows,
                "cols": row.cols,
                "rank": "full" if row.choice is FULL else int(row.choice),
                "orig_flops": row.orig_flops,
                "new_flops": row.new_flops,
                "speedup": row.layer_speedup,
                "beneficial": row.beneficial,
            }
            for row in breakdown.rows
        ],
        "orig_total": breakdown.orig_total,
        "new_total": breakdown.new_total,
        "overall_speedup": breakdown.overall_speedup,
    }


def search_result_to_dict(result: SearchResult) -> dict:
    return {
        "seed": result.seed,
        "episodes": result.episodes,
        "batch_size": result.batch_size,
        "evaluations": result.evaluations,
        "scheme": scheme_to_json(result.scheme),
        "reward": result.reward,
        "speedup": result.speedup,
        "mean_rewards": list(result.mean_rewards),
        "baselines": list(result.baselines),
    }


def step_to_dict(step: StepRecord) -> dict:
    return {
        "step": step.step,
        "target": step.target,
        "energy_range": list(step.energy_range) if step.energy_range else None,
        "scheme": scheme_to_json(step.scheme),
        "pre_retrain_error": step.pre_retrain_error,
        "post_retrain_error": step.post_retrain_error,
        "epochs": step.epochs,
        "search": search_result_to_dict(step.search) if step.search else None,
    }


def record_to_dict(record: ExperimentRecord, config_echo: dict | None = None) -> dict:
    return {
        "config": config_echo or {},
        "trajectory": list(record.trajectory.targets) if record.trajectory else None,
        "seed": record.seed,
        "baseline_error": record.baseline_error,
        "total_epochs": record.total_epochs,
        "steps": [step_to_dict(s) for s in record.steps],
        "final": {
            "scheme": scheme_to_json(record.final_scheme)
            if record.final_scheme is not None
            else None,
            "pre_retrain_error": record.final_pre_error,
            "error": record.final_error,
            "breakdown": breakdown_to_dict(record.breakdown) if record.breakdown else None,
        },
    }


def _table(rows: list[list[str]], align: str) -> str:
    """Fixed-width text table; align is one '<' or '>' per column."""
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [
            cell.ljust(w) if a == "<" else cell.rjust(w)
            for cell, w, a in zip(row, widths, align)
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def render_breakdown_text(breakdown: FlopsBreakdown) -> str:
    """Per-layer FLOPS table: dims, rank, FLOPS in millions, speedup."""
    rows = [["part", "layer", "searched", "dims", "orig [M]", "rank", "new [M]", "speedup", ""]]
    for row in breakdown.rows:
        rows.append([
            row.part,
            row.name,
            "yes" if row.searchable else "no",
            f"{row.rows}x{row.cols}",
            f"{row.orig_flops / 1e6:.2f}",
            "full" if row.choice is FULL else str(int(row.choice)),
            f"{row.new_flops / 1e6:.2f}",
            f"{row.layer_speedup:.1f}x",
            "" if row.beneficial else "non-beneficial",
        ])
    rows.append([
        "",
        "total",
        "",
        "",
        f"{breakdown.orig_total / 1e6:.2f}",
        "",
        f"{breakdown.new_total / 1e6:.2f}",
        f"{breakdown.overall_speedup:.1f}x",
        "",
    ])
    return _table(rows, "<<<<>>>>" + "<")


def render_comparison_text(rows: list[tuple[str, float]]) -> str:
    """Strategy-vs-error table with errors to 2 decimals."""
    table = [["strategy", "error"]]
    for label, value in rows:
        table.append([label, f"{value:.2f}"])
    return _table(table, "<>")


def steps_csv(record: ExperimentRecord) -> str:
    """Per-step error series, final factorized phase in the last row."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["step", "target", "scheme", "pre_retrain_error", "post_retrain_error", "epochs"]
    )
    for step in record.steps:
        writer.writerow([
            step.step,
            "" if step.target is None else format_float(step.target),
            scheme_to_text(step.scheme),
            format_float(step.pre_retrain_error),
            format_float(step.post_retrain_error),
            step.epochs,
        ])
    if record.final_scheme is not None and record.final_error is not None:
        writer.writerow([
            "final",
            "",
            scheme_to_text(record.final_scheme),
            format_float(record.final_pre_error),
            format_float(record.final_error),
            record.total_epochs - sum(s.epochs for s in record.steps),
        ])
    return out.getvalue()


def trace_csv(record: ExperimentRecord) -> str:
    """Episode-level controller trace for every searched step."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["step", "episode", "mean_reward", "baseline"])
    for step in record.steps:
        if step.search is None:
            continue
        for episode, (mean, base) in enumerate(
            zip(step.search.mean_rewards, step.search.baselines)
        ):
            writer.writerow([
                step.step,
                episode,
                format_float(mean),
                format_float(base),
            ])
    return out.getvalue()


def histogram_csv(samples_by_label: dict[str, list[tuple[Scheme, float, float]]]) -> str:
    """Raw sampled (scheme, speedup, error) triples per target label."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["target", "scheme", "speedup", "error"])
    for label, samples in samples_by_label.items():
        for scheme, speedup, error in samples:
            writer.writerow([
                label,
                scheme_to_text(scheme),
                format_float(speedup),
                format_float(error),
            ])
    return out.getvalue()


def write_scheme_file(path, layers, scheme: Scheme) -> None:
    validate_scheme(layers, scheme)
    entries = [
        {"layer": spec.name, "rank": "full" if choice is FULL else int(choice)}
        for spec, choice in zip(searchable_layers(layers), scheme)
    ]
    Path(path).write_text(dumps({"scheme": entries}), encoding="utf-8")


def parse_scheme_text(text: str, layers) -> Scheme:
    """Read an ordered {layer, rank|'full'} list and map it onto the layers."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"unparseable scheme file: {exc}") from exc
    entries = data.get("scheme") if isinstance(data, dict) else None
    if not isinstance(entries, list):
        raise ValidationError('scheme file must hold {"scheme": [...]}')
    by_name: dict[str, object] = {}
    for entry in entries:
        if not isinstance(entry, dict) or "layer" not in entry or "rank" not in entry:
            raise ValidationError("each scheme entry needs layer and rank fields")
        name = entry["layer"]
        if name in by_name:
            raise ValidationError(f"duplicate scheme entry for layer {name!r}")
        by_name[name] = entry["rank"]
    wanted = [spec.name for spec in searchable_layers(layers)]
    unknown = sorted(set(by_name) - set(wanted))
    missing = sorted(set(wanted) - set(by_name))
    if unknown or missing:
        parts = []
        if unknown:
            parts.append(f"unknown layers: {', '.join(unknown)}")
        if missing:
            parts.append(f"missing layers: {', '.join(missing)}")
        raise ValidationError("scheme does not match model: " + "; ".join(parts))
    choices = []
    for name in wanted:
        rank = by_name[name]
        if rank == "full":
            choices.append(FULL)
        elif isinstance(rank, int) and not isinstance(rank, bool):
            choices.append(rank)
        else:
            raise ValidationError(
                f"layer {name!r}: rank must be an integer or \"full\", got {rank!r}"
            )
    scheme = tuple(choices)
    validate_scheme(layers, scheme)
    return scheme


def parse_scheme_file(path, layers) -> Scheme:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"unreadable scheme file {path}: {exc}") from exc
    return parse_scheme_text(text, layers)
