"""Iterative compress-retrain loops driven by speedup trajectories.

A trajectory is a strictly increasing list of intermediate speedup targets.
Each step searches for a scheme meeting its target, compresses the model
while keeping full-size matrices, and retrains; after the last step the
final scheme is applied in factorized form and retrained once more.  The
module also runs the two direct strategies (compressed / cyclic retraining
of a fixed scheme) used for comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compression import (
    FlopsBreakdown,
    Scheme,
    SvdCache,
    apply_scheme_factorized,
    apply_scheme_full,
    flops_breakdown,
    validate_scheme,
)
from .exceptions import SearchFailure, ValidationError
from .model import CompressibleModel, Dataset, TrainConfig, evaluate, train
from .search import (
    ENERGY_CEIL,
    ENERGY_FLOOR,
    RewardSpec,
    SearchResult,
    SearchSettings,
    construct_search_space,
    reinforce_search,
    scheme_evaluator,
)

# Desk-scale retraining budget: epochs per 1x of speedup increment.
EPOCHS_PER_UNIT_SPEEDUP = 20

ENERGY_RANGE_DELTA = 0.1
SIMILARITY_BAND = (0.5, 2.0)


@dataclass(frozen=True)
class Trajectory:
    """Strictly increasing speedup targets [t1..tK]; K = 1 is one-shot."""

    targets: tuple[float, ...]

    def __post_init__(self):
        if len(self.targets) < 1:
            raise ValidationError("trajectory needs at least one target")
        if any(t <= 1.0 for t in self.targets):
            raise ValidationError("every speedup target must exceed 1")
        if any(b <= a for a, b in zip(self.targets, self.targets[1:])):
            raise ValidationError("targets must be strictly increasing")

    @property
    def increments(self) -> tuple[float, ...]:
        prev = (1.0,) + self.targets[:-1]
        return tuple(t - p for t, p in zip(self.targets, prev))

    @property
    def final_target(self) -> float:
        return self.targets[-1]

    @classmethod
    def from_string(cls, text: str) -> "Trajectory":
        try:
            targets = tuple(float(tok) for tok in text.split(",") if tok.strip())
        except ValueError as exc:
            raise ValidationError(f"bad trajectory {text!r}: {exc}") from exc
        return cls(targets)


def default_budget(trajectory: Trajectory) -> int:
    """Total retraining epochs scaled by the summed phase weights."""
    weights = sum(trajectory.increments) + trajectory.increments[-1]
    return max(len(trajectory.targets) + 1, round(EPOCHS_PER_UNIT_SPEEDUP * weights))


def adapt_energy_range(
    prev: tuple[float, float], increment: float, prev_increment: float | None
) -> tuple[float, float]:
    """Shift the energy range by the step-increment ratio.

    Similar increments keep the range; a much larger increment lowers both
    endpoints (more aggressive ranks), a much smaller one raises them.
    Endpoints clamp to the explorable band.
    """
    lo, hi = float(prev[0]), float(prev[1])
    if prev_increment is None:
        return (lo, hi)
    ratio = increment / prev_increment
    # Doubling the increment (ratio exactly 2) already counts as aggressive.
    if SIMILARITY_BAND[0] <= ratio < SIMILARITY_BAND[1]:
        return (lo, hi)
    delta = -ENERGY_RANGE_DELTA if ratio >= SIMILARITY_BAND[1] else ENERGY_RANGE_DELTA
    lo = min(max(lo + delta, ENERGY_FLOOR), ENERGY_CEIL)
    hi = min(max(hi + delta, ENERGY_FLOOR), ENERGY_CEIL)
    return (lo, hi)


def allocate_budget(total_epochs: int, trajectory: Trajectory) -> tuple[int, ...]:
    """Split epochs over K intermediate retrains plus the final retrain.

    Weights are the per-step speedup increments, with the final factorized
    retrain weighted like the last step.  Largest-remainder rounding keeps
    the sum exact.
    """
    increments = trajectory.increments
    weights = (*increments, increments[-1])
    phases = len(weights)
    if total_epochs < phases:
        raise ValidationError(
            f"budget {total_epochs} cannot cover {phases} phases"
        )
    total_weight = sum(weights)
    shares = [total_epochs * w / total_weight for w in weights]
    floors = [math.floor(s) for s in shares]
    remainder = total_epochs - sum(floors)
    order = sorted(range(phases), key=lambda i: (floors[i] - shares[i], i))
    for i in order[:remainder]:
        floors[i] += 1
    return tuple(floors)


@dataclass(frozen=True)
class RetrainSettings:
    learning_rate: float = 0.05
    batch_size: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValidationError("bad retrain settings")


@dataclass(frozen=True)
class StepRecord:
    """One compress-retrain step (or one cyclic period)."""

    step: int
    target: float | None
    energy_range: tuple[float, float] | None
    scheme: Scheme
    pre_retrain_error: float
    post_retrain_error: float
    epochs: int
    search: SearchResult | None


@dataclass(frozen=True)
class ExperimentRecord:
    """Full provenance of one run; partial runs leave the final fields None."""

    trajectory: Trajectory | None
    baseline_error: float
    steps: tuple[StepRecord, ...]
    final_scheme: Scheme | None
    final_pre_error: float | None
    final_error: float | None
    total_epochs: int
    seed: int
    breakdown: FlopsBreakdown | None


@dataclass(frozen=True)
class RunResult:
    record: ExperimentRecord
    model: CompressibleModel


def _phase_seeds(seed: int, count: int) -> list[int]:
    state = np.random.SeedSequence(seed).generate_state(count)
    return [int(s) for s in state]


def run_trajectory(
    model: CompressibleModel,
    train_data: Dataset,
    test_data: Dataset,
    trajectory: Trajectory,
    total_budget: int,
    initial_energy_range: tuple[float, float] = (0.3, 0.8),
    search: SearchSettings = SearchSettings(),
    retrain: RetrainSettings = RetrainSettings(),
    seed: int = 0,
    svd_cache: SvdCache | None = None,
) -> RunResult:
    """Iterate search, full-matrix compression, and retraining.

    Per step: adapt the energy range, build the candidate space, run the
    controller, overwrite searchable layers with their rank-k
    reconstructions, and retrain dense.  After the last step the final
    scheme is applied in factorized form and retrained.  A search failure
    aborts with the partial record attached.
    """
    if not model.fully_dense:
        raise ValidationError("trajectory runs start from a dense model")
    cache = svd_cache if svd_cache is not None else SvdCache()
    layers = model.layer_specs
    phases = allocate_budget(total_budget, trajectory)
    increments = trajectory.increments
    num_steps = len(trajectory.targets)
    seeds = _phase_seeds(seed, 2 * num_steps + 1)

    baseline_error = evaluate(model, test_data)
    current = model
    energy_range = (float(initial_energy_range[0]), float(initial_energy_range[1]))
    records: list[StepRecord] = []
    epochs_used = 0

    for i, target in enumerate(trajectory.targets, start=1):
        prev_increment = increments[i - 2] if i > 1 else None
        energy_range = adapt_energy_range(energy_range, increments[i - 1], prev_increment)
        weights = current.weight_matrices()
        space = construct_search_space(layers, weights, target, energy_range, cache)
        step_baseline = evaluate(current, test_data)
        reward_spec = RewardSpec(
            baseline_error=step_baseline,
            quality_weight=search.quality_weight,
            violation_penalty_scale=search.violation_penalty_scale,
        )
        eval_fn = scheme_evaluator(current, test_data, cache)
        try:
            result = reinforce_search(
                space, reward_spec, eval_fn, settings=search, seed=seeds[2 * (i - 1)]
            )
        except SearchFailure as exc:
            partial = ExperimentRecord(
                trajectory=trajectory,
                baseline_error=baseline_error,
                steps=tuple(records),
                final_scheme=None,
                final_pre_error=None,
                final_error=None,
                total_epochs=epochs_used,
                seed=seed,
                breakdown=None,
            )
            raise SearchFailure(
                f"step {i} (target {target}x): {exc}", partial=partial
            ) from exc

        compressed = current.with_weights(
            apply_scheme_full(layers, weights, result.scheme, cache)
        )
        pre_error = evaluate(compressed, test_data)
        outcome = train(
            compressed,
            train_data,
            TrainConfig(
                epochs=phases[i - 1],
                batch_size=retrain.batch_size,
                learning_rate=retrain.learning_rate,
                seed=seeds[2 * (i - 1) + 1],
                mode="full",
            ),
        )
        current = outcome.model
        post_error = evaluate(current, test_data)
        epochs_used += phases[i - 1]
        records.append(
            StepRecord(
                step=i,
                target=target,
                energy_range=energy_range,
                scheme=result.scheme,
                pre_retrain_error=pre_error,
                post_retrain_error=post_error,
                epochs=phases[i - 1],
                search=result,
            )
        )

    final_scheme = records[-1].scheme
    factorized = current.with_weights(
        apply_scheme_factorized(layers, current.weight_matrices(), final_scheme, cache)
    )
    final_pre_error = evaluate(factorized, test_data)
    outcome = train(
        factorized,
        train_data,
        TrainConfig(
            epochs=phases[-1],
            batch_size=retrain.batch_size,
            learning_rate=retrain.learning_rate,
            seed=seeds[2 * num_steps],
            mode="factorized",
        ),
    )
    final_model = outcome.model
    final_error = evaluate(final_model, test_data)
    epochs_used += phases[-1]

    record = ExperimentRecord(
        trajectory=trajectory,
        baseline_error=baseline_error,
        steps=tuple(records),
        final_scheme=final_scheme,
        final_pre_error=final_pre_error,
        final_error=final_error,
        total_epochs=epochs_used,
        seed=seed,
        breakdown=flops_breakdown(layers, final_scheme),
    )
    return RunResult(record=record, model=final_model)


def run_apply_ranks(
    model: CompressibleModel,
    train_data: Dataset,
    test_data: Dataset,
    scheme: Scheme,
    retrain_mode: str,
    budget: int,
    seed: int = 0,
    retrain: RetrainSettings = RetrainSettings(),
    reset_period: int | None = None,
    svd_cache: SvdCache | None = None,
) -> RunResult:
    """Apply a fixed scheme to the model and retrain it one of two ways.

    Compressed: factorize immediately and train in factorized form for the
    whole budget.  Cyclic: alternate full-matrix recompression periods with
    a fresh learning-rate cycle each period, factorizing only in the last
    one.
    """
    if retrain_mode not in ("compressed", "cyclic"):
        raise ValidationError(f"unknown retrain mode {retrain_mode!r}")
    if budget < 0:
        raise ValidationError("budget must be non-negative")
    if not model.fully_dense:
        raise ValidationError("apply runs start from a dense model")
    cache = svd_cache if svd_cache is not None else SvdCache()
    layers = model.layer_specs
    validate_scheme(layers, scheme)
    baseline_error = evaluate(model, test_data)
    breakdown = flops_breakdown(layers, scheme)

    if retrain_mode == "compressed":
        compressed = model.with_weights(
            apply_scheme_factorized(layers, model.weight_matrices(), scheme, cache)
        )
        pre_error = evaluate(compressed, test_data)
        if budget > 0:
            outcome = train(
                compressed,
                train_data,
                TrainConfig(
                    epochs=budget,
                    batch_size=retrain.batch_size,
                    learning_rate=retrain.learning_rate,
                    seed=_phase_seeds(seed, 1)[0],
                    mode="factorized",
                ),
            )
            compressed = outcome.model
        final_error = evaluate(compressed, test_data)
        record = ExperimentRecord(
            trajectory=None,
            baseline_error=baseline_error,
            steps=(),
            final_scheme=scheme,
            final_pre_error=pre_error,
            final_error=final_error,
            total_epochs=budget,
            seed=seed,
            breakdown=breakdown,
        )
        return RunResult(record=record, model=compressed)

    if budget == 0:
        # degenerate cyclic run: same outcome as a 0-epoch compressed run
        return run_apply_ranks(
            model, train_data, test_data, scheme, "compressed", 0, seed,
            retrain=retrain, svd_cache=cache,
        )
    period = reset_period if reset_period is not None else max(1, budget // 5)
    if period < 1 or budget % period != 0:
        raise ValidationError(
            f"reset period {period} must divide the budget {budget}"
        )
    num_periods = budget // period
    seeds = _phase_seeds(seed, num_periods)
    current = model
    records: list[StepRecord] = []
    final_pre_error = None
    final_error = None
    for p in range(num_periods):
        last = p == num_periods - 1
        weights = current.weight_matrices()
        apply = apply_scheme_factorized if last else apply_scheme_full
        compressed = current.with_weights(apply(layers, weights, scheme, cache))
        pre_error = evaluate(compressed, test_data)
        outcome = train(
            compressed,
            train_data,
            TrainConfig(
                epochs=period,
                batch_size=retrain.batch_size,
                learning_rate=retrain.learning_rate,
                lr_schedule="cyclic",
                reset_period=period,
                seed=seeds[p],
                mode="factorized" if last else "full",
            ),
        )
        current = outcome.model
        post_error = evaluate(current, test_data)
        if last:
            final_pre_error = pre_error
            final_error = post_error
        else:
            records.append(
                StepRecord(
                    step=p + 1,
                    target=None,
                    energy_range=None,
                    scheme=scheme,
                    pre_retrain_error=pre_error,
                    post_retrain_error=post_error,
                    epochs=period,
                    search=None,
                )
            )
    record = ExperimentRecord(
        trajectory=None,
        baseline_error=baseline_error,
        steps=tuple(records),
        final_scheme=scheme,
        final_pre_error=final_pre_error,
        final_error=final_error,
        total_epochs=budget,
        seed=seed,
        breakdown=breakdown,
    )
    return RunResult(record=record, model=current)
