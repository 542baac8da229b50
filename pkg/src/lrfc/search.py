"""Rank-scheme search: candidate spaces, rewards, and the policy controller.

The search space holds 5 rank candidates per searchable layer, placed at
energies linearly spaced over a configured range.  A small REINFORCE
controller with independent per-layer categorical policies samples
schemes, scores them with a constraint-aware reward, and returns the best
constraint-satisfying scheme it ever saw.  A brute-force enumerator over
the same reward serves as the oracle for small spaces.  Searching never
retrains and never mutates model parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compression import (
    FULL,
    LayerSpec,
    RankChoice,
    Scheme,
    SvdCache,
    apply_scheme_full,
    flops_breakdown,
    is_beneficial,
    scheme_speedup,
    searchable_layers,
)
from .exceptions import SearchFailure, ValidationError
from .linalg import energy_to_rank
from .model import CompressibleModel, Dataset, evaluate

ENERGY_FLOOR = 0.3
ENERGY_CEIL = 0.99
NUM_LEVELS = 5


@dataclass(frozen=True)
class SearchSpace:
    """Per-layer rank candidates plus the speedup target they serve."""

    layers: tuple[LayerSpec, ...]
    candidates: tuple[tuple[RankChoice, ...], ...]  # one tuple per searchable layer
    target_speedup: float
    energy_range: tuple[float, float]

    def __post_init__(self):
        if len(self.candidates) != len(searchable_layers(self.layers)):
            raise ValidationError("candidate lists do not match searchable layers")
        if any(len(c) == 0 for c in self.candidates):
            raise ValidationError("empty candidate list")
        if self.target_speedup <= 0:
            raise ValidationError("target speedup must be positive")

    @property
    def size(self) -> int:
        n = 1
        for cands in self.candidates:
            n *= len(cands)
        return n

    def schemes(self):
        """Iterate every scheme in lexicographic candidate order."""
        stack: list[Scheme] = [()]
        for cands in self.candidates:
            stack = [s + (c,) for s in stack for c in cands]
        return iter(stack)


def validate_energy_range(energy_range: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(energy_range[0]), float(energy_range[1])
    if not (ENERGY_FLOOR <= lo < hi <= ENERGY_CEIL):
        raise ValidationError(
            f"energy range must satisfy {ENERGY_FLOOR} <= lo < hi <= {ENERGY_CEIL}, got ({lo}, {hi})"
        )
    return lo, hi


def construct_search_space(
    layers,
    weights: dict,
    target_speedup: float,
    energy_range: tuple[float, float],
    cache: SvdCache | None = None,
    num_levels: int = NUM_LEVELS,
) -> SearchSpace:
    """Build per-layer candidates from energies spread over ``energy_range``.

    Colliding ranks are de-duplicated upward: the higher energy level is
    bumped by 1, capped at the layer's min dimension.  Ranks that do not
    reduce FLOPS become the full (uncompressed) choice.
    """
    lo, hi = validate_energy_range(energy_range)
    if num_levels < 1:
        raise ValidationError("need at least one candidate level")
    if cache is None:
        cache = SvdCache()
    energies = np.linspace(lo, hi, num_levels)
    candidates = []
    for spec in searchable_layers(layers):
        if spec.name not in weights:
            raise ValidationError(f"missing weight matrix for layer {spec.name!r}")
        try:
            factors = cache.get(spec.name, weights[spec.name])
            ranks = [energy_to_rank(factors, float(e)) for e in energies]
        except ValidationError as exc:
            raise ValidationError(f"layer {spec.name!r}: {exc}") from exc
        chosen: list[int] = []
        for rank in ranks:
            while rank in chosen and rank < spec.min_dim:
                rank += 1
            chosen.append(rank)
        candidates.append(
            tuple(r if is_beneficial(spec.rows, spec.cols, r) else FULL for r in chosen)
        )
    return SearchSpace(
        layers=tuple(layers),
        candidates=tuple(candidates),
        target_speedup=float(target_speedup),
        energy_range=(lo, hi),
    )


@dataclass(frozen=True)
class RewardSpec:
    """Weights of the two-branch reward around a fixed baseline error."""

    baseline_error: float
    quality_weight: float = 10.0
    violation_penalty_scale: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.baseline_error <= 1.0:
            raise ValidationError("baseline error must lie in [0, 1]")
        if self.quality_weight <= 0 or self.violation_penalty_scale <= 0:
            raise ValidationError("reward weights must be positive")
        if self.violation_penalty_scale < self.quality_weight:
            # keeps violating schemes below satisfying ones in typical regimes
            raise ValidationError("violation penalty scale must be >= quality weight")


def scheme_reward(layers, scheme: Scheme, target: float, spec: RewardSpec, eval_fn) -> float:
    """Quality reward above the speedup target, scaled penalty below it.

    ``eval_fn(scheme)`` must be a pure evaluator: compress a copy of the
    model, measure its error, discard.  It is only consulted when the
    scheme meets the target, so violating schemes stay cheap.
    """
    if target <= 0:
        raise ValidationError("target speedup must be positive")
    speedup = scheme_speedup(layers, scheme)
    if speedup >= target:
        return spec.quality_weight * (spec.baseline_error - eval_fn(scheme))
    return -spec.violation_penalty_scale * (1.0 - speedup / target)


def scheme_evaluator(model: CompressibleModel, data: Dataset, cache: SvdCache | None = None):
    """Memoized pure scheme-quality oracle over a frozen model."""
    if cache is None:
        cache = SvdCache()
    layers = model.layer_specs
    base_weights = model.weight_matrices()
    memo: dict[Scheme, float] = {}

    def eval_fn(scheme: Scheme) -> float:
        key = tuple(scheme)
        if key not in memo:
            compressed = model.with_weights(
                apply_scheme_full(layers, base_weights, key, cache)
            )
            memo[key] = evaluate(compressed, data)
        return memo[key]

    return eval_fn


@dataclass
class ControllerState:
    """Per-layer categorical policy logits plus the reward baseline."""

    logits: np.ndarray  # (num searchable layers, num levels)
    baseline: float | None
    rng_seed: int
    episode: int = 0

    def probabilities(self) -> np.ndarray:
        return _softmax(self.logits)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def policy_step(
    logits: np.ndarray,
    probs: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    learning_rate: float,
) -> np.ndarray:
    """One batched REINFORCE update: logits += lr/B * sum adv * (onehot - p)."""
    batch = advantages.shape[0]
    levels = logits.shape[1]
    new = logits.copy()
    scale = learning_rate / batch
    total_adv = advantages.sum()
    for layer in range(logits.shape[0]):
        push = np.bincount(actions[:, layer], weights=advantages, minlength=levels)
        new[layer] += scale * (push - total_adv * probs[layer])
    return new


@dataclass(frozen=True)
class SearchSettings:
    episodes: int = 200
    batch_size: int = 8
    policy_lr: float = 0.15
    baseline_decay: float = 0.9
    quality_weight: float = 10.0
    violation_penalty_scale: float = 10.0

    def __post_init__(self):
        if self.episodes < 1 or self.batch_size < 1:
            raise ValidationError("episodes and batch size must be positive")
        if self.policy_lr <= 0 or not 0.0 <= self.baseline_decay < 1.0:
            raise ValidationError("bad controller hyperparameters")


@dataclass(frozen=True)
class SearchResult:
    """Best scheme found plus the per-episode reward trace."""

    scheme: Scheme
    reward: float
    speedup: float
    episodes: int
    batch_size: int
    seed: int
    mean_rewards: tuple[float, ...]
    baselines: tuple[float, ...]
    evaluations: int  # distinct schemes scored
    controller: ControllerState = field(repr=False, compare=False, default=None)


def _rank_key(scheme: Scheme) -> tuple[float, ...]:
    # Full sorts after any finite rank.
    return tuple(math.inf if c is FULL else float(c) for c in scheme)


class _RewardTable:
    """Shared scoring plumbing: caching, constraint checks, best tracking."""

    def __init__(self, space: SearchSpace, reward_spec: RewardSpec, eval_fn):
        self.space = space
        self.reward_spec = reward_spec
        self.eval_fn = eval_fn
        self.cache: dict[Scheme, tuple[float, float, float]] = {}
        self.best_key = None
        self.best: tuple[Scheme, float, float] | None = None  # scheme, reward, speedup

    def score(self, scheme: Scheme) -> float:
        entry = self.cache.get(scheme)
        if entry is None:
            speedup = scheme_speedup(self.space.layers, scheme)
            target = self.space.target_speedup
            if speedup >= target:
                reward = self.reward_spec.quality_weight * (
                    self.reward_spec.baseline_error - self.eval_fn(scheme)
                )
                flops = flops_breakdown(self.space.layers, scheme).new_total
            else:
                reward = -self.reward_spec.violation_penalty_scale * (1.0 - speedup / target)
                flops = math.inf  # violating schemes never compete on ties
            entry = (reward, speedup, flops)
            self.cache[scheme] = entry
        reward, speedup, flops = entry
        if speedup >= self.space.target_speedup:
            key = (-reward, flops, _rank_key(scheme))
            if self.best_key is None or key < self.best_key:
                self.best_key = key
                self.best = (scheme, reward, speedup)
        return reward


def reinforce_search(
    space: SearchSpace,
    reward_spec: RewardSpec,
    eval_fn,
    settings: SearchSettings = SearchSettings(),
    seed: int = 0,
) -> SearchResult:
    """Policy-gradient search over the candidate space.

    Runs ``settings.episodes`` episodes of ``settings.batch_size`` sampled
    schemes, updates per-layer softmax policies against an exponential
    moving-average baseline, and returns the best constraint-satisfying
    scheme ever sampled (ties: lower compressed FLOPS, then smallest rank
    tuple).  Deterministic for a given seed.
    """
    table = _RewardTable(space, reward_spec, eval_fn)
    num_layers = len(space.candidates)
    levels = max(len(c) for c in space.candidates)
    if any(len(c) != levels for c in space.candidates):
        raise ValidationError("all layers must offer the same number of levels")
    state = ControllerState(
        logits=np.zeros((num_layers, levels)), baseline=None, rng_seed=seed
    )
    rng = np.random.default_rng(seed)
    mean_rewards: list[float] = []
    baselines: list[float] = []

    for _ in range(settings.episodes):
        probs = state.probabilities()
        cums = np.cumsum(probs, axis=1)
        draws = rng.random((settings.batch_size, num_layers))
        actions = np.empty((settings.batch_size, num_layers), dtype=np.intp)
        for layer in range(num_layers):
            actions[:, layer] = np.searchsorted(cums[layer], draws[:, layer], side="right")
        np.clip(actions, 0, levels - 1, out=actions)

        rewards = np.empty(settings.batch_size)
        for b in range(settings.batch_size):
            scheme = tuple(
                space.candidates[layer][actions[b, layer]] for layer in range(num_layers)
            )
            rewards[b] = table.score(scheme)

        episode_mean = float(rewards.mean())
        if state.baseline is None:
            state.baseline = episode_mean
        else:
            state.baseline = (
                settings.baseline_decay * state.baseline
                + (1.0 - settings.baseline_decay) * episode_mean
            )
        advantages = rewards - state.baseline
        state.logits = policy_step(
            state.logits, probs, actions, advantages, settings.policy_lr
        )
        state.episode += 1
        mean_rewards.append(episode_mean)
        baselines.append(state.baseline)

    if table.best is None:
        raise SearchFailure(
            f"no scheme reached speedup {space.target_speedup} in "
            f"{settings.episodes} episodes",
            partial={
                "target_speedup": space.target_speedup,
                "mean_rewards": tuple(mean_rewards),
                "baselines": tuple(baselines),
                "evaluations": len(table.cache),
            },
        )
    scheme, reward, speedup = table.best
    return SearchResult(
        scheme=scheme,
        reward=reward,
        speedup=speedup,
        episodes=settings.episodes,
        batch_size=settings.batch_size,
        seed=seed,
        mean_rewards=tuple(mean_rewards),
        baselines=tuple(baselines),
        evaluations=len(table.cache),
        controller=state,
    )


BRUTE_FORCE_LIMIT = 1_000_000


def brute_force_search(space: SearchSpace, reward_spec: RewardSpec, eval_fn) -> Scheme:
    """Exhaustive oracle with the same reward and tie-breaking rules."""
    if space.size > BRUTE_FORCE_LIMIT:
        raise ValidationError(
            f"search space holds {space.size} schemes, refusing brute force "
            f"beyond {BRUTE_FORCE_LIMIT}"
        )
    table = _RewardTable(space, reward_spec, eval_fn)
    for scheme in space.schemes():
        table.score(scheme)
    if table.best is None:
        raise SearchFailure(
            f"no scheme in the space reaches speedup {space.target_speedup}"
        )
    return table.best[0]


def reward_histogram(
    space: SearchSpace, eval_fn, n_samples: int, seed: int = 0
) -> list[tuple[Scheme, float, float]]:
    """Uniformly sampled (scheme, speedup, error) triples, no retraining."""
    if n_samples < 0:
        raise ValidationError("sample count must be non-negative")
    rng = np.random.default_rng(seed)
    num_layers = len(space.candidates)
    out: list[tuple[Scheme, float, float]] = []
    if n_samples == 0:
        return out
    picks = np.empty((n_samples, num_layers), dtype=np.intp)
    for layer in range(num_layers):
        picks[:, layer] = rng.integers(0, len(space.candidates[layer]), size=n_samples)
    errors: dict[Scheme, float] = {}
    for row in picks:
        scheme = tuple(space.candidates[layer][row[layer]] for layer in range(num_layers))
        if scheme not in errors:
            errors[scheme] = eval_fn(scheme)
        out.append((scheme, scheme_speedup(space.layers, scheme), errors[scheme]))
    return out
