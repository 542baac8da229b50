"""Compression schemes and the FLOPS arithmetic behind speedup targets.

FLOPS are multiply-accumulate counts of the weight-matrix products only:
a dense m x n layer costs m*n MACs, a rank-k factor pair costs k*(m+n).
Biases and activations are excluded; that is the convention every
breakdown in this package reports.

A compression scheme is a tuple with one entry per *searchable* layer:
either an integer rank or ``FULL`` (None) for "leave the layer dense".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ValidationError
from .linalg import SvdFactors, TruncatedFactors, as_matrix, reconstruct, svd, truncate

FULL = None
RankChoice = int | None
Scheme = tuple[RankChoice, ...]


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one weight matrix."""

    name: str
    rows: int
    cols: int
    searchable: bool = True
    part: str = ""

    @property
    def min_dim(self) -> int:
        return min(self.rows, self.cols)

    @property
    def dense_flops(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class LayerFlops:
    """One breakdown row."""

    name: str
    part: str
    searchable: bool
    rows: int
    cols: int
    choice: RankChoice
    orig_flops: int
    new_flops: int
    layer_speedup: float
    beneficial: bool


@dataclass(frozen=True)
class FlopsBreakdown:
    rows: tuple[LayerFlops, ...]
    orig_total: int
    new_total: int
    overall_speedup: float


def searchable_layers(layers: Sequence[LayerSpec]) -> list[LayerSpec]:
    return [spec for spec in layers if spec.searchable]


def validate_layers(layers: Sequence[LayerSpec]) -> None:
    names = [spec.name for spec in layers]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate layer names in {names}")


def validate_scheme(layers: Sequence[LayerSpec], scheme: Scheme) -> None:
    """Check scheme length and per-layer rank ranges, naming offenders."""
    validate_layers(layers)
    targets = searchable_layers(layers)
    if len(scheme) != len(targets):
        raise ValidationError(
            f"scheme has {len(scheme)} entries for {len(targets)} searchable layers"
        )
    for spec, choice in zip(targets, scheme):
        if choice is FULL:
            continue
        if not isinstance(choice, (int, np.integer)) or isinstance(choice, bool):
            raise ValidationError(f"layer {spec.name}: rank must be an integer or FULL")
        if not 1 <= choice <= spec.min_dim:
            raise ValidationError(
                f"layer {spec.name}: rank {choice} out of range [1, {spec.min_dim}]"
            )


def layer_flops(rows: int, cols: int, choice: RankChoice) -> int:
    """MAC count of one layer under a rank choice."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"bad layer dims {rows}x{cols}")
    if choice is FULL:
        return rows * cols
    return int(choice) * (rows + cols)


def is_beneficial(rows: int, cols: int, rank: int) -> bool:
    """Whether factorizing at this rank actually reduces MACs."""
    return rank * (rows + cols) < rows * cols


def scheme_speedup(layers: Sequence[LayerSpec], scheme: Scheme) -> float:
    """Baseline MACs over compressed MACs, counting unsearched layers unchanged."""
    validate_scheme(layers, scheme)
    choices = iter(scheme)
    orig = 0
    new = 0
    for spec in layers:
        orig += spec.dense_flops
        new += layer_flops(spec.rows, spec.cols, next(choices) if spec.searchable else FULL)
    return orig / new


def flops_breakdown(layers: Sequence[LayerSpec], scheme: Scheme) -> FlopsBreakdown:
    """Per-layer FLOPS table plus totals for a scheme."""
    validate_scheme(layers, scheme)
    choices = iter(scheme)
    rows = []
    orig_total = 0
    new_total = 0
    for spec in layers:
        choice = next(choices) if spec.searchable else FULL
        orig = spec.dense_flops
        new = layer_flops(spec.rows, spec.cols, choice)
        rows.append(
            LayerFlops(
                name=spec.name,
                part=spec.part,
                searchable=spec.searchable,
                rows=spec.rows,
                cols=spec.cols,
                choice=choice,
                orig_flops=orig,
                new_flops=new,
                layer_speedup=orig / new,
                beneficial=(choice is FULL) or is_beneficial(spec.rows, spec.cols, choice),
            )
        )
        orig_total += orig
        new_total += new
    return FlopsBreakdown(
        rows=tuple(rows),
        orig_total=orig_total,
        new_total=new_total,
        overall_speedup=orig_total / new_total,
    )


def _matrix_digest(matrix: np.ndarray) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(matrix.shape).encode())
    h.update(np.ascontiguousarray(matrix, dtype=np.float64).tobytes())
    return h.digest()


@dataclass
class SvdCache:
    """Memoizes decompositions per (layer name, matrix content).

    Searches decompose the same weights hundreds of times; keying on the
    content digest makes the cache safe across retraining steps.
    """

    _store: dict = field(default_factory=dict)

    def get(self, name: str, matrix: np.ndarray) -> SvdFactors:
        key = (name, _matrix_digest(matrix))
        factors = self._store.get(key)
        if factors is None:
            factors = svd(matrix)
            self._store[key] = factors
        return factors

    def factors_for(
        self, layers: Sequence[LayerSpec], weights: Mapping[str, np.ndarray]
    ) -> dict[str, SvdFactors]:
        return {
            spec.name: self.get(spec.name, weights[spec.name])
            for spec in searchable_layers(layers)
        }


def _check_weights(layers: Sequence[LayerSpec], weights: Mapping[str, np.ndarray]) -> None:
    for spec in searchable_layers(layers):
        if spec.name not in weights:
            raise ValidationError(f"searchable layer {spec.name} missing from weights")
        shape = np.shape(weights[spec.name])
        if shape != (spec.rows, spec.cols):
            raise ValidationError(
                f"layer {spec.name}: weights shape {shape} != spec {(spec.rows, spec.cols)}"
            )


def apply_scheme_full(
    layers: Sequence[LayerSpec],
    weights: Mapping[str, np.ndarray],
    scheme: Scheme,
    cache: SvdCache | None = None,
) -> dict[str, np.ndarray]:
    """Replace each ranked layer by its dense low-rank reconstruction.

    Shapes are preserved for every entry; FULL and non-searchable layers
    come back as copies of the input.
    """
    validate_scheme(layers, scheme)
    _check_weights(layers, weights)
    cache = cache or SvdCache()
    out: dict[str, np.ndarray] = {name: np.array(value) for name, value in weights.items()}
    for spec, choice in zip(searchable_layers(layers), scheme):
        if choice is FULL:
            continue
        factors = cache.get(spec.name, as_matrix(weights[spec.name]))
        out[spec.name] = reconstruct(truncate(factors, int(choice)))
    return out


def apply_scheme_factorized(
    layers: Sequence[LayerSpec],
    weights: Mapping[str, np.ndarray],
    scheme: Scheme,
    cache: SvdCache | None = None,
) -> dict[str, np.ndarray | TruncatedFactors]:
    """Like :func:`apply_scheme_full` but ranked layers stay as factor pairs."""
    validate_scheme(layers, scheme)
    _check_weights(layers, weights)
    cache = cache or SvdCache()
    out: dict[str, np.ndarray | TruncatedFactors] = {
        name: np.array(value) for name, value in weights.items()
    }
    for spec, choice in zip(searchable_layers(layers), scheme):
        if choice is FULL:
            continue
        factors = cache.get(spec.name, as_matrix(weights[spec.name]))
        out[spec.name] = truncate(factors, int(choice))
    return out
