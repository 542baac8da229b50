"""Scheme validation, FLOPS accounting, and scheme application tests.

FLOPS are multiply-accumulate counts of the weight matmuls: m*n dense,
k*(m+n) factorized.  Fixtures pin a handful of hand-computed layer rows
typical of large recurrent models.
"""

from __future__ import annotations

import numpy as np
import pytest

from lrfc.compression import (
    FULL,
    LayerSpec,
    SvdCache,
    apply_scheme_factorized,
    apply_scheme_full,
    flops_breakdown,
    is_beneficial,
    layer_flops,
    scheme_speedup,
    searchable_layers,
    validate_layers,
    validate_scheme,
)
from lrfc.exceptions import ValidationError
from lrfc.linalg import TruncatedFactors, reconstruct, svd, truncate


def _two_layers():
    return (
        LayerSpec(name="a", rows=8, cols=12),
        LayerSpec(name="b", rows=6, cols=6),
    )


class TestLayerFlops:
    def test_dense_and_factorized_counts(self):
        assert layer_flops(1024, 4096, FULL) == 4_194_304
        assert layer_flops(1024, 4096, 72) == 72 * 5120 == 368_640
        assert layer_flops(1024, 1024, 16) == 32_768
        assert layer_flops(1000, 1024, 15) == 30_360
        assert layer_flops(2645, 4000, 130) == 863_850

    def test_single_layer_speedups(self):
        # Reported speedups are printed to one decimal; allow that rounding.
        assert 4_194_304 / layer_flops(1024, 4096, 72) == pytest.approx(11.4, abs=0.05)
        assert 1_048_576 / layer_flops(1024, 1024, 16) == pytest.approx(32.0, abs=1e-9)
        assert 1_024_000 / layer_flops(1000, 1024, 15) == pytest.approx(33.7, abs=0.05)

    def test_bad_dims(self):
        with pytest.raises(ValidationError):
            layer_flops(0, 5, FULL)
        with pytest.raises(ValidationError):
            layer_flops(5, -1, 2)

    def test_beneficial_boundary(self):
        # k(m+n) < mn strictly; k = mn/(m+n) exactly is not beneficial.
        assert is_beneficial(256, 256, 127)
        assert not is_beneficial(256, 256, 128)
        assert is_beneficial(40, 4096, 39)
        assert not is_beneficial(2, 2, 1)  # 1*4 == 4

    def test_full_choice_never_counted_as_rank(self):
        spec = LayerSpec(name="x", rows=40, cols=4096)
        bd = flops_breakdown((spec,), (FULL,))
        assert bd.rows[0].new_flops == 163_840
        assert bd.overall_speedup == 1.0


class TestValidation:
    def test_duplicate_layer_names(self):
        layers = (LayerSpec(name="w", rows=2, cols=2), LayerSpec(name="w", rows=3, cols=3))
        with pytest.raises(ValidationError, match="duplicate"):
            validate_layers(layers)

    def test_scheme_length(self):
        layers = _two_layers()
        with pytest.raises(ValidationError, match="entries"):
            validate_scheme(layers, (1,))
        validate_scheme(layers, (1, 2))

    def test_scheme_entries(self):
        layers = _two_layers()
        with pytest.raises(ValidationError, match="a"):
            validate_scheme(layers, (0, 2))
        with pytest.raises(ValidationError, match="b"):
            validate_scheme(layers, (3, 7))  # min_dim of b is 6
        with pytest.raises(ValidationError):
            validate_scheme(layers, (2.5, 2))
        with pytest.raises(ValidationError):
            validate_scheme(layers, (True, 2))  # bools are not ranks
        validate_scheme(layers, (8, FULL))  # rank may equal min_dim

    def test_non_searchable_layers_excluded_from_scheme(self):
        layers = (
            LayerSpec(name="w", rows=4, cols=4),
            LayerSpec(name="emb", rows=100, cols=6, searchable=False),
        )
        validate_scheme(layers, (2,))
        assert [s.name for s in searchable_layers(layers)] == ["w"]


class TestSpeedupAndBreakdown:
    def test_hand_computed_speedup(self):
        layers = (
            LayerSpec(name="l1", rows=1024, cols=4096),
            LayerSpec(name="l2", rows=1024, cols=1024),
        )
        scheme = (72, 16)
        new = 72 * 5120 + 16 * 2048
        assert scheme_speedup(layers, scheme) == pytest.approx((4_194_304 + 1_048_576) / new)

    def test_unsearched_layers_count_dense(self):
        layers = (
            LayerSpec(name="l1", rows=10, cols=10),
            LayerSpec(name="ro", rows=20, cols=20, searchable=False),
        )
        assert scheme_speedup(layers, (FULL,)) == 1.0
        bd = flops_breakdown(layers, (2,))
        assert bd.rows[1].choice is FULL
        assert bd.rows[1].searchable is False
        assert bd.new_total == 2 * 20 + 400

    def test_breakdown_totals_consistent(self):
        layers = (
            LayerSpec(name="l1", rows=32, cols=256),
            LayerSpec(name="l2", rows=256, cols=256),
            LayerSpec(name="l3", rows=256, cols=10),
        )
        scheme = (8, 30, FULL)
        bd = flops_breakdown(layers, scheme)
        assert bd.orig_total == sum(r.orig_flops for r in bd.rows)
        assert bd.new_total == sum(r.new_flops for r in bd.rows)
        assert bd.overall_speedup == pytest.approx(bd.orig_total / bd.new_total)
        assert bd.overall_speedup == pytest.approx(scheme_speedup(layers, scheme))
        assert all(r.layer_speedup == pytest.approx(r.orig_flops / r.new_flops) for r in bd.rows)

    def test_non_beneficial_rank_flagged(self):
        layers = (LayerSpec(name="sq", rows=4, cols=4),)
        bd = flops_breakdown(layers, (3,))  # 3*8 = 24 > 16
        assert not bd.rows[0].beneficial
        assert bd.overall_speedup < 1.0


class TestApplyScheme:
    def _weights(self, rng):
        layers = _two_layers()
        weights = {
            "a": rng.standard_normal((8, 12)),
            "b": rng.standard_normal((6, 6)),
        }
        return layers, weights

    def test_full_reconstruction_shapes_and_purity(self):
        rng = np.random.default_rng(0)
        layers, weights = self._weights(rng)
        before = {k: v.copy() for k, v in weights.items()}
        out = apply_scheme_full(layers, weights, (3, FULL))
        assert out["a"].shape == (8, 12)
        np.testing.assert_array_equal(out["b"], weights["b"])
        assert out["b"] is not weights["b"]
        for k in weights:
            np.testing.assert_array_equal(weights[k], before[k])

    def test_rank_k_reconstruction_matches_direct_truncation(self):
        rng = np.random.default_rng(1)
        layers, weights = self._weights(rng)
        out = apply_scheme_full(layers, weights, (3, 2))
        want = reconstruct(truncate(svd(weights["a"]), 3))
        np.testing.assert_allclose(out["a"], want, atol=1e-12)

    def test_factorized_matches_full_product(self):
        rng = np.random.default_rng(2)
        layers, weights = self._weights(rng)
        dense = apply_scheme_full(layers, weights, (4, 2))
        pairs = apply_scheme_factorized(layers, weights, (4, 2))
        assert isinstance(pairs["a"], TruncatedFactors)
        assert pairs["a"].rank == 4
        np.testing.assert_allclose(pairs["a"].u_k @ pairs["a"].w_k, dense["a"], atol=1e-10)
        np.testing.assert_allclose(pairs["b"].u_k @ pairs["b"].w_k, dense["b"], atol=1e-10)

    def test_factorized_full_choice_stays_dense(self):
        rng = np.random.default_rng(3)
        layers, weights = self._weights(rng)
        pairs = apply_scheme_factorized(layers, weights, (FULL, 2))
        assert isinstance(pairs["a"], np.ndarray)

    def test_missing_or_misshapen_weights(self):
        layers = _two_layers()
        with pytest.raises(ValidationError, match="a"):
            apply_scheme_full(layers, {"b": np.zeros((6, 6))}, (1, 1))
        bad = {"a": np.zeros((8, 11)), "b": np.zeros((6, 6))}
        with pytest.raises(ValidationError, match="shape"):
            apply_scheme_full(layers, bad, (1, 1))


class TestSvdCache:
    def test_cache_hit_returns_same_object(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((7, 5))
        cache = SvdCache()
        first = cache.get("w", m)
        second = cache.get("w", m.copy())
        assert first is second

    def test_content_change_recomputes(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((7, 5))
        cache = SvdCache()
        first = cache.get("w", m)
        changed = m.copy()
        changed[0, 0] += 1.0
        second = cache.get("w", changed)
        assert first is not second
        assert not np.allclose(first.sigma, second.sigma)

    def test_name_is_part_of_key(self):
        m = np.eye(4)
        cache = SvdCache()
        assert cache.get("x", m) is not cache.get("y", m)

    def test_factors_for_covers_searchable_layers(self):
        layers = (
            LayerSpec(name="w", rows=4, cols=4),
            LayerSpec(name="emb", rows=5, cols=5, searchable=False),
        )
        cache = SvdCache()
        factors = cache.factors_for(layers, {"w": np.eye(4), "emb": np.eye(5)})
        assert set(factors) == {"w"}
