"""Reference model tests: data generation, training, gradients, evaluation.

Exact values (label histograms, error pins) were computed once on the
seeded fixtures and frozen; they guard the deterministic data and
training streams against regressions.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from lrfc.compression import FULL, apply_scheme_factorized
from lrfc.exceptions import NumericError, ValidationError
from lrfc.linalg import TruncatedFactors
from lrfc.model import (
    INPUT_DIM,
    NUM_CLASSES,
    CompressibleModel,
    TrainConfig,
    epoch_learning_rate,
    evaluate,
    generate_dataset,
    init_reference_model,
    loss_and_gradients,
    loss_value,
    reference_layer_specs,
    train,
    _teacher_weights,
)

from conftest import GRADCHECK_ROWS

TRAIN_LABEL_HIST = [470, 312, 304, 523, 354, 185, 343, 450, 755, 400]
TEST_LABEL_HIST = [95, 76, 84, 150, 112, 52, 85, 119, 171, 80]
UNTRAINED_ERROR = 0.9189453125
BAKED_ERROR = 0.2529296875
EPOCH10_TRAIN_ERROR = 0.146484375


class TestDataset:
    def test_shapes_and_split(self, datasets):
        train_d, test_d = datasets
        assert train_d.inputs.shape == (4096, INPUT_DIM)
        assert test_d.inputs.shape == (1024, INPUT_DIM)
        assert train_d.split == "train" and test_d.split == "test"

    def test_pinned_label_histograms(self, datasets):
        train_d, test_d = datasets
        assert np.bincount(train_d.labels, minlength=10).tolist() == TRAIN_LABEL_HIST
        assert np.bincount(test_d.labels, minlength=10).tolist() == TEST_LABEL_HIST

    def test_class_frequencies_reasonable(self, datasets):
        for data in datasets:
            freq = np.bincount(data.labels, minlength=10) / len(data.labels)
            assert (freq >= 0.02).all() and (freq <= 0.30).all()

    def test_deterministic(self, datasets):
        again = generate_dataset(42)
        for a, b in zip(datasets, again):
            assert a.inputs.tobytes() == b.inputs.tobytes()
            assert a.labels.tobytes() == b.labels.tobytes()

    def test_no_duplicate_rows_across_splits(self, datasets):
        train_d, test_d = datasets
        seen = {row.tobytes() for row in train_d.inputs}
        assert not any(row.tobytes() in seen for row in test_d.inputs)

    def test_labels_match_teacher(self, datasets):
        # The teacher network itself must score error 0 on its own labels.
        w1, w2 = _teacher_weights(42)

        class Teacher:
            def forward(self, inputs):
                return np.tanh(inputs @ w1) @ w2

        for data in datasets:
            assert evaluate(Teacher(), data) == 0.0


class TestInit:
    def test_layer_specs(self):
        specs = reference_layer_specs()
        assert [s.name for s in specs] == ["w1", "w2", "w3", "w4"]
        assert [(s.rows, s.cols) for s in specs] == [
            (32, 256), (256, 256), (256, 256), (256, 10)]
        assert sum(s.dense_flops for s in specs) == 141_824

    def test_untrained_error_near_chance(self, test_data):
        model = init_reference_model(42)
        err = evaluate(model, test_data)
        assert err == UNTRAINED_ERROR
        assert 0.80 <= err <= 0.97

    def test_seed_determinism(self, test_data):
        a = init_reference_model(7)
        b = init_reference_model(7)
        assert evaluate(a, test_data) == evaluate(b, test_data)
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_params_on_float32_grid(self):
        model = init_reference_model(0)
        for value in model.params.values():
            assert np.array_equal(value, value.astype(np.float32).astype(np.float64))


class TestForward:
    def test_factorized_full_rank_matches_dense(self, baked_model, test_data, baked_cache):
        layers = baked_model.layer_specs
        scheme = tuple(s.min_dim for s in layers)
        pairs = apply_scheme_factorized(layers, baked_model.weight_matrices(), scheme, baked_cache)
        factorized = baked_model.with_weights(pairs)
        dense_out = baked_model.forward(test_data.inputs)
        fact_out = factorized.forward(test_data.inputs)
        assert np.max(np.abs(dense_out - fact_out)) <= 1e-6

    def test_non_finite_activations_rejected(self, test_data):
        model = init_reference_model(0)
        model.params["w1"] = model.params["w1"] * np.inf
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError):
                evaluate(model, test_data)

    def test_scheme_and_storage_introspection(self, baked_model, baked_cache):
        layers = baked_model.layer_specs
        pairs = apply_scheme_factorized(
            layers, baked_model.weight_matrices(), (8, 32, 32, 8), baked_cache)
        model = baked_model.with_weights(pairs)
        assert model.scheme() == (8, 32, 32, 8)
        assert model.storage("w1") == "factorized"
        assert not model.fully_dense
        assert baked_model.fully_dense
        with pytest.raises(ValidationError):
            model.weight_matrices()


def _numeric_grad(fn, tensor, idx, h=1e-4):
    orig = tensor[idx]
    tensor[idx] = orig + h
    up = fn()
    tensor[idx] = orig - h
    down = fn()
    tensor[idx] = orig
    return (up - down) / (2 * h)


class TestGradients:
    def _check_model(self, model, inputs, labels, rng):
        _, grads = loss_and_gradients(model, inputs, labels)
        fn = lambda: loss_value(model, inputs, labels)
        for name, value in model.params.items():
            if isinstance(value, TruncatedFactors):
                tensors = {f"{name}.u": value.u_k, f"{name}.w": value.w_k}
            else:
                tensors = {name: value}
            for key, tensor in tensors.items():
                flat = tensor.reshape(-1)
                for _ in range(4):
                    idx = int(rng.integers(flat.size))
                    want = _numeric_grad(fn, flat, idx)
                    got = grads[key].reshape(-1)[idx]
                    assert abs(got - want) <= 1e-4 * max(abs(want), 1e-3), (key, idx)

    def test_dense_gradients(self, baked_model, train_data):
        rng = np.random.default_rng(0)
        rows = list(GRADCHECK_ROWS)
        self._check_model(
            baked_model.copy(), train_data.inputs[rows], train_data.labels[rows], rng)

    def test_factorized_gradients(self, baked_model, train_data, baked_cache):
        rng = np.random.default_rng(1)
        layers = baked_model.layer_specs
        pairs = apply_scheme_factorized(
            layers, baked_model.weight_matrices(), (8, 32, FULL, 8), baked_cache)
        model = baked_model.with_weights(pairs)
        rows = list(GRADCHECK_ROWS)
        self._check_model(model, train_data.inputs[rows], train_data.labels[rows], rng)


class TestTrain:
    def test_zero_epochs_is_identity(self, train_data):
        model = init_reference_model(3)
        result = train(model, train_data, TrainConfig(epochs=0))
        assert result.losses == ()
        for name in model.params:
            assert result.model.params[name].tobytes() == model.params[name].tobytes()
            assert result.model.params[name] is not model.params[name]

    def test_pinned_early_curve(self, train_data):
        # First ten epochs of the baseline bake stream.
        model = init_reference_model(42)
        result = train(model, train_data, TrainConfig(epochs=10, seed=42))
        assert result.errors[9] == EPOCH10_TRAIN_ERROR
        assert all(b < a for a, b in zip(result.errors, result.errors[1:]))
        assert len(result.losses) == len(result.errors) == len(result.learning_rates) == 10

    def test_baked_error_pinned(self, baked_model, test_data):
        assert evaluate(baked_model, test_data) == BAKED_ERROR

    def test_training_deterministic(self, train_data, test_data):
        cfg = TrainConfig(epochs=3, seed=11)
        a = train(init_reference_model(5), train_data, cfg)
        b = train(init_reference_model(5), train_data, cfg)
        for name in a.model.params:
            assert a.model.params[name].tobytes() == b.model.params[name].tobytes()
        assert a.losses == b.losses

    def test_result_snapped_to_float32_grid(self, train_data):
        result = train(init_reference_model(1), train_data, TrainConfig(epochs=1))
        for value in result.model.params.values():
            assert np.array_equal(value, value.astype(np.float32).astype(np.float64))

    def test_divergence_raises_with_epoch(self, train_data):
        model = init_reference_model(0)
        cfg = TrainConfig(epochs=5, learning_rate=1e4)
        # overflow on the way to the divergence check is the point here
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError) as info:
                train(model, train_data, cfg)
        assert isinstance(info.value.detail, int)

    def test_mode_full_requires_dense(self, baked_model, train_data, baked_cache):
        layers = baked_model.layer_specs
        pairs = apply_scheme_factorized(
            layers, baked_model.weight_matrices(), (8, 32, 32, 8), baked_cache)
        model = baked_model.with_weights(pairs)
        with pytest.raises(ValidationError):
            train(model, train_data, TrainConfig(epochs=1, mode="full"))

    def test_factorized_training_keeps_ranks(self, baked_model, train_data, baked_cache):
        layers = baked_model.layer_specs
        scheme = (8, 32, 32, 8)
        pairs = apply_scheme_factorized(
            layers, baked_model.weight_matrices(), scheme, baked_cache)
        model = baked_model.with_weights(pairs)
        result = train(model, train_data, TrainConfig(epochs=2, mode="factorized"))
        assert result.model.scheme() == scheme
        for i, rank in enumerate(scheme):
            pair = result.model.params[f"w{i + 1}"]
            assert pair.u_k.shape[1] == rank and pair.w_k.shape[0] == rank

    def test_factorized_training_improves_loss(self, baked_model, train_data, baked_cache):
        layers = baked_model.layer_specs
        pairs = apply_scheme_factorized(
            layers, baked_model.weight_matrices(), (16, 64, 64, 8), baked_cache)
        model = baked_model.with_weights(pairs)
        before = loss_value(model, train_data.inputs, train_data.labels)
        result = train(model, train_data, TrainConfig(epochs=5, mode="factorized"))
        after = loss_value(result.model, train_data.inputs, train_data.labels)
        assert after < before


class TestSchedule:
    def test_constant(self):
        cfg = TrainConfig(epochs=4, learning_rate=0.3)
        assert [epoch_learning_rate(cfg, e) for e in range(4)] == [0.3] * 4

    def test_cyclic_values(self):
        cfg = TrainConfig(epochs=8, learning_rate=0.1, lr_schedule="cyclic", reset_period=4)
        got = [epoch_learning_rate(cfg, e) for e in range(8)]
        want_one = [0.05 * (1.0 + math.cos(math.pi * t / 4)) for t in range(4)]
        assert got == want_one + want_one  # reset every period
        assert got[0] == 0.1

    def test_cyclic_reset_count_in_training(self, train_data):
        model = init_reference_model(2)
        cfg = TrainConfig(epochs=6, learning_rate=0.05, lr_schedule="cyclic",
                          reset_period=3, seed=0)
        result = train(model, train_data, cfg)
        resets = sum(1 for lr in result.learning_rates if lr == cfg.learning_rate)
        assert resets == 2  # budget / reset_period

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValidationError):
            TrainConfig(epochs=1, batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(epochs=1, learning_rate=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(epochs=1, lr_schedule="linear")
        with pytest.raises(ValidationError):
            TrainConfig(epochs=1, mode="sparse")
        with pytest.raises(ValidationError):
            TrainConfig(epochs=4, lr_schedule="cyclic")
        with pytest.raises(ValidationError):
            TrainConfig(epochs=4, lr_schedule="cyclic", reset_period=3)
        TrainConfig(epochs=4, lr_schedule="cyclic", reset_period=2)


class TestEvaluatePurity:
    def test_evaluate_does_not_disturb_training(self, train_data, test_data):
        cfg = TrainConfig(epochs=2, seed=9)
        a = train(init_reference_model(8), train_data, cfg)
        model = init_reference_model(8)
        for _ in range(3):
            evaluate(model, test_data)
        b = train(model, train_data, cfg)
        for name in a.model.params:
            assert a.model.params[name].tobytes() == b.model.params[name].tobytes()
