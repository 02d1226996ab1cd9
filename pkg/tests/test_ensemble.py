import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confidence_nets.data import RawDataset, fit_normalizer, normalize, prepare_split
from confidence_nets.ensemble import (MemoryBank, ModelConfig, build_error_dataset, compute_omega,
                                      dissimilarity, dissimilarity_batch, predict_interval,
                                      predict_intervals, predict_normalized, train_confidence_net)
from confidence_nets.gbt import GradientBoostedForest, TreeParams
from confidence_nets.nn import NeuralNet, TrainConfig


def brute_distance(x, memory):
    best = np.inf
    for row in memory:
        best = min(best, np.sqrt(sum((a - b) ** 2 for a, b in zip(x, row))))
    return best / np.sqrt(len(x))


class TestOmega:
    def test_perfect(self):
        assert compute_omega([0.2, 0.9], [0.2, 0.9]) == 1.0

    def test_overestimate(self):
        assert compute_omega([0.6, 0.6], [0.5, 0.5]) == pytest.approx(0.9, abs=1e-15)

    def test_underestimate(self):
        assert compute_omega([0.4, 0.4], [0.5, 0.5]) == pytest.approx(1.1, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_omega([], [])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 8, elements=st.floats(0, 1)), arrays(np.float64, 8, elements=st.floats(0, 1)),
           st.floats(-1, 1))
    def test_shift(self, p, y, c):
        assert compute_omega(p + c, y) == pytest.approx(compute_omega(p, y) - c, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(0, 1)), arrays(np.float64, 6, elements=st.floats(0, 1)))
    def test_positive_for_unit_targets_and_predictions(self, p, y):
        assert compute_omega(p, y) > 0


class TestErrorDataset:
    def test_perfect_net(self, rng):
        X = rng.random((4, 2))
        y = rng.random(4)
        _, E = build_error_dataset(X, y, y, 1.0)
        assert np.all(E == 0)

    def test_value(self):
        _, E = build_error_dataset([[0.0]], [1.0], [0.85], 0.9)
        assert E[0] == pytest.approx(0.05, abs=1e-15)

    def test_elementwise(self, rng):
        X, p, y = rng.random((9, 3)), rng.random(9), rng.random(9)
        Xe, E = build_error_dataset(X, p, y, 1.07)
        assert Xe is X or np.array_equal(Xe, X)
        for i in range(9):
            assert E[i] == 1.07 * p[i] - y[i]

    def test_omega_one_gives_residuals(self, rng):
        p, y = rng.random(5), rng.random(5)
        np.testing.assert_array_equal(build_error_dataset(np.zeros((5, 1)), p, y, 1.0)[1], p - y)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            build_error_dataset(np.zeros((3, 1)), [1, 2], [1, 2, 3], 1.0)


class TestDissimilarity:
    def test_memorized_row(self, rng):
        mem = MemoryBank(rng.random((10, 3)), 0.0)
        assert dissimilarity(mem.stored_inputs[4], mem) == 0.0

    def test_closed_form(self):
        assert dissimilarity(np.array([1.0, 1.0]), MemoryBank(np.zeros((1, 2)), 0.0)) == pytest.approx(1.0, abs=1e-15)

    def test_brute_force(self, rng):
        mem = MemoryBank(rng.random((20, 4)), 0.0)
        for x in rng.random((10, 4)):
            assert dissimilarity(x, mem) == pytest.approx(brute_distance(x, mem.stored_inputs), abs=1e-12)

    def test_true_minimum(self, rng):
        stored = rng.random((15, 3))
        x = rng.random(3)
        d = dissimilarity(x, MemoryBank(stored, 0.0))
        assert all(d <= np.linalg.norm(x - s) / np.sqrt(3) + 1e-15 for s in stored)
        assert any(d == pytest.approx(np.linalg.norm(x - s) / np.sqrt(3), abs=1e-15) for s in stored)

    def test_radial_from_all_rows(self):
        stored = np.array([[0.0, 0.0], [0.1, 0.0]])
        mem = MemoryBank(stored, 0.0)
        centre = stored.mean(axis=0)
        d = [dissimilarity(centre + s * np.array([0.0, 1.0]), mem) for s in (0.5, 1, 2, 5)]
        assert all(b >= a for a, b in zip(d, d[1:]))

    def test_errors(self, rng):
        with pytest.raises(ValueError, match="empty"):
            dissimilarity(np.zeros(2), MemoryBank(np.zeros((0, 2)), 0.0))
        with pytest.raises(ValueError, match="dimension"):
            dissimilarity(np.zeros(3), MemoryBank(np.zeros((2, 2)), 0.0))


def stub_model(y_hat, y_c, l_n, n_x=2, target=(0.0, 1.0), memory=None):
    """A model whose network and forest return constants (zero weights, output bias = y_hat)."""
    rng = np.random.default_rng(0)
    net = NeuralNet.initialize(n_x, rng, conv_channels=2, hidden_units=3)
    for p in net.parameters():
        p[...] = 0.0
    net.output.b[0] = y_hat
    forest = GradientBoostedForest([], 0.1, y_c, n_x, TreeParams(n_trees=0))
    rows = np.vstack([np.zeros((2, n_x)), np.ones((2, n_x))])
    rows = np.column_stack([rows, [target[0], target[1], target[0], target[1]]])
    params = fit_normalizer(rows, n_x)
    mem = MemoryBank(np.zeros((1, n_x)) if memory is None else memory, l_n)
    from confidence_nets.ensemble import ConfidenceNetModel
    return ConfidenceNetModel(net, forest, mem, 1.0, params, [f"x{i}" for i in range(n_x)], "t")


class TestPredictInterval:
    def test_degenerate(self):
        iv = predict_interval(stub_model(0.4, 0.0, 0.0), np.zeros(2))
        assert iv.lower == iv.upper == iv.y_f == pytest.approx(0.4, abs=1e-15)

    def test_worked_example(self):
        # x at distance 0.05 from the single memory row: |dx| * sqrt(2) / sqrt(2)
        x = np.array([0.05, 0.05])
        iv = predict_interval(stub_model(0.7, 0.1, 0.02), x)
        assert iv.d_e == pytest.approx(0.05, abs=1e-15)
        assert iv.y_f == pytest.approx(0.6, abs=1e-15)
        assert iv.half_width == pytest.approx(0.13, abs=1e-15)
        assert (iv.lower, iv.upper) == (pytest.approx(0.47, abs=1e-15), pytest.approx(0.73, abs=1e-15))

    def test_negative_expected_variation(self):
        iv = predict_interval(stub_model(0.5, -0.1, 0.05), np.zeros(2))
        assert iv.half_width == pytest.approx(0.15, abs=1e-15)

    def test_original_units(self):
        m = stub_model(0.7, 0.1, 0.02, target=(10.0, 30.0))
        iv = predict_interval(m, np.array([0.05, 0.05]))
        assert iv.y_f == pytest.approx(10 + 20 * 0.6, abs=1e-12)
        assert (iv.lower, iv.upper) == (pytest.approx(10 + 20 * 0.47, abs=1e-12), pytest.approx(10 + 20 * 0.73, abs=1e-12))

    def test_schema_mismatch(self):
        with pytest.raises(ValueError, match="dimension|schema"):
            predict_interval(stub_model(0.1, 0.0, 0.0), np.zeros(3))


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 5, size=(60, 3))
    y = X @ np.array([1.0, -0.5, 2.0]) + rng.normal(0, 0.3, 60)
    raw = RawDataset(["a", "b", "c", "t"], np.column_stack([X, y]), 3)
    train, test, _ = prepare_split(raw, 0.8, 0)
    cfg = ModelConfig(TrainConfig(epochs=30, batch_size=8, hidden_units=16, conv_channels=4),
                      TreeParams(n_trees=20, max_depth=3))
    return train_confidence_net(train, cfg, 5), train, test, raw


class TestTrainedModel:
    def test_interval_invariants(self, trained):
        model, _, test, _ = trained
        for iv in predict_normalized(model, test.X):
            assert iv.lower <= iv.y_f <= iv.upper
            assert iv.upper - iv.y_f == pytest.approx(iv.y_f - iv.lower, abs=1e-12)
            assert iv.half_width >= 0

    def test_units_consistent(self, trained):
        model, _, test, _ = trained
        params = model.normalization
        lo, hi = params.mins[params.target_index], params.maxs[params.target_index]
        for iv in predict_normalized(model, test.X):
            y_f_norm = iv.y_hat - iv.y_c
            half_norm = abs(iv.y_c + iv.d_e - iv.l_n)
            assert iv.lower == pytest.approx((y_f_norm - half_norm) * (hi - lo) + lo, abs=1e-9)
            assert iv.upper == pytest.approx((y_f_norm + half_norm) * (hi - lo) + lo, abs=1e-9)

    def test_raw_and_normalized_paths_agree(self, trained):
        model, _, test, raw = trained
        p = model.normalization
        X_raw = test.X * (p.maxs[:3] - p.mins[:3]) + p.mins[:3]
        a = predict_intervals(model, X_raw)
        b = predict_normalized(model, test.X)
        for u, v in zip(a, b):
            assert u.y_f == pytest.approx(v.y_f, abs=1e-9)

    def test_memory_hits(self, trained):
        model, train, _, _ = trained
        assert all(iv.d_e == 0.0 for iv in predict_normalized(model, train.X))
        assert model.memory.size == train.n_samples

    def test_pure(self, trained):
        model, _, test, _ = trained
        assert predict_normalized(model, test.X) == predict_normalized(model, test.X)

    def test_omega_and_hash(self, trained):
        model, train, _, _ = trained
        assert model.omega > 0
        assert model.split_hash == train.content_hash()

    def test_deterministic(self, trained):
        from confidence_nets.modelfile import dumps
        _, train, _, _ = trained
        cfg = ModelConfig(TrainConfig(epochs=5, hidden_units=8, conv_channels=2), TreeParams(n_trees=5))
        assert dumps(train_confidence_net(train, cfg, 9)) == dumps(train_confidence_net(train, cfg, 9))

    def test_memory_fraction(self, trained):
        _, train, _, _ = trained
        cfg = ModelConfig(TrainConfig(epochs=2, hidden_units=8, conv_channels=2), TreeParams(n_trees=2),
                          memory_fraction=0.25)
        m = train_confidence_net(train, cfg, 1)
        assert m.memory.size == round(0.25 * train.n_samples)
        stored = {tuple(r) for r in train.X}
        assert all(tuple(r) in stored for r in m.memory.stored_inputs)

    def test_loss_mode(self, trained):
        _, train, _, _ = trained
        cfg = ModelConfig(TrainConfig(epochs=3, hidden_units=8, conv_channels=2), TreeParams(n_trees=2),
                          l_n_mode="loss")
        m = train_confidence_net(train, cfg, 1)
        assert m.l_n == m.report.final_loss
        with pytest.raises(ValueError):
            ModelConfig(l_n_mode="median")


def test_constant_dataset_omega_near_one():
    rng = np.random.default_rng(0)
    X = rng.random((40, 3))
    rows = np.column_stack([X, np.zeros(40)])
    rows[0, 3], rows[1, 3] = -1.0, 1.0  # pins the target range so y = 0 maps to 0.5
    train = normalize(rows[2:], fit_normalizer(rows, 3))
    assert np.allclose(train.y, 0.5)
    m = train_confidence_net(train, ModelConfig(trees=TreeParams(n_trees=50)), 0)
    assert abs(m.omega - 1) < 0.05
    assert np.max(np.abs(m.forest.predict(train.X))) < 0.05


def test_frcm_shape_trains():
    rng = np.random.default_rng(7)
    rows = rng.uniform(0, 100, size=(76, 5))
    train, _, _ = prepare_split(RawDataset([f"c{i}" for i in range(5)], rows, 4), 0.9, 0)
    cfg = ModelConfig(TrainConfig(epochs=20), TreeParams(n_trees=50))
    m = train_confidence_net(train, cfg, 0)
    assert m.n_x == 4 and m.memory.size == 68
