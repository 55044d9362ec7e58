import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basis import enumerate_basis, evaluate_targets
from capacity import (
    RegressionMoments,
    bootstrap_stderr,
    capacities,
    capacity,
    ipc_estimate,
    memory_profile,
    null_threshold,
    optimal_error,
    optimal_weights,
    reconstruction_error,
    regression_moments,
    significance_threshold,
    threshold_capacities,
)
from exceptions import ConfigError, DegenerateTargetError, DimensionError
from reservoir import ensemble_run
from tests.conftest import SQRT3


@pytest.mark.parametrize("variance, expected", [(0.25, 0.8), (1.0, 0.5), (4.0, 0.2)])
def test_scalar_noisy_channel(variance, expected):
    rng = np.random.default_rng(17)
    T = 100_000
    y = SQRT3 * rng.uniform(-1, 1, T)
    x = y + np.sqrt(variance) * rng.standard_normal(T)
    assert capacity(x, y) == pytest.approx(expected, abs=0.02)


def test_target_in_span_has_unit_capacity(rng):
    X = rng.standard_normal((3, 1000))
    y = 2.0 * X[0] - X[2]
    assert capacity(X, y) == pytest.approx(1.0, abs=1e-10)


def test_independent_target_has_chance_capacity(rng):
    X = rng.standard_normal((3, 100_000))
    y = rng.standard_normal(100_000)
    assert 0.0 <= capacity(X, y) < 1e-3


def test_degenerate_target(rng):
    with pytest.raises(DegenerateTargetError):
        capacity(rng.standard_normal((2, 100)), np.zeros(100))


def test_misaligned_target(rng):
    with pytest.raises(DimensionError):
        capacity(rng.standard_normal((2, 100)), np.ones(99))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_capacity_is_scale_and_basis_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((4, 500))
    Y = rng.standard_normal((3, 500)) + X[:3]
    G = np.eye(4) + 0.3 * rng.standard_normal((4, 4)) / 2
    base = capacities(X, Y)
    np.testing.assert_allclose(capacities(X, scale * Y), base, atol=1e-8)
    np.testing.assert_allclose(capacities(G @ X, Y), base, atol=1e-8)


def test_duplicated_output_row_leaves_capacities_unchanged(rng):
    X = rng.standard_normal((3, 5000))
    Y = rng.standard_normal((5, 5000)) + X.sum(axis=0)
    np.testing.assert_allclose(capacities(np.vstack([X, X[:1]]), Y), capacities(X, Y), atol=1e-6)


def test_optimal_error_matches_explicit_readout(linear_reservoir):
    ensemble = ensemble_run(linear_reservoir, 2, T=3000, washout=100)
    basis = enumerate_basis(2, 4)
    X = ensemble.realizations[0]
    Y = evaluate_targets(basis, ensemble.inputs)
    window = X[:, basis.max_delay:]
    W = optimal_weights(window, Y)
    explicit = reconstruction_error(window, Y, W)
    assert optimal_error(regression_moments(X, basis, ensemble.inputs)) == pytest.approx(explicit, rel=1e-8)


def test_pooled_moments_reproduce_direct_capacities(linear_reservoir):
    ensemble = ensemble_run(linear_reservoir, 4, T=2000, washout=100)
    basis = enumerate_basis(2, 3)
    X = ensemble.realizations[0]
    moments = regression_moments(X, basis, ensemble.inputs, time_blocks=7, block_size=4)
    assert moments.blocks == 7
    assert moments.samples == 2000 - 3
    direct = capacities(X[:, 3:], evaluate_targets(basis, ensemble.inputs))
    np.testing.assert_allclose(moments.capacities(), direct, atol=1e-10)


def test_concatenated_moments_pool_blocks(linear_reservoir):
    basis = enumerate_basis(1, 2)
    parts = []
    for seed in (1, 2):
        ensemble = ensemble_run(linear_reservoir, seed, T=500, washout=50)
        parts.append(regression_moments(ensemble.realizations[0], basis, ensemble.inputs, time_blocks=5))
    pooled = RegressionMoments.concatenate(parts)
    assert pooled.blocks == 10
    assert pooled.samples == parts[0].samples + parts[1].samples


def test_significance_threshold_needs_enough_shuffles(rng):
    X = rng.standard_normal((2, 500))
    with pytest.raises(ConfigError):
        significance_threshold(X, X[:1], n_shuffles=5)


def test_significance_threshold_is_small_and_deterministic(rng):
    X = rng.standard_normal((3, 20_000))
    targets = rng.standard_normal((4, 20_000))
    a = significance_threshold(X, targets, n_shuffles=20, seed=3)
    b = significance_threshold(X, targets, n_shuffles=20, seed=3)
    assert a == b
    assert 0.0 < a < 10 * 3 / 20_000


def test_threshold_capacities_clips_and_zeroes():
    raw = np.array([-1e-6, 1e-5, 0.3, 1.0 + 1e-9])
    np.testing.assert_allclose(threshold_capacities(raw, 1e-4), [0.0, 0.0, 0.3, 1.0])


def test_noiseless_linear_reservoir_saturates(linear_reservoir):
    ensemble = ensemble_run(linear_reservoir, 6, T=20_000, washout=500)
    basis = enumerate_basis(1, 30)
    X = ensemble.realizations[0]
    threshold = null_threshold(X, basis, ensemble.inputs, n_shuffles=20, seed=6)
    report = ipc_estimate(X, basis, ensemble.inputs, threshold)
    assert 3.9 <= report.ipc_total <= 4.05
    assert report.metadata["D"] == basis.D
    frame = report.to_frame()
    assert list(frame.columns) == ["index", "total_degree", "max_delay", "raw", "thresholded"]
    assert len(frame) == basis.D
    assert set(memory_profile(report)) == {1}


def test_bootstrap_stderr(linear_reservoir):
    ensemble = ensemble_run(linear_reservoir, 6, T=5000, washout=200)
    basis = enumerate_basis(2, 5)
    moments = regression_moments(ensemble.realizations[0], basis, ensemble.inputs)
    a = bootstrap_stderr(moments, 1e-3, resamples=50, seed=1)
    assert a == bootstrap_stderr(moments, 1e-3, resamples=50, seed=1)
    assert 0.0 < a < 0.5
    single = regression_moments(ensemble.realizations[0], basis, ensemble.inputs, time_blocks=1)
    assert bootstrap_stderr(single, 1e-3) == 0.0


def test_memory_profile_groups_by_degree(rng):
    basis = enumerate_basis(2, 1)
    inputs = rng.uniform(-1, 1, (1, 5001))
    Y = evaluate_targets(basis, inputs)
    X = np.hstack([np.zeros((2, 1)), Y[[0, 2]]])
    report = ipc_estimate(X, basis, inputs, threshold=5e-3)
    profile = memory_profile(report)
    assert profile[1] == pytest.approx(1.0, abs=1e-6)
    assert profile[2] == pytest.approx(1.0, abs=1e-6)


def test_optimal_weights_examples(rng):
    X = rng.standard_normal((3, 2000))
    np.testing.assert_allclose(optimal_weights(X, X), np.eye(3), atol=1e-9)

    y = rng.uniform(-1, 1, 1000)
    assert optimal_weights(2.0 * y, y)[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_optimal_weight_of_noisy_scalar_channel():
    rng = np.random.default_rng(23)
    T = 100_000
    y = SQRT3 * rng.uniform(-1, 1, T)
    x = y + rng.standard_normal(T)
    assert optimal_weights(x, y)[0, 0] == pytest.approx(0.5, abs=0.02)


def test_optimal_weights_zero_the_gradient(rng):
    X = rng.standard_normal((4, 2000))
    Y = rng.standard_normal((3, 2000)) + X[:3] - 0.5 * X[3]
    W = optimal_weights(X, Y)
    gradient = -2.0 * X @ (Y - W.T @ X).T / X.shape[1]
    np.testing.assert_allclose(gradient, 0.0, atol=1e-7)


def test_optimal_weights_minimize_the_error(rng):
    X = rng.standard_normal((3, 1000))
    Y = rng.standard_normal((2, 1000)) + X[:2]
    W = optimal_weights(X, Y)
    best = reconstruction_error(X, Y, W)
    for scale in np.geomspace(1e-3, 1.0, 100):
        assert best <= reconstruction_error(X, Y, W + scale * rng.standard_normal(W.shape)) + 1e-12


def test_reconstruction_error_examples(rng):
    Y = rng.standard_normal((3, 500))
    assert reconstruction_error(Y, Y, np.zeros((3, 3))) == pytest.approx(np.sum(Y ** 2) / 500)
    assert reconstruction_error(Y, Y, np.eye(3)) == 0.0


def test_reconstruction_error_rejects_transposed_weights(rng):
    X = rng.standard_normal((2, 400))
    Y = rng.standard_normal((3, 400))
    W = optimal_weights(X, Y)
    with pytest.raises(DimensionError, match="W must be"):
        reconstruction_error(X, Y, W.T)
    y = Y[0]
    assert reconstruction_error(X[:1], y, np.array([0.5])) == reconstruction_error(X[:1], y, np.array([[0.5]]))


def test_significance_threshold_scales_with_inverse_length():
    rng = np.random.default_rng(31)
    thresholds = []
    for T in (10_000, 20_000):
        X = rng.standard_normal((3, T))
        thresholds.append(significance_threshold(X, rng.standard_normal((4, T)), n_shuffles=20, seed=5))
    assert 0.25 <= thresholds[1] / thresholds[0] <= 1.0
