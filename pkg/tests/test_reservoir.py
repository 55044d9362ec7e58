import numpy as np
import pytest

from exceptions import ConfigError, DimensionError, NumericalError
from reservoir import (
    NoiseLocation,
    ReservoirKind,
    ReservoirSpec,
    Topology,
    draw_inputs,
    ensemble_run,
    fading_memory_probe,
    generate_reservoir,
    run,
    step,
)
from tests.conftest import SQRT3, delay_line, identity_channel


def test_generate_reservoir_hits_spectral_radius():
    spec = generate_reservoir(ReservoirKind.ECHO_STATE, 30, spectral_radius=0.9, seed=11)
    assert spec.state_dim == 30
    assert spec.input_dim == 1
    assert spec.spectral_radius == pytest.approx(0.9, abs=1e-9)


def test_generate_reservoir_is_seeded():
    a = generate_reservoir(ReservoirKind.LINEAR, 6, seed=5)
    b = generate_reservoir(ReservoirKind.LINEAR, 6, seed=5)
    c = generate_reservoir(ReservoirKind.LINEAR, 6, seed=6)
    np.testing.assert_array_equal(a.recurrent_matrix, b.recurrent_matrix)
    assert not np.array_equal(a.recurrent_matrix, c.recurrent_matrix)


def test_delay_line_structure():
    spec = delay_line(4)
    np.testing.assert_array_equal(spec.recurrent_matrix, np.eye(4, k=-1))
    np.testing.assert_allclose(spec.input_matrix[:, 0], [SQRT3, 0, 0, 0])
    assert spec.spectral_radius == 0.0
    assert spec.topology is Topology.DELAY_LINE


def test_delay_line_outputs_are_scaled_delayed_inputs():
    X = run(delay_line(3), input_seed=4, T=200, washout=5)
    U = draw_inputs(1, 205, 4)[0]
    for k in range(3):
        np.testing.assert_allclose(X[k], SQRT3 * U[5 - k:205 - k], rtol=1e-15)


def test_identity_channel_reproduces_inputs():
    X = run(identity_channel(), input_seed=3, T=50, washout=5)
    np.testing.assert_array_equal(X, draw_inputs(1, 55, 3)[:, 5:])


def test_inputs_are_uniform_on_unit_interval():
    U = draw_inputs(2, 10_000, 0)
    assert U.shape == (2, 10_000)
    assert U.min() >= -1.0 and U.max() <= 1.0
    assert abs(U.mean()) < 0.05
    assert np.var(U) == pytest.approx(1 / 3, abs=0.02)


def test_echo_state_outputs_are_bounded():
    spec = generate_reservoir(ReservoirKind.ECHO_STATE, 10, spectral_radius=1.2, input_scale=2.0, seed=1)
    X = run(spec, input_seed=1, T=500, washout=10)
    assert np.abs(X).max() <= 1.0


def test_noiseless_ensemble_has_identical_realizations():
    ensemble = ensemble_run(generate_reservoir(ReservoirKind.LINEAR, 3, seed=2), 9, T=100, washout=10, R=4)
    assert not ensemble.noisy
    for r in range(4):
        np.testing.assert_array_equal(ensemble.realizations[r], ensemble.realizations[0])
    np.testing.assert_array_equal(ensemble.residuals, 0.0)


@pytest.mark.parametrize("location", [NoiseLocation.STATE, NoiseLocation.OUTPUT])
def test_ensemble_is_reproducible(location):
    spec = generate_reservoir(ReservoirKind.ECHO_STATE, 3, seed=2, noise_location=location, noise_covariance=0.01)
    a = ensemble_run(spec, 9, T=300, washout=10, R=3)
    b = ensemble_run(spec, 9, T=300, washout=10, R=3)
    c = ensemble_run(spec, 9, T=300, washout=10, R=3, noise_seed=10)
    np.testing.assert_array_equal(a.realizations, b.realizations)
    np.testing.assert_array_equal(a.inputs, c.inputs)
    assert not np.allclose(a.realizations, c.realizations)
    assert not np.allclose(a.realizations[0], a.realizations[1])


@pytest.mark.parametrize("location", [NoiseLocation.STATE, NoiseLocation.OUTPUT])
def test_run_reproduces_one_realization_of_the_ensemble(location):
    spec = generate_reservoir(ReservoirKind.LINEAR, 3, seed=2, noise_location=location, noise_covariance=0.04)
    ensemble = ensemble_run(spec, 5, T=400, washout=20, R=3)
    single = run(spec, 5, T=400, washout=20, realization=2)
    np.testing.assert_allclose(single, ensemble.realizations[2], rtol=1e-12, atol=1e-12)


def test_output_noise_leaves_mean_dynamics_untouched():
    spec = generate_reservoir(ReservoirKind.LINEAR, 2, seed=8)
    noisy = spec.with_noise(NoiseLocation.OUTPUT, 0.25 * np.eye(2))
    clean = run(spec, 1, T=20_000, washout=10)
    ensemble = ensemble_run(noisy, 1, T=20_000, washout=10, R=2)
    residual = ensemble.realizations[0] - clean
    np.testing.assert_allclose(np.var(residual, axis=1), [0.25, 0.25], rtol=0.05)


def test_ensemble_window_drops_leading_samples():
    ensemble = ensemble_run(delay_line(2), 1, T=50, washout=3, R=2)
    window = ensemble.window(5)
    assert window.T == 45
    assert window.washout == 8
    np.testing.assert_array_equal(window.inputs, ensemble.inputs[:, 5:])
    with pytest.raises(DimensionError):
        ensemble.window(50)


def test_divergent_linear_reservoir_raises_with_step():
    spec = generate_reservoir(ReservoirKind.LINEAR, 6, spectral_radius=1.5, seed=2)
    with pytest.raises(NumericalError) as info:
        ensemble_run(spec, 0, T=1000, washout=1000)
    assert info.value.step is not None
    assert "step" in str(info.value)


@pytest.mark.parametrize("kind, radius, T", [
    (ReservoirKind.LINEAR, 0.5, 300),
    (ReservoirKind.ECHO_STATE, 0.9, 600),
])
def test_fading_memory_probe_passes_for_contracting_reservoirs(kind, radius, T):
    spec = generate_reservoir(kind, 5, spectral_radius=radius, seed=4)
    probe = fading_memory_probe(spec, np.full(5, 0.5), np.full(5, -0.5), T, input_seed=1)
    assert probe.passed
    assert probe.divergence[-1] < 1e-8 * probe.initial_divergence


def test_fading_memory_probe_identical_states():
    spec = generate_reservoir(ReservoirKind.LINEAR, 3, seed=4)
    probe = fading_memory_probe(spec, np.zeros(3), np.zeros(3), 20, input_seed=1)
    assert probe.passed
    assert probe.initial_divergence == 0.0


def test_step_matches_update_rule():
    spec = ReservoirSpec(ReservoirKind.ECHO_STATE, np.array([[0.5, 0.0], [0.1, 0.2]]), np.array([[1.0], [-1.0]]))
    state = np.array([0.2, -0.4])
    expected = np.tanh(spec.recurrent_matrix @ state + spec.input_matrix @ [0.3] + [0.01, 0.02])
    np.testing.assert_allclose(step(state, np.array([0.3]), spec, np.array([0.01, 0.02])), expected)


def test_step_rejects_wrong_input_shape():
    spec = generate_reservoir(ReservoirKind.LINEAR, 3, seed=1)
    with pytest.raises(DimensionError, match="input"):
        step(np.zeros(3), np.zeros(2), spec)


@pytest.mark.parametrize("covariance, error", [
    (np.diag([1.0, -1.0]), ConfigError),
    (np.eye(3), DimensionError),
    ([0.1, -0.2], ConfigError),
])
def test_noise_covariance_validation(covariance, error):
    with pytest.raises(error):
        ReservoirSpec(ReservoirKind.LINEAR, np.zeros((2, 2)), np.ones((2, 1)), NoiseLocation.OUTPUT, covariance)


def test_invalid_run_lengths():
    spec = generate_reservoir(ReservoirKind.LINEAR, 2, seed=1)
    with pytest.raises(ConfigError):
        ensemble_run(spec, 0, T=10, R=0)
    with pytest.raises(ConfigError):
        run(spec, 0, T=0)


def test_step_hand_recursion():
    spec = ReservoirSpec(ReservoirKind.LINEAR, np.array([[0.5]]), np.array([[1.0]]))
    state, outputs = np.zeros(1), []
    for u in (1.0, -1.0, 1.0):
        state = step(state, np.array([u]), spec)
        outputs.append(state[0])
    assert outputs == [1.0, -0.5, 0.75]


def test_zero_recurrence_identity_input_passes_inputs_through():
    spec = ReservoirSpec(ReservoirKind.LINEAR, np.zeros((2, 2)), np.eye(2))
    np.testing.assert_array_equal(run(spec, input_seed=8, T=40, washout=0), draw_inputs(2, 40, 8))


def test_single_realization_ensemble():
    spec = delay_line(2, [0.3, 0.3])
    ensemble = ensemble_run(spec, 5, T=200, washout=10, R=1)
    assert ensemble.noisy
    np.testing.assert_array_equal(ensemble.mean, ensemble.realizations[0])
    np.testing.assert_array_equal(ensemble.residuals, 0.0)


def test_fading_memory_probe_exact_geometric_decay():
    spec = ReservoirSpec(ReservoirKind.LINEAR, 0.5 * np.eye(3), np.ones((3, 1)))
    s0_a, s0_b = np.array([1.0, -2.0, 0.5]), np.array([-1.0, 0.0, 2.5])
    probe = fading_memory_probe(spec, s0_a, s0_b, 20, input_seed=2)
    expected = 0.5 ** np.arange(1, 21) * np.linalg.norm(s0_a - s0_b)
    np.testing.assert_allclose(probe.divergence, expected, rtol=1e-8)


def test_fading_memory_probe_needs_steps():
    spec = generate_reservoir(ReservoirKind.LINEAR, 3, seed=4)
    with pytest.raises(ConfigError):
        fading_memory_probe(spec, np.zeros(3), np.ones(3), 0, input_seed=1)


def test_reservoir_digest_tracks_matrices_and_noise():
    a = generate_reservoir(ReservoirKind.LINEAR, 4, seed=5)
    assert a.digest() == generate_reservoir(ReservoirKind.LINEAR, 4, seed=5).digest()
    assert a.digest() != generate_reservoir(ReservoirKind.LINEAR, 4, seed=6).digest()
    assert a.digest() != a.with_noise(NoiseLocation.OUTPUT, np.full(4, 0.1)).digest()

    ensemble = ensemble_run(a, 3, T=50, washout=5, R=2)
    assert ensemble.provenance(a) == {"R": 2, "seeds": ensemble.seed_manifest, "reservoir_digest": a.digest()}
