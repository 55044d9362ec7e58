from pathlib import Path

import numpy as np
import pytest

from exceptions import ConfigError
from experiment_config import ExperimentConfig, load_config, scalar_paths
from reservoir import NoiseLocation, ReservoirKind, Topology

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults(tmp_path):
    config = load_config(_write(tmp_path, "seed = 4\n"))
    assert config.seed == 4
    assert config.reservoir.kind is ReservoirKind.LINEAR
    assert config.noise.location is NoiseLocation.NONE
    assert config.sim.washout == 1000
    assert config.capacity.n_shuffles == 20
    assert config.sweep is None


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    config = load_config(path)
    assert config.reservoir.n >= 1


def test_unknown_key_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="reservoir.units"):
        load_config(_write(tmp_path, "[reservoir]\nunits = 5\n"))


def test_malformed_toml_reports_line(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        load_config(_write(tmp_path, "seed = 1\n[reservoir\nn = 3\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="Could not read"):
        load_config(tmp_path / "absent.toml")


@pytest.mark.parametrize("text", [
    "[basis]\nmax_degree = 0\n",
    "[sim]\nT = 0\n",
    "[reservoir]\nn = 0\n",
    "[capacity]\nn_shuffles = 5\n",
    "[input]\ndist = \"gaussian\"\n",
    "[noise]\nlocation = \"output\"\n",
    "[noise]\nlocation = \"output\"\nsigma = 0.1\nvariances = [0.1]\n",
    "[sweep]\nparameter = \"noise.sigma\"\nvalues = [0.5]\n",
    "[sweep]\nparameter = \"noise.sigma\"\nvalues = [0.5, nan]\n",
    "[sweep]\nparameter = \"reservoir.kind\"\nvalues = [0.5, 1.0]\n",
    "[sweep]\nparameter = \"reservoir.depth\"\nvalues = [0.5, 1.0]\n",
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_seed_precedence(tmp_path, monkeypatch):
    path = _write(tmp_path, "seed = 4\n")
    monkeypatch.setenv("IPC_LAB_SEED", "99")
    assert load_config(path).seed == 99
    assert load_config(path, seed=7).seed == 7


def test_with_value_revalidates(tmp_path):
    config = load_config(_write(tmp_path, "[sim]\nT = 100\n"))
    longer = config.with_value("sim.T", 500.0)
    assert longer.sim.T == 500 and isinstance(longer.sim.T, int)
    assert config.sim.T == 100
    with pytest.raises(ConfigError):
        config.with_value("sim.T", 0.5)


def test_scalar_paths_cover_nested_numeric_fields():
    paths = scalar_paths()
    assert {"noise.sigma", "reservoir.spectral_radius", "sim.T", "seed"} <= set(paths)
    assert "reservoir.kind" not in paths


def test_build_whitened_reservoir():
    config = load_config(CONFIG_DIR / "whitened.toml")
    spec = config.build_reservoir()
    assert spec.topology is Topology.DELAY_LINE
    np.testing.assert_allclose(np.diag(spec.noise_covariance), [0.1, 0.5, 1.0, 2.0])
    assert config.build_basis().D == 2023


def test_covariance_file_is_relative_to_config(tmp_path):
    np.save(tmp_path / "sigma.npy", np.diag([0.2, 0.3]))
    config = load_config(_write(tmp_path, (
        "[reservoir]\nn = 2\n"
        "[noise]\nlocation = \"state\"\ncovariance_file = \"sigma.npy\"\n"
    )))
    spec = config.build_reservoir()
    np.testing.assert_allclose(spec.noise_covariance, np.diag([0.2, 0.3]))


def test_digest_tracks_content(tmp_path):
    a = load_config(_write(tmp_path, "seed = 1\n", "a.toml"))
    b = load_config(_write(tmp_path, "seed = 1\n", "b.toml"))
    c = load_config(_write(tmp_path, "seed = 2\n", "c.toml"))
    assert a.digest() == b.digest() != c.digest()
    assert isinstance(a, ExperimentConfig)
