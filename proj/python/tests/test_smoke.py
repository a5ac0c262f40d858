import json

import numpy as np
import pytest

import dsfilter as d


def test_models_and_coefficients():
    assert set(d.models()) >= {"drifted_bm", "bistable", "heat"}
    assert d.f_coefficients("drifted_bm", 0.3) == pytest.approx((0.0, -4.0), abs=1e-12)
    x = 1.7
    f0, f1 = d.f_coefficients("bistable", x)
    assert f0 == pytest.approx(-2.0 + 1.2 * x * x, abs=1e-12)
    assert f1 == pytest.approx(-4.0 * x + 0.8 * x ** 3, abs=1e-12)
    with pytest.raises(d.ConfigError):
        d.f_coefficients("nope", 0.0)


def test_gauss_hermite_moments():
    nodes, weights = d.gauss_hermite(21)
    assert weights.sum() == pytest.approx(1.0)
    assert (weights * nodes ** 2).sum() == pytest.approx(1.0)


def test_quad_filter_close_to_kalman():
    grid = (-8.0, 12.0, 1000)
    y = d.simulate_observations("drifted_bm", 2.0, 20, 1, seed=3)[0]
    quad = d.quad_filter("drifted_bm", y, 2.0, 20, 8, grid)
    kf = d.kalman_filter("drifted_bm", y, 2.0, 20, 8)
    mean, var = kf[(20, 0)]
    exact = d.kalman_density(mean, var, d.grid_nodes(grid))
    assert d.sup_error(quad[(20, 0)], exact, grid) < 0.1


def test_standalone_heat_is_exact():
    grid = (-10.0, 10.0, 2000)
    p = d.standalone_fokker_planck("heat", 1.0, 8, grid)
    assert np.abs(p - d.kalman_density(0.0, 2.0, d.grid_nodes(grid))).max() < 1e-10


def test_particle_filter_readout():
    grid = (-8.0, 12.0, 500)
    y = d.simulate_observations("drifted_bm", 1.0, 2, 1, seed=5)[0]
    out = d.particle_filter("drifted_bm", y, 1.0, 2, 1, grid, particles=2000, seed=1)
    assert sorted(out) == [(0, 0), (1, 0), (2, 0)]
    mass = np.trapezoid(out[(2, 0)], d.grid_nodes(grid))
    assert mass == pytest.approx(1.0, abs=0.01)


def test_network_and_serialization():
    net = d.EnergyNetwork.random(3, 1, 8, 2, seed=4)
    x = np.random.default_rng(0).normal(size=(3, 5))
    v, g = net.density_with_grad(x)
    assert (v > 0).all() and g.shape == (1, 5)
    back = d.EnergyNetwork.deserialize(net.serialize())
    assert back == net
    with pytest.raises(d.IoError):
        d.EnergyNetwork.deserialize("garbage")


def test_train_save_load(tmp_path):
    cfg = d.TrainConfig()
    cfg.M, cfg.batch_size, cfg.epochs, cfg.width = 500, 128, 2, 4
    grid = (-8.0, 12.0, 200)
    p = d.train_pipeline("drifted_bm", 0.5, 2, 2, cfg, grid, seed=3)
    assert p.network_count == 4
    y = d.simulate_observations("drifted_bm", 0.5, 2, 1, seed=9)[0]
    p.save(tmp_path / "pipe")
    q = d.load_pipeline(tmp_path / "pipe")
    np.testing.assert_array_equal(p.eval_grid(2, 0, y), q.eval_grid(2, 0, y))
    assert p.eval(0, 0, 0.1, y) > 0


def test_run_simulate_and_errors(tmp_path):
    out = tmp_path / "sim"
    d.run("simulate", json.dumps({"model": "drifted_bm", "K": 3, "T": 0.3, "sequences": 2}), [f"output={out}"])
    assert (out / "obs_0000.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    with pytest.raises(d.IoError):
        d.run("simulate", json.dumps({"model": "drifted_bm", "K": 3, "T": 0.3, "sequences": 2}), [f"output={out}"])
    with pytest.raises(d.ConfigError):
        d.run("simulate", "{}", ["K=-1"])


def test_default_config_is_json():
    cfg = json.loads(d.default_config())
    assert cfg["K"] == 20 and cfg["T"] == 2.0
