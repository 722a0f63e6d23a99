import math

import numpy as np
import pytest

import kawasaki


def test_gram_closed_form():
    g = kawasaki.gram_matrix(8)
    assert g[0, 0] == pytest.approx(11 / 160, abs=1e-14)
    assert g[0, 1] == pytest.approx(13 / 480, abs=1e-14)
    assert g[0, 2] == pytest.approx(1 / 960, abs=1e-14)
    assert g[0, 3] == 0.0
    assert np.allclose(g.sum(axis=1), 1 / 8)


def test_partition_of_unity():
    for theta in np.linspace(0.0, 0.999, 37):
        total = sum(kawasaki.bspline_eval(6, j, theta) for j in range(1, 7))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_norm_examples():
    assert kawasaki.l2_norm(np.array([1.0, -1.0, 1.0, -1.0])) == pytest.approx(1.0)
    n = 1024
    x = np.sin(2 * math.pi * (np.arange(n) + 0.5) / n)
    assert kawasaki.hneg1_norm(x) == pytest.approx(1 / (2 * math.sqrt(2) * math.pi), rel=1e-5)


def test_projection_is_mean_zero_and_defect_shrinks():
    x = np.cos(2 * math.pi * (np.arange(64) + 0.5) / 64)
    c = kawasaki.project(x, 4)
    assert c.shape == (4,)
    assert abs(c.sum()) < 1e-12
    assert kawasaki.defect(128, 8) < kawasaki.defect(64, 8)


def test_free_energy_gaussian_identity():
    t = kawasaki.free_energy(kawasaki.PotentialSpec("gaussian"), 4.0, 81)
    assert np.allclose(t["phi_prime"], t["m"], atol=1e-10)
    cos = kawasaki.free_energy(kawasaki.PotentialSpec("cosine", beta=0.5), 3.0, 61)
    assert np.all(np.diff(cos["phi_prime"]) > 0)
    assert cos["lambda_num"] > 0


def test_fit_rate_power_law():
    sizes = [4.0, 8.0, 16.0]
    fit = kawasaki.fit_rate(sizes, [2.0 / s**2 for s in sizes])
    assert fit["slope"] == pytest.approx(-2.0, abs=1e-12)
    with pytest.raises(ValueError):
        kawasaki.fit_rate([1.0, 2.0], [1.0, 0.5])


def test_simulate_preserves_mean_and_is_deterministic():
    x0 = np.cos(2 * math.pi * np.arange(32) / 32)
    a = kawasaki.simulate(x0, 4, steps=50, seed=3)
    b = kawasaki.simulate(x0, 4, steps=50, seed=3)
    assert abs(a.sum()) < 1e-10
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        kawasaki.simulate(x0, 4, dt_factor=2.0)


def test_run_experiment_and_config_errors():
    report = kawasaki.run({"experiment": "meso_to_macro", "T": 0.02})
    assert report["experiment"] == "meso_to_macro"
    assert report["passed"] is True
    assert len(report["sizes"]) == 3
    cfg = {"experiment": "meso_to_macro", "threads": 1}
    assert kawasaki.config_hash(cfg) == kawasaki.config_hash(dict(cfg, threads=4))
    assert "threads" not in kawasaki.canonical_config(cfg)
    with pytest.raises(kawasaki.ConfigError):
        kawasaki.run({"experiment": "micro_to_meso", "ladder": [[64, 4], [128, 4]]})
    with pytest.raises(ValueError):
        kawasaki.run({"experiment": "meso_to_macro", "unknown_key": 1})
