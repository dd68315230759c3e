import json
import math

import numpy as np
import pytest

from acekit.data import load_dataset
from acekit.experiment import ExperimentConfig, emit_plot_data, sine_model_grid, run_experiment
from acekit.graph import CycleError
from acekit.rng import make_rng, normal, uniform
from acekit.simulate import LinearGaussianSpec, gen_linear_gaussian, gen_paper_model, paper_model_truth


def test_rng_reproducible_and_in_range():
    a = uniform(make_rng(3), -1, 2, 1000)
    b = uniform(make_rng(3), -1, 2, 1000)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= -1 and a.max() < 2
    z = normal(make_rng(4), 0, 1, 200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_sine_model_support_and_determinism():
    d = gen_paper_model(2000, 1)
    z, x = d.column("Z"), d.column("X")
    assert d.names == ("Z", "X", "Y")
    assert np.all((z >= 0) & (z <= 1))
    assert np.all(np.abs(x - np.sin(z)) <= 0.5)
    assert gen_paper_model(2000, 1).values.tobytes() == d.values.tobytes()
    assert gen_paper_model(2000, 2).values.tobytes() != d.values.tobytes()


def test_sine_model_noise_mean():
    n = 100_000
    d = gen_paper_model(n, 0)
    eps = d.column("Y") - d.column("X") * d.column("Z")
    assert abs(eps.mean()) <= 3 * 0.05 / math.sqrt(n)
    assert eps.std() == pytest.approx(0.05, rel=0.02)


def test_sine_model_truth():
    assert paper_model_truth(0.4, 0.5) == 0.2


def test_linear_gaussian_closures():
    spec = LinearGaussianSpec(
        {"Z": {"coef": {}}, "X": {"coef": {"Z": 0.7}}, "Y": {"coef": {"X": 1.5, "Z": -0.8}}}, "Y", ("X",)
    )
    _, f = gen_linear_gaussian(spec, 10, 0)
    for x, z in [(0, 0), (1, 2), (-0.5, 0.3)]:
        assert f([x], [z]) == pytest.approx(1.5 * x - 0.8 * z, abs=1e-12)
    zero = LinearGaussianSpec({"Z": {"coef": {}}, "X": {"coef": {"Z": 0}}, "Y": {"coef": {"X": 0, "Z": 0}}}, "Y", ("X",))
    _, f0 = gen_linear_gaussian(zero, 10, 0)
    assert f0([3.0], [-2.0]) == 0.0
    two = LinearGaussianSpec(
        {
            "Z": {"coef": {}},
            "X1": {"coef": {"Z": 0.4}},
            "X2": {"coef": {"X1": 0.5, "Z": 1.0}},
            "Y": {"coef": {"X1": 2.0, "X2": 3.0, "Z": 1.0}},
        },
        "Y",
        ("X1", "X2"),
    )
    _, f2 = gen_linear_gaussian(two, 10, 0)
    assert f2([1.0, -1.0], [0.5]) == pytest.approx(2 - 3 + 0.5, abs=1e-12)


def test_linear_gaussian_closure_with_descendant_covariate():
    # W is a child of X and Y: conditioning on it mixes in the noise of Y
    spec = LinearGaussianSpec(
        {"X": {"coef": {}}, "Y": {"coef": {"X": 1.0}}, "W": {"coef": {"Y": 1.0}}}, "Y", ("X",)
    )
    data, f = gen_linear_gaussian(spec, 200_000, 1)
    x0 = 0.0
    # empirical E[Y | do(X=0), W near 1]: simulate the mutilated model directly
    rng = np.random.default_rng(0)
    y = x0 + rng.normal(size=400_000)
    w = y + rng.normal(size=400_000)
    sel = np.abs(w - 1.0) < 0.02
    assert f([x0], [1.0]) == pytest.approx(y[sel].mean(), abs=0.03)
    assert f([x0], [1.0]) == pytest.approx(0.5, abs=1e-12)


def test_cyclic_spec_rejected():
    with pytest.raises(CycleError):
        LinearGaussianSpec({"A": {"coef": {"B": 1}}, "B": {"coef": {"A": 1}}}, "A", ("B",))
    with pytest.raises(ValueError):
        LinearGaussianSpec({"A": {"coef": {"Q": 1}}}, "A", ())


def test_sine_model_grid():
    g = sine_model_grid()
    assert len(g) == 17
    assert g[0] == pytest.approx(math.sin(0.5) - 0.4)
    assert g[-1] == pytest.approx(math.sin(0.5) + 0.4)


def sine_cfg(**extra):
    d = {"n_samples": 1000, "seed": 0, "learners": {"default": {"kind": "gbt", "n_trees": 50}}}
    d.update(extra)
    return ExperimentConfig.from_mapping(d)


def test_sine_experiment_rows(tmp_path):
    res = run_experiment(sine_cfg())
    assert len(res.estimate) == 17
    np.testing.assert_array_equal(res.theory, 0.5 * res.x[:, 0])
    assert res.summary["mae"] == pytest.approx(res.abs_error.mean(), abs=0)
    csv_path, json_path = emit_plot_data(res, tmp_path)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "x,estimate,theory,abs_error"
    assert len(lines) == 18
    rows = load_dataset(csv_path)
    assert rows.column("abs_error").mean() == pytest.approx(json.load(open(json_path))["mae"], abs=1e-15)


def test_experiment_deterministic_csv(tmp_path):
    a = emit_plot_data(run_experiment(sine_cfg()), tmp_path / "a")[0]
    b = emit_plot_data(run_experiment(sine_cfg()), tmp_path / "b")[0]
    assert open(a, "rb").read() == open(b, "rb").read()


def test_replications():
    res = run_experiment(sine_cfg(replications=3))
    assert res.summary["replications"] == 3
    assert len(res.summary["replication_mae"]) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        sine_cfg(n_samples=5)
    with pytest.raises(ValueError):
        sine_cfg(grid={"x": []})
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"generator": {"kind": "bogus"}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"learners": {"nope": {"kind": "gbt"}}})


def test_linear_generator_two_treatments():
    cfg = ExperimentConfig.from_mapping(
        {
            "n_samples": 2000,
            "generator": {
                "kind": "linear-gaussian",
                "outcome": "Y",
                "treatments": ["X1", "X2"],
                "equations": {
                    "Z": {"coef": {}},
                    "X1": {"coef": {"Z": 0.4}},
                    "X2": {"coef": {"X1": 0.5, "Z": 1.0}},
                    "Y": {"coef": {"X1": 2.0, "X2": 3.0, "Z": 1.0}},
                },
            },
            "learners": {"default": {"kind": "least_squares"}},
            "grid": {"x": [[0, 0], [1, 0], [0, 1]], "z": [0.5]},
        }
    )
    res = run_experiment(cfg)
    np.testing.assert_allclose(res.theory, [0.5, 2.5, 3.5], atol=1e-12)
    assert res.mae < 0.1


def test_csv_generator(tmp_path):
    data = gen_paper_model(500, 0)
    with open(tmp_path / "d.csv", "w") as fh:
        data.to_csv(fh)
    cfg = ExperimentConfig.from_mapping(
        {
            "generator": {"kind": "csv", "path": "d.csv"},
            "pipeline": {"outcome": "Y", "treatments": ["X"]},
            "learners": {"default": {"kind": "least_squares", "degree": 2}},
            "grid": {"x": [0.2, 0.4], "z": [0.5]},
        },
        base_dir=str(tmp_path),
    )
    res = run_experiment(cfg)
    assert np.all(np.isnan(res.theory))
    assert res.summary["mae"] is None
    emit_plot_data(res, tmp_path / "out")


def test_linear_mae_shrinks_with_n():
    gen = {
        "kind": "linear-gaussian",
        "outcome": "Y",
        "treatments": ["X"],
        "equations": {
            "Z": {"coef": {}},
            "X": {"coef": {"Z": 0.7}},
            "Y": {"coef": {"X": 1.5, "Z": -0.8}},
        },
    }
    medians = []
    for n in (500, 2000, 8000):
        maes = []
        for seed in range(5):
            cfg = ExperimentConfig.from_mapping(
                {
                    "n_samples": n,
                    "seed": seed,
                    "generator": gen,
                    "learners": {"default": {"kind": "least_squares"}},
                    "grid": {"x": [-1.0, 0.0, 1.0], "z": [0.5]},
                }
            )
            maes.append(run_experiment(cfg).mae)
        medians.append(np.median(maes))
    assert medians[0] >= medians[1] >= medians[2]
