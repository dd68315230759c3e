import io

import numpy as np
import pytest

from acekit import learners
from acekit.data import Dataset
from acekit.learners import LearnerSpec
from acekit.pipeline import (
    FORMAT_VERSION,
    MAGIC,
    PersistenceError,
    PipelineConfig,
    PipelineError,
    build,
    check_preconditions,
    diagnostics,
    dumps_pipeline,
    estimate,
    estimate_batch,
    load_pipeline,
    loads_pipeline,
    save_pipeline,
)
from acekit.pipeline import CorruptPayloadError, VersionError
from acekit.simulate import LinearGaussianSpec, gen_linear_gaussian

from factories import backdoor, pipeline_learners, random_linear_spec

LS = pipeline_learners("least_squares")


def linear_data(n=2000, seed=0):
    spec = LinearGaussianSpec(
        {
            "Z": {"coef": {}, "noise": 1.0},
            "X": {"coef": {"Z": 0.7}, "noise": 1.0},
            "Y": {"coef": {"X": 1.5, "Z": -0.8}, "noise": 0.5},
        },
        "Y",
        ("X",),
    )
    return gen_linear_gaussian(spec, n, seed)


def multi_data(n_treatments, n=400, seed=0):
    spec = random_linear_spec(np.random.default_rng(seed), n_treatments, 2)
    data, truth = gen_linear_gaussian(spec, n, seed)
    cfg = PipelineConfig("Y", spec.treatments, spec.covariates, LS)
    return data, cfg, truth


def test_single_treatment_slope_recovers_coefficient():
    rng = np.random.default_rng(1)
    z = rng.normal(size=500)
    x = 0.6 * z + rng.normal(size=500)
    y = 2.5 * x - 1.2 * z
    data = Dataset.from_columns({"Z": z, "X": x, "Y": y})
    p, _ = build(data, PipelineConfig("Y", ("X",), learners=LS))
    _, slope = p.m_xy[0].state.affine_coefficients()
    assert slope[0] == pytest.approx(2.5, abs=1e-9)


def test_independent_treatment_has_flat_covariate_model():
    rng = np.random.default_rng(2)
    n = 5000
    data = Dataset.from_columns({"Z": rng.normal(size=n), "X": rng.normal(size=n), "Y": rng.normal(size=n)})
    p, trace = build(data, PipelineConfig("Y", ("X",), learners=LS))
    _, slope = p.m_z_x[0].state.affine_coefficients()
    assert abs(slope[0]) < 4 / np.sqrt(n)
    x = data.column("X")
    np.testing.assert_allclose(trace.own_stage(0), x - x.mean(), atol=4 / np.sqrt(n) * np.abs(data.column("Z")).max())


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_inventory(n):
    data, cfg, _ = multi_data(n)
    p, trace = build(data, cfg)
    inv = p.inventory()
    assert inv == {"z_to_y": 1, "z_to_x": n, "xtilde_to_ytilde": n, "xtilde_to_xtilde": n * (n - 1) // 2}
    assert set(p.m_xx) == {(i, j) for i in range(n) for j in range(i + 1, n)}
    assert len(trace.x_tilde) == n and len(trace.y_tilde) == n
    if n == 2:
        assert len(p.models()) == 6


def test_linear_estimate_matches_do_expectation():
    data, truth = linear_data(n=10_000)
    p, _ = build(data, PipelineConfig("Y", ("X",), learners=LS))
    for x, z in [(0.0, 0.0), (1.0, -0.5), (-2.0, 1.5)]:
        assert truth([x], [z]) == pytest.approx(1.5 * x - 0.8 * z, abs=1e-12)
        assert estimate(p, [x], [z]) == pytest.approx(1.5 * x - 0.8 * z, abs=0.05)


def test_zero_residual_request_returns_outcome_covariate_model():
    data, cfg, _ = multi_data(3)
    p, _ = build(data, cfg)
    z = np.array([0.3, -1.1])
    feats = learners.FeatureMatrix(z[None, :], cfg.covariates)
    x = [learners.predict(m, feats)[0] for m in p.m_z_x]
    base = learners.predict(p.m_z_y, feats)[0]
    assert estimate(p, x, z) == pytest.approx(base, abs=1e-10)


def test_batch_semantics():
    data, cfg, _ = multi_data(2)
    p, _ = build(data, cfg)
    req = np.array([[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0]])
    single = estimate(p, req[0, :2], req[0, 2:])
    assert estimate_batch(p, req[:1])[0] == single
    dup = estimate_batch(p, np.vstack([req, req]))
    np.testing.assert_array_equal(dup[:2], dup[2:])
    assert estimate_batch(p, np.empty((0, 4))).shape == (0,)
    with pytest.raises(PipelineError):
        estimate_batch(p, np.zeros((2, 3)))
    with pytest.raises(PipelineError):
        estimate(p, [1.0], [0.0, 0.0])
    with pytest.raises(PipelineError):
        estimate_batch(p, np.array([[np.nan, 0, 0, 0]]))


def test_batch_from_dataset_matches_matrix():
    data, cfg, _ = multi_data(2)
    p, _ = build(data, cfg)
    req = np.random.default_rng(0).normal(size=(5, 4))
    cols = [*cfg.treatments, *cfg.covariates]
    # columns in a different order are picked by name
    ds = Dataset(tuple(reversed(cols)), req[:, ::-1])
    np.testing.assert_array_equal(estimate_batch(p, ds), estimate_batch(p, req))


def test_affine_in_all_inputs_with_least_squares():
    data, cfg, _ = multi_data(3)
    p, _ = build(data, cfg)
    rng = np.random.default_rng(4)
    base = rng.normal(size=5)
    h = 0.7
    for k in range(5):
        e = np.zeros(5)
        e[k] = h
        vals = estimate_batch(p, np.array([base - e, base, base + e]))
        second = vals[0] - 2 * vals[1] + vals[2]
        assert abs(second) <= 1e-9 * (1 + np.abs(vals).max())


def test_treatment_order_does_not_matter_for_linear_data():
    spec = random_linear_spec(np.random.default_rng(5), 2, 1)
    data, truth = gen_linear_gaussian(spec, 5000, 5)
    t = spec.treatments
    a, _ = build(data, PipelineConfig("Y", t, spec.covariates, LS))
    b, _ = build(data, PipelineConfig("Y", t[::-1], spec.covariates, LS))
    # standard error of the OLS fit of Y on all inputs, at each request
    design = np.column_stack([np.ones(data.n_rows), data.columns([*t, *spec.covariates])])
    coef, *_ = np.linalg.lstsq(design, data.column("Y"), rcond=None)
    sigma = np.std(data.column("Y") - design @ coef, ddof=design.shape[1])
    inv = np.linalg.inv(design.T @ design)
    rng = np.random.default_rng(6)
    for _ in range(20):
        x1, x2, z = rng.normal(size=3)
        ea = estimate(a, [x1, x2], [z])
        eb = estimate(b, [x2, x1], [z])
        v = np.array([1, x1, x2, z])
        se = sigma * np.sqrt(v @ inv @ v)
        assert abs(ea - eb) < 5 * se
        assert abs(ea - eb) < 1e-8 * (1 + abs(ea))


def test_mean_learners_on_independent_columns():
    rng = np.random.default_rng(7)
    data = Dataset.from_columns({"Z": rng.normal(size=50), "X": rng.normal(size=50), "Y": rng.normal(size=50)})
    cfg = PipelineConfig("Y", ("X",), learners=pipeline_learners("mean"))
    _, trace = build(data, cfg)
    rep = diagnostics(trace, data, cfg)
    assert all(abs(v) <= 1e-15 for v in rep.x_means.values())
    assert all(abs(v) <= 1e-15 for v in rep.y_means.values())


def test_misconfigured_learner_is_flagged():
    rng = np.random.default_rng(8)
    z = rng.normal(size=500)
    x = 2 * z + 0.1 * rng.normal(size=500)
    data = Dataset.from_columns({"Z": z, "X": x, "Y": x + z})
    cfg = PipelineConfig("Y", ("X",), learners=pipeline_learners("mean"))
    _, trace = build(data, cfg)
    rep = diagnostics(trace, data, cfg)
    assert any("corr(X~1, Z)" in f for f in rep.flags)


def test_diagnostics_rejects_foreign_trace():
    data, cfg, _ = multi_data(2)
    _, trace = build(data, cfg)
    other, _, _ = multi_data(2, n=100)
    with pytest.raises(PipelineError):
        diagnostics(trace, other, cfg)


def test_every_model_used_once_per_request(monkeypatch):
    data, cfg, _ = multi_data(3)
    p, _ = build(data, cfg)
    calls = {}
    real = learners.predict

    def counting(model, x):
        calls[id(model)] = calls.get(id(model), 0) + 1
        return real(model, x)

    monkeypatch.setattr(learners, "predict", counting)
    estimate(p, [0.1, 0.2, 0.3], [0.0, 1.0])
    assert sorted(calls) == sorted(id(m) for _, m in p.models())
    assert set(calls.values()) == {1}


def test_build_errors_carry_context():
    data, cfg, _ = multi_data(1, n=3)
    with pytest.raises(PipelineError, match="missing"):
        build(data, PipelineConfig("Y", ("Q",)))
    bad = PipelineConfig("Y", cfg.treatments, cfg.covariates, pipeline_learners("knn", k=10))
    with pytest.raises(PipelineError, match="Z->Y"):
        build(data, bad)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"outcome": "Y", "treatments": ()},
        {"outcome": "Y", "treatments": ("X", "X")},
        {"outcome": "Y", "treatments": ("Y",)},
        {"outcome": "Y", "treatments": ("X",), "covariates": ("Y",)},
        {"outcome": "Y", "treatments": ("X",), "covariates": ("X",)},
        {"outcome": "Y", "treatments": ("X",), "learners": {"bogus": LearnerSpec()}},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(PipelineError):
        PipelineConfig(**kwargs)


def test_default_covariates_are_remaining_columns():
    data, cfg, _ = multi_data(2)
    p, _ = build(data, PipelineConfig("Y", cfg.treatments, learners=LS))
    assert set(p.config.covariates) == set(data.names) - {"Y", *cfg.treatments}


def test_cross_fit_extension():
    data, truth = linear_data(n=3000, seed=3)
    cfg = PipelineConfig("Y", ("X",), learners=pipeline_learners("least_squares", cross_fit_folds=3), cross_fit=True)
    p, trace = build(data, cfg)
    assert estimate(p, [1.0], [0.5]) == pytest.approx(truth([1.0], [0.5]), abs=0.1)
    assert abs(trace.own_stage(0).mean()) < 0.05


def test_no_covariates():
    rng = np.random.default_rng(9)
    x = rng.normal(size=300)
    data = Dataset.from_columns({"X": x, "Y": 3 * x + 1})
    p, _ = build(data, PipelineConfig("Y", ("X",), learners=LS))
    assert estimate(p, [2.0]) == pytest.approx(7.0, abs=1e-9)


def test_check_preconditions():
    data, cfg, _ = multi_data(1)
    assert check_preconditions(cfg) == {"status": "unverified"}
    c = PipelineConfig("Y", ("X",), ("Z",))
    rep = check_preconditions(c, backdoor())
    assert rep["status"] == "checked"
    assert rep["identifiable"] is True
    assert rep["available_for_modeling"] is False
    assert rep["theorem1_preconditions"]["x_in_ancestors"] is True


# -- persistence -------------------------------------------------------------


def test_round_trip_bitwise(tmp_path):
    data, cfg, _ = multi_data(2)
    cfg = PipelineConfig("Y", cfg.treatments, cfg.covariates, pipeline_learners("gbt", n_trees=30))
    p, _ = build(data, cfg)
    path = tmp_path / "p.ace"
    save_pipeline(p, str(path))
    q = load_pipeline(str(path))
    req = np.random.default_rng(0).normal(size=(50, 4))
    assert estimate_batch(q, req).tobytes() == estimate_batch(p, req).tobytes()
    buf = io.BytesIO()
    save_pipeline(p, buf)
    assert buf.getvalue() == path.read_bytes()
    assert load_pipeline(io.BytesIO(buf.getvalue())).config == p.config


def test_corrupt_files():
    data, cfg, _ = multi_data(1)
    blob = dumps_pipeline(build(data, cfg)[0])
    assert blob[:4] == MAGIC
    with pytest.raises(CorruptPayloadError):
        loads_pipeline(blob[: len(blob) // 2])
    with pytest.raises(CorruptPayloadError):
        loads_pipeline(blob[:10])
    with pytest.raises(VersionError):
        loads_pipeline(b"NOPE" + blob[4:])
    bumped = blob[:4] + (FORMAT_VERSION + 1).to_bytes(2, "big") + blob[6:]
    with pytest.raises(VersionError):
        loads_pipeline(bumped)
    flipped = bytearray(blob)
    flipped[-5] ^= 0xFF
    with pytest.raises(CorruptPayloadError):
        loads_pipeline(bytes(flipped))
    assert issubclass(CorruptPayloadError, PersistenceError)


@pytest.mark.parametrize("kind, params", [("least_squares", {}), ("knn", {"k": 5})])
def test_estimate_defined_for_any_real_treatment(kind, params):
    data, cfg, _ = multi_data(1)
    p, _ = build(data, PipelineConfig("Y", cfg.treatments, cfg.covariates, pipeline_learners(kind, **params)))
    xs = np.concatenate([np.linspace(-50, 50, 1001), [1e6, -1e6, np.pi]])
    req = np.column_stack([xs, np.zeros((len(xs), 2))])
    assert np.all(np.isfinite(estimate_batch(p, req)))
