"""Pluggable supervised regression.

``fit`` and ``predict`` are the only entry points the pipeline uses; every
learner kind is selected by a :class:`LearnerSpec`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .linear import LeastSquaresModel, MeanModel
from .neighbors import KNearestModel
from .trees import TreeEnsembleModel, fit_boosted_trees, fit_random_forest

__all__ = [
    "KINDS",
    "LearnerError",
    "LearnerSpec",
    "FeatureMatrix",
    "FittedModel",
    "fit",
    "predict",
    "out_of_fold_predict",
    "model_to_dict",
    "model_from_dict",
]

KINDS = ("mean", "least_squares", "knn", "gbt", "random_forest")

_ALIASES = {
    "mean": "mean",
    "leastsquares": "least_squares",
    "least_squares": "least_squares",
    "ols": "least_squares",
    "knearest": "knn",
    "knn": "knn",
    "gradientboostedtrees": "gbt",
    "gbt": "gbt",
    "boosted_trees": "gbt",
    "randomforestlike": "random_forest",
    "random_forest": "random_forest",
    "rf": "random_forest",
}

# kind -> defaults for the hyperparameters that kind reads
_DEFAULTS: dict[str, dict[str, Any]] = {
    "mean": {},
    "least_squares": {"degree": 1},
    "knn": {"k": 5},
    "gbt": {
        "n_trees": 200,
        "max_depth": 3,
        "learning_rate": 0.1,
        "min_leaf": 5,
        "subsample": 1.0,
        "seed": 0,
    },
    # fully grown trees, as in common forest defaults
    "random_forest": {"n_trees": 100, "max_depth": 32, "min_leaf": 1, "seed": 0},
}


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "gbt"
    degree: int | None = None
    k: int | None = None
    n_trees: int | None = None
    max_depth: int | None = None
    learning_rate: float | None = None
    min_leaf: int | None = None
    subsample: float | None = None
    seed: int | None = None
    cross_fit_folds: int | None = None

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            kind = _ALIASES.get(str(self.kind).lower().replace("-", "").replace("_", ""))
        if kind is None:
            raise LearnerError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        allowed = _DEFAULTS[kind]
        for f in fields(self):
            if f.name in ("kind", "cross_fit_folds"):
                continue
            val = getattr(self, f.name)
            if f.name in allowed and val is None:
                object.__setattr__(self, f.name, allowed[f.name])
            elif f.name not in allowed and val is not None:
                raise LearnerError(f"{f.name} does not apply to learner kind {kind!r}")
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise LearnerError(f"{self.kind}: {msg}")

        if self.degree is not None:
            need(int(self.degree) == self.degree and self.degree >= 1, "degree must be >= 1")
        if self.k is not None:
            need(int(self.k) == self.k and self.k >= 1, "k must be >= 1")
        if self.n_trees is not None:
            need(int(self.n_trees) == self.n_trees and self.n_trees >= 0, "n_trees must be >= 0")
        if self.max_depth is not None:
            need(int(self.max_depth) == self.max_depth and self.max_depth >= 1, "max_depth must be >= 1")
        if self.min_leaf is not None:
            need(int(self.min_leaf) == self.min_leaf and self.min_leaf >= 1, "min_leaf must be >= 1")
        if self.learning_rate is not None:
            need(0.0 < self.learning_rate <= 1.0, "learning_rate must be in (0, 1]")
        if self.subsample is not None:
            need(0.0 < self.subsample <= 1.0, "subsample must be in (0, 1]")
        if self.seed is not None:
            need(int(self.seed) == self.seed and self.seed >= 0, "seed must be a non-negative integer")
        if self.cross_fit_folds is not None:
            need(int(self.cross_fit_folds) == self.cross_fit_folds and self.cross_fit_folds >= 2,
                 "cross_fit_folds must be >= 2")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LearnerSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise LearnerError(f"unknown learner option(s): {sorted(extra)}")
        return cls(**dict(d))

    def with_seed(self, seed: int) -> "LearnerSpec":
        return replace(self, seed=seed) if self.seed is not None else self


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise LearnerError(f"feature matrix shape {v.shape} does not match names {self.names}")
        if len(set(self.names)) != len(self.names):
            raise LearnerError(f"duplicate feature names {self.names}")
        if not np.all(np.isfinite(v)):
            raise LearnerError("feature matrix has non-finite entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def empty(cls, n_rows: int) -> "FeatureMatrix":
        return cls(np.empty((n_rows, 0)), ())

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: LearnerSpec
    feature_names: tuple[str, ...]
    state: Any = field(repr=False)
    notes: tuple[str, ...] = ()

    def predict(self, x: FeatureMatrix) -> np.ndarray:
        return predict(self, x)


def _as_features(x) -> FeatureMatrix:
    if isinstance(x, FeatureMatrix):
        return x
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return FeatureMatrix(x, tuple(f"f{i}" for i in range(x.shape[1])))


def _fit_state(spec: LearnerSpec, x: FeatureMatrix, y: np.ndarray):
    notes: tuple[str, ...] = ()
    kind = spec.kind
    if kind == "mean" or x.values.shape[1] == 0:
        state = MeanModel.fit(y)
    elif kind == "least_squares":
        state = LeastSquaresModel.fit(x.values, y, spec.degree)
        if state.ridge:
            notes = ("rank-deficient design: ridge fallback used",)
    elif kind == "knn":
        if len(y) < spec.k:
            raise LearnerError(f"knn needs at least k={spec.k} rows, got {len(y)}")
        state = KNearestModel.fit(x.values, y, spec.k)
    elif kind == "gbt":
        state = fit_boosted_trees(
            x.values, y,
            n_trees=spec.n_trees, max_depth=spec.max_depth, learning_rate=spec.learning_rate,
            min_leaf=spec.min_leaf, subsample=spec.subsample, seed=spec.seed,
        )
    elif kind == "random_forest":
        state = fit_random_forest(
            x.values, y,
            n_trees=spec.n_trees, max_depth=spec.max_depth, min_leaf=spec.min_leaf, seed=spec.seed,
        )
    else:  # pragma: no cover - guarded by LearnerSpec
        raise LearnerError(kind)
    return state, notes


def fit(spec: LearnerSpec, x: FeatureMatrix, y: Sequence[float]) -> FittedModel:
    """Train ``spec`` on features ``x`` and targets ``y``.

    Deterministic for a given spec (seed included). A matrix with no columns
    always yields the constant mean model.
    """
    x = _as_features(x)
    y = np.asarray(y, dtype=float).ravel()
    if x.n_rows != len(y):
        raise LearnerError(f"row mismatch: {x.n_rows} feature rows vs {len(y)} targets")
    if len(y) == 0:
        raise LearnerError("cannot fit on zero rows")
    if not np.all(np.isfinite(y)):
        raise LearnerError("targets contain non-finite values")
    try:
        state, notes = _fit_state(spec, x, y)
    except LearnerError:
        raise
    except ValueError as exc:
        raise LearnerError(f"{spec.kind}: {exc}") from exc
    return FittedModel(spec, x.names, state, notes)


def predict(model: FittedModel, x: FeatureMatrix) -> np.ndarray:
    x = _as_features(x)
    if x.names != model.feature_names:
        raise LearnerError(
            f"features {x.names} do not match training features {model.feature_names}"
        )
    out = model.state.predict(x.values)
    if not np.all(np.isfinite(out)):
        raise LearnerError("non-finite prediction")
    return out


def out_of_fold_predict(spec: LearnerSpec, x: FeatureMatrix, y: np.ndarray, folds: int) -> np.ndarray:
    """Cross-fitted predictions: row i is predicted by a model fit without
    its fold (fold of row i is ``i % folds``)."""
    x = _as_features(x)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if folds > n:
        raise LearnerError(f"{folds} folds but only {n} rows")
    fold_of = np.arange(n) % folds
    out = np.empty(n)
    for f in range(folds):
        test = fold_of == f
        train = ~test
        sub = FeatureMatrix(x.values[train], x.names)
        m = fit(spec.with_seed(spec.seed + f) if spec.seed is not None else spec, sub, y[train])
        out[test] = predict(m, FeatureMatrix(x.values[test], x.names))
    return out


_STATE_TYPES = {
    "mean": MeanModel,
    "least_squares": LeastSquaresModel,
    "knn": KNearestModel,
    "trees": TreeEnsembleModel,
}


def model_to_dict(model: FittedModel) -> dict:
    state = model.state
    tag = next(k for k, t in _STATE_TYPES.items() if isinstance(state, t))
    return {
        "spec": model.spec.to_dict(),
        "features": list(model.feature_names),
        "notes": list(model.notes),
        "state_type": tag,
        "state": state.to_dict(),
    }


def model_from_dict(d: Mapping) -> FittedModel:
    try:
        state_cls = _STATE_TYPES[d["state_type"]]
        return FittedModel(
            LearnerSpec.from_dict(d["spec"]),
            tuple(d["features"]),
            state_cls.from_dict(d["state"]),
            tuple(d.get("notes", ())),
        )
    except (KeyError, TypeError, StopIteration) as exc:
        raise LearnerError(f"malformed model record: {exc!r}") from None
