"""Sequential residualization estimator of E[Y | do(X = x), Z = z].

``build`` fits the model cascade on a dataset: covariate models for Y and
every treatment, then for each treatment in order a model of the current
outcome residual on that treatment's residual, and models that strip the
treatment's residual out of every later treatment. ``estimate`` replays the
cascade on requested intervention values and sums the outcome-model
predictions.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import IO, Mapping, Sequence

import numpy as np

from . import learners
from .data import Dataset
from .learners import FeatureMatrix, FittedModel, LearnerSpec

__all__ = [
    "ROLES",
    "PipelineError",
    "PersistenceError",
    "PipelineConfig",
    "TrainedPipeline",
    "ResidualTrace",
    "DiagnosticsReport",
    "build",
    "estimate",
    "estimate_batch",
    "diagnostics",
    "check_preconditions",
    "save_pipeline",
    "load_pipeline",
    "MAGIC",
    "FORMAT_VERSION",
]

ROLES = ("z_to_y", "z_to_x", "xtilde_to_ytilde", "xtilde_to_xtilde")
DEFAULT_CROSS_FIT_FOLDS = 5


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    outcome: str
    treatments: tuple[str, ...]
    covariates: tuple[str, ...] | None = None
    learners: Mapping[str, LearnerSpec] = field(default_factory=dict)
    cross_fit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "treatments", tuple(self.treatments))
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.treatments:
            raise PipelineError("at least one treatment is required")
        if len(set(self.treatments)) != len(self.treatments):
            raise PipelineError(f"duplicate treatments in {self.treatments}")
        if self.outcome in self.treatments:
            raise PipelineError("outcome may not be a treatment")
        if self.covariates is not None:
            if self.outcome in self.covariates:
                raise PipelineError("outcome may not be a covariate")
            if set(self.covariates) & set(self.treatments):
                raise PipelineError("treatments and covariates overlap")
            if len(set(self.covariates)) != len(self.covariates):
                raise PipelineError("duplicate covariates")
        unknown = set(self.learners) - set(ROLES)
        if unknown:
            raise PipelineError(f"unknown learner role(s) {sorted(unknown)}; roles are {ROLES}")
        specs = {r: self.learners.get(r, LearnerSpec()) for r in ROLES}
        object.__setattr__(self, "learners", specs)

    def resolve(self, data: Dataset) -> "PipelineConfig":
        """Fill in covariates (every column not outcome or treatment) and
        check that all configured columns exist."""
        cols = [self.outcome, *self.treatments, *(self.covariates or ())]
        missing = [c for c in cols if c not in data.names]
        if missing:
            raise PipelineError(f"dataset is missing column(s) {missing}")
        if self.covariates is not None:
            return self
        used = {self.outcome, *self.treatments}
        return replace(self, covariates=tuple(n for n in data.names if n not in used))

    @property
    def n(self) -> int:
        return len(self.treatments)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatments": list(self.treatments),
            "covariates": None if self.covariates is None else list(self.covariates),
            "learners": {r: s.to_dict() for r, s in self.learners.items()},
            "cross_fit": self.cross_fit,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        return cls(
            outcome=d["outcome"],
            treatments=tuple(d["treatments"]),
            covariates=None if d.get("covariates") is None else tuple(d["covariates"]),
            learners={r: LearnerSpec.from_dict(s) for r, s in d.get("learners", {}).items()},
            cross_fit=bool(d.get("cross_fit", False)),
        )


def _tilde_name(name: str, stage: int) -> str:
    return f"{name}~{stage}"


@dataclass(frozen=True, eq=False)
class TrainedPipeline:
    """All models of the cascade.

    ``m_xy[i]`` regresses the stage-i outcome residual on treatment i's
    stage-i residual; ``m_xx[(i, j)]`` (i < j) regresses treatment j's stage-i
    residual on treatment i's. Indices are 0-based.
    """

    config: PipelineConfig
    m_z_y: FittedModel
    m_z_x: tuple[FittedModel, ...]
    m_xy: tuple[FittedModel, ...]
    m_xx: Mapping[tuple[int, int], FittedModel]

    def models(self) -> list[tuple[str, FittedModel]]:
        """Every model with a descriptive label, in build order."""
        t = self.config.treatments
        out = [(f"Z->{self.config.outcome}", self.m_z_y)]
        out += [(f"Z->{t[i]}", m) for i, m in enumerate(self.m_z_x)]
        out += [(f"{t[i]}~->Y~{i + 1}", m) for i, m in enumerate(self.m_xy)]
        out += [(f"{t[i]}~->{t[j]}~{i + 1}", self.m_xx[(i, j)]) for (i, j) in sorted(self.m_xx)]
        return out

    def inventory(self) -> dict[str, int]:
        return {
            "z_to_y": 1,
            "z_to_x": len(self.m_z_x),
            "xtilde_to_ytilde": len(self.m_xy),
            "xtilde_to_xtilde": len(self.m_xx),
        }


@dataclass(frozen=True, eq=False)
class ResidualTrace:
    """Training-row residuals.

    ``x_tilde[k][:, i]`` is treatment i's residual at stage k+1 (columns left
    of k are carried forward unchanged); ``y_tilde[k]`` the outcome residual.
    """

    treatments: tuple[str, ...]
    x_tilde: tuple[np.ndarray, ...]
    y_tilde: tuple[np.ndarray, ...]

    def own_stage(self, i: int) -> np.ndarray:
        """Residual of treatment i at its own stage (the feature of m_xy[i])."""
        return self.x_tilde[i][:, i]

    @property
    def n_rows(self) -> int:
        return len(self.y_tilde[0])


def _fit_and_residualize(
    spec: LearnerSpec, feats: FeatureMatrix, target: np.ndarray, cfg: PipelineConfig, stage: str
) -> tuple[FittedModel, np.ndarray]:
    try:
        model = learners.fit(spec, feats, target)
        if cfg.cross_fit:
            folds = spec.cross_fit_folds or DEFAULT_CROSS_FIT_FOLDS
            fitted = learners.out_of_fold_predict(spec, feats, target, folds)
        else:
            fitted = learners.predict(model, feats)
    except ValueError as exc:
        raise PipelineError(f"{stage}: {exc}") from exc
    return model, target - fitted


def build(data: Dataset, cfg: PipelineConfig) -> tuple[TrainedPipeline, ResidualTrace]:
    """Fit the full model cascade and return it with the training residuals."""
    cfg = cfg.resolve(data)
    n = cfg.n
    spec = cfg.learners
    z = FeatureMatrix(data.columns(cfg.covariates), cfg.covariates)
    y = data.column(cfg.outcome).copy()
    x = data.columns(cfg.treatments).copy()
    t = cfg.treatments

    m_z_y, y_res = _fit_and_residualize(spec["z_to_y"], z, y, cfg, f"Z->{cfg.outcome}")
    m_z_x = []
    xt = np.empty_like(x)
    for i in range(n):
        m, xt[:, i] = _fit_and_residualize(spec["z_to_x"], z, x[:, i], cfg, f"Z->{t[i]}")
        m_z_x.append(m)

    x_stages = [xt.copy()]
    y_stages = [y_res.copy()]
    m_xy, m_xx = [], {}
    for i in range(n):
        feat = FeatureMatrix(xt[:, i].reshape(-1, 1), (_tilde_name(t[i], i + 1),))
        m, y_res = _fit_and_residualize(
            spec["xtilde_to_ytilde"], feat, y_res, cfg, f"stage {i + 1}: {t[i]}~ -> Y~"
        )
        m_xy.append(m)
        if i == n - 1:
            break
        for j in range(i + 1, n):
            m, xt[:, j] = _fit_and_residualize(
                spec["xtilde_to_xtilde"], feat, xt[:, j], cfg,
                f"stage {i + 1}: {t[i]}~ -> {t[j]}~",
            )
            m_xx[(i, j)] = m
        x_stages.append(xt.copy())
        y_stages.append(y_res.copy())

    pipe = TrainedPipeline(cfg, m_z_y, tuple(m_z_x), tuple(m_xy), m_xx)
    trace = ResidualTrace(t, tuple(x_stages), tuple(y_stages))
    return pipe, trace


def _request_arrays(p: TrainedPipeline, requests) -> tuple[np.ndarray, np.ndarray]:
    cfg = p.config
    n, q = cfg.n, len(cfg.covariates)
    if isinstance(requests, Dataset):
        return requests.columns(cfg.treatments), requests.columns(cfg.covariates)
    r = np.asarray(requests, dtype=float)
    if r.size == 0:
        r = r.reshape(0, n + q)
    if r.ndim != 2 or r.shape[1] != n + q:
        raise PipelineError(
            f"requests need {n} treatment + {q} covariate columns, got shape {r.shape}"
        )
    return r[:, :n], r[:, n:]


def estimate_batch(p: TrainedPipeline, requests) -> np.ndarray:
    """Row-wise estimates for an (m, n_treatments + n_covariates) matrix
    (treatments first, in config order) or a Dataset with those columns."""
    cfg = p.config
    xv, zv = _request_arrays(p, requests)
    m = xv.shape[0]
    if m == 0:
        return np.empty(0)
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(zv))):
        raise PipelineError("requests contain non-finite values")
    t = cfg.treatments
    z = FeatureMatrix(zv, cfg.covariates)
    xt = np.empty_like(xv)
    for i in range(cfg.n):
        xt[:, i] = xv[:, i] - learners.predict(p.m_z_x[i], z)
    for i in range(cfg.n - 1):
        feat = FeatureMatrix(xt[:, i].reshape(-1, 1), (_tilde_name(t[i], i + 1),))
        for j in range(i + 1, cfg.n):
            xt[:, j] = xt[:, j] - learners.predict(p.m_xx[(i, j)], feat)
    y_hat = learners.predict(p.m_z_y, z)
    for i in range(cfg.n):
        feat = FeatureMatrix(xt[:, i].reshape(-1, 1), (_tilde_name(t[i], i + 1),))
        y_hat = y_hat + learners.predict(p.m_xy[i], feat)
    if not np.all(np.isfinite(y_hat)):
        raise PipelineError("non-finite estimate")
    return y_hat


def estimate(p: TrainedPipeline, x_values: Sequence[float], z_values: Sequence[float] = ()) -> float:
    """Estimate E[Y | do(X = x_values), Z = z_values] for one request."""
    x_values = np.asarray(x_values, dtype=float).ravel()
    z_values = np.asarray(z_values, dtype=float).ravel()
    if len(x_values) != p.config.n:
        raise PipelineError(f"expected {p.config.n} treatment values, got {len(x_values)}")
    if len(z_values) != len(p.config.covariates):
        raise PipelineError(
            f"expected {len(p.config.covariates)} covariate values, got {len(z_values)}"
        )
    return float(estimate_batch(p, np.concatenate([x_values, z_values])[None, :])[0])


# -- diagnostics ----------------------------------------------------------------


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1.0)
    # a (numerically) constant column carries no correlation
    if na <= 1e-12 * scale * np.sqrt(len(a)) or nb <= 1e-12 * scale * np.sqrt(len(b)):
        return 0.0
    return float((a @ b) / (na * nb))


@dataclass
class DiagnosticsReport:
    x_means: dict[str, float]
    y_means: dict[str, float]
    covariate_corr: dict[str, dict[str, float]]
    cross_stage_corr: dict[str, float]
    tolerance: float
    flags: list[str]

    def max_abs(self) -> float:
        vals = list(self.x_means.values()) + list(self.y_means.values())
        vals += [v for d in self.covariate_corr.values() for v in d.values()]
        vals += list(self.cross_stage_corr.values())
        return max((abs(v) for v in vals), default=0.0)

    def to_dict(self) -> dict:
        return {
            "x_means": self.x_means,
            "y_means": self.y_means,
            "covariate_corr": self.covariate_corr,
            "cross_stage_corr": self.cross_stage_corr,
            "tolerance": self.tolerance,
            "flags": self.flags,
        }


def diagnostics(trace: ResidualTrace, data: Dataset, cfg: PipelineConfig, tolerance: float = 0.05) -> DiagnosticsReport:
    """Empirical checks that residuals are centred and orthogonal.

    Reports the mean of each treatment residual at its own stage and of every
    outcome residual, the correlation of each treatment residual with each
    covariate, and the correlation between own-stage residuals of different
    treatments. Entries whose magnitude exceeds ``tolerance`` are flagged.
    """
    cfg = cfg.resolve(data)
    if trace.n_rows != data.n_rows or trace.treatments != cfg.treatments:
        raise PipelineError("trace does not belong to this dataset/config")
    t = cfg.treatments
    flags = []

    def check(label, v):
        if abs(v) > tolerance:
            flags.append(f"{label} = {v:.3g}")
        return v

    x_means = {
        f"{t[i]}~{i + 1}": check(f"mean({t[i]}~{i + 1})", float(trace.own_stage(i).mean()))
        for i in range(len(t))
    }
    y_means = {
        f"Y~{k + 1}": check(f"mean(Y~{k + 1})", float(yk.mean()))
        for k, yk in enumerate(trace.y_tilde)
    }
    cov_corr = {}
    for i in range(len(t)):
        r = trace.own_stage(i)
        cov_corr[f"{t[i]}~{i + 1}"] = {
            c: check(f"corr({t[i]}~{i + 1}, {c})", _corr(r, data.column(c))) for c in cfg.covariates
        }
    cross = {}
    for i in range(len(t)):
        for j in range(i + 1, len(t)):
            label = f"corr({t[i]}~{i + 1}, {t[j]}~{j + 1})"
            cross[f"{t[i]}~{i + 1},{t[j]}~{j + 1}"] = check(label, _corr(trace.own_stage(i), trace.own_stage(j)))
    return DiagnosticsReport(x_means, y_means, cov_corr, cross, tolerance, flags)


def check_preconditions(cfg: PipelineConfig, graph=None) -> dict:
    """Graph-based hypotheses of the cascade, or ``unverified`` without a graph."""
    if graph is None:
        return {"status": "unverified"}
    from . import analysis

    rep = analysis.check_theorem1_preconditions(graph, cfg.treatments, cfg.outcome)
    z = cfg.covariates if cfg.covariates is not None else tuple(sorted(rep.covariates))
    out = {"status": "checked", "theorem1_preconditions": rep.to_dict()}
    try:
        out["identifiable"] = analysis.is_identifiable_conditional(graph, cfg.treatments, {cfg.outcome}, z)
        out["available_for_modeling"] = analysis.is_available_for_modeling(
            graph, cfg.treatments, {cfg.outcome}, z
        )
    except analysis.NodeCapExceeded as exc:
        out["identifiable"] = None
        out["available_for_modeling"] = None
        out["note"] = str(exc)
    return out


# -- persistence ------------------------------------------------------------------

MAGIC = b"ACEK"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">4sHQI")  # magic, version, payload length, crc32


class PersistenceError(ValueError):
    pass


class VersionError(PersistenceError):
    pass


class CorruptPayloadError(PersistenceError):
    pass


def _pipeline_to_dict(p: TrainedPipeline) -> dict:
    return {
        "config": p.config.to_dict(),
        "m_z_y": learners.model_to_dict(p.m_z_y),
        "m_z_x": [learners.model_to_dict(m) for m in p.m_z_x],
        "m_xy": [learners.model_to_dict(m) for m in p.m_xy],
        "m_xx": [
            {"i": i, "j": j, "model": learners.model_to_dict(p.m_xx[(i, j)])}
            for (i, j) in sorted(p.m_xx)
        ],
    }


def _pipeline_from_dict(d: Mapping) -> TrainedPipeline:
    return TrainedPipeline(
        PipelineConfig.from_dict(d["config"]),
        learners.model_from_dict(d["m_z_y"]),
        tuple(learners.model_from_dict(m) for m in d["m_z_x"]),
        tuple(learners.model_from_dict(m) for m in d["m_xy"]),
        {(int(e["i"]), int(e["j"])): learners.model_from_dict(e["model"]) for e in d["m_xx"]},
    )


def dumps_pipeline(p: TrainedPipeline) -> bytes:
    # repr-based JSON floats round-trip every double exactly
    payload = zlib.compress(json.dumps(_pipeline_to_dict(p), separators=(",", ":")).encode("utf-8"))
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(payload), zlib.crc32(payload)) + payload


def loads_pipeline(blob: bytes) -> TrainedPipeline:
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise VersionError("not an ACEK pipeline file (bad magic bytes)")
    if len(blob) < _HEADER.size:
        raise CorruptPayloadError("truncated header")
    _, version, length, crc = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    payload = blob[_HEADER.size:]
    if len(payload) != length:
        raise CorruptPayloadError(f"payload is {len(payload)} bytes, header says {length}")
    if zlib.crc32(payload) != crc:
        raise CorruptPayloadError("payload checksum mismatch")
    try:
        tree = json.loads(zlib.decompress(payload).decode("utf-8"))
        return _pipeline_from_dict(tree)
    except (zlib.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptPayloadError(f"cannot decode pipeline: {exc}") from None


def save_pipeline(p: TrainedPipeline, sink: str | IO[bytes]) -> None:
    blob = dumps_pipeline(p)
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        with open(sink, "wb") as fh:
            fh.write(blob)


def load_pipeline(source: str | IO[bytes]) -> TrainedPipeline:
    if hasattr(source, "read"):
        return loads_pipeline(source.read())
    with open(source, "rb") as fh:
        return loads_pipeline(fh.read())
