from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MeanModel:
    value: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "MeanModel":
        return cls(float(np.mean(y)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], self.value)

    def to_dict(self) -> dict:
        return {"value": self.value}

    @classmethod
    def from_dict(cls, d) -> "MeanModel":
        return cls(float(d["value"]))


@dataclass(frozen=True)
class LeastSquaresModel:
    """Additive polynomial least squares with intercept.

    Each feature is centred and scaled, then expanded to powers 1..degree.
    """

    degree: int
    center: np.ndarray
    scale: np.ndarray
    intercept: float
    coef: np.ndarray  # (n_features, degree)
    ridge: bool = False

    @staticmethod
    def _design(z: np.ndarray, degree: int) -> np.ndarray:
        cols = [np.ones(z.shape[0])]
        for j in range(z.shape[1]):
            for p in range(1, degree + 1):
                cols.append(z[:, j] ** p)
        return np.column_stack(cols)

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, degree: int) -> "LeastSquaresModel":
        n_distinct = len(np.unique(x, axis=0))
        if n_distinct < degree + 1:
            raise ValueError(
                f"least squares of degree {degree} needs >= {degree + 1} distinct points, got {n_distinct}"
            )
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        z = (x - center) / scale
        a = cls._design(z, degree)
        sv = np.linalg.svd(a, compute_uv=False)
        tol = sv[0] * max(a.shape) * np.finfo(float).eps
        ridge = bool(np.sum(sv > tol) < a.shape[1])
        if ridge:
            warnings.warn("rank-deficient least squares design; using ridge fallback", RuntimeWarning)
            lam = 1e-8 * float(np.trace(a.T @ a)) / a.shape[1]
            beta = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ y)
        else:
            beta = np.linalg.lstsq(a, y, rcond=None)[0]
            # one refinement step against the exact prediction path
            model = cls._from_beta(degree, center, scale, beta, ridge)
            beta = beta + np.linalg.lstsq(a, y - model.predict(x), rcond=None)[0]
        return cls._from_beta(degree, center, scale, beta, ridge)

    @classmethod
    def _from_beta(cls, degree, center, scale, beta, ridge):
        coef = np.asarray(beta[1:], dtype=float).reshape(-1, degree)
        return cls(degree, np.asarray(center, float), np.asarray(scale, float), float(beta[0]), coef, ridge)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.full(x.shape[0], self.intercept)
        for j in range(self.coef.shape[0]):
            zj = (x[:, j] - self.center[j]) / self.scale[j]
            for p in range(1, self.degree + 1):
                out = out + self.coef[j, p - 1] * zj**p
        return out

    def affine_coefficients(self) -> tuple[float, np.ndarray]:
        """(intercept, slopes) in raw feature units; degree 1 only."""
        if self.degree != 1:
            raise ValueError("affine form only exists for degree 1")
        slopes = self.coef[:, 0] / self.scale
        return self.intercept - float(slopes @ self.center), slopes

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, d) -> "LeastSquaresModel":
        degree = int(d["degree"])
        return cls(
            degree,
            np.asarray(d["center"], float),
            np.asarray(d["scale"], float),
            float(d["intercept"]),
            np.asarray(d["coef"], float).reshape(-1, degree),
            bool(d["ridge"]),
        )
