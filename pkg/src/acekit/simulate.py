"""Synthetic data generators with known interventional expectations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .graph import CycleError, _find_cycle
from .rng import make_rng, normal, uniform

__all__ = [
    "SINE_MODEL_NOISE_SD",
    "gen_paper_model",
    "paper_model_truth",
    "LinearGaussianSpec",
    "gen_linear_gaussian",
]

SINE_MODEL_NOISE_SD = 0.05


def gen_paper_model(n: int, seed: int) -> Dataset:
    """Z ~ U(0, 1), X = sin(Z) + U(-0.5, 0.5), Y = X Z + N(0, 0.05²).

    Draw order on the stream: n uniforms for Z, n for the X noise, then 2n
    for the Box-Muller normals of the Y noise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    z = uniform(rng, 0.0, 1.0, n)
    x = np.sin(z) + uniform(rng, -0.5, 0.5, n)
    y = x * z + normal(rng, 0.0, SINE_MODEL_NOISE_SD, n)
    return Dataset(("Z", "X", "Y"), np.column_stack([z, x, y]))


def paper_model_truth(x, z):
    """E[Y | do(X = x), Z = z] for the model above."""
    return np.asarray(x, dtype=float) * np.asarray(z, dtype=float)


@dataclass(frozen=True)
class LinearGaussianSpec:
    """Linear SCM: ``V = intercept + sum(coef[p] * p) + N(0, noise²)``.

    ``equations`` maps each variable to ``{"coef": {parent: c}, "noise": sd,
    "intercept": c0}``; variables are generated in topological order (ties in
    declaration order). Covariates default to every variable other than the
    outcome and the treatments.
    """

    equations: Mapping[str, Mapping]
    outcome: str
    treatments: tuple[str, ...]
    covariates: tuple[str, ...] | None = None
    variables: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        names = tuple(self.equations)
        object.__setattr__(self, "variables", names)
        object.__setattr__(self, "treatments", tuple(self.treatments))
        for v, eq in self.equations.items():
            for p in eq.get("coef", {}):
                if p not in self.equations:
                    raise ValueError(f"{v} depends on undeclared variable {p}")
            if float(eq.get("noise", 1.0)) < 0:
                raise ValueError(f"noise of {v} must be >= 0")
        cycle = _find_cycle(names, [(p, v) for v, eq in self.equations.items() for p in eq.get("coef", {})])
        if cycle:
            raise CycleError(cycle)
        for v in (self.outcome, *self.treatments):
            if v not in self.equations:
                raise ValueError(f"{v} is not a variable of the SCM")
        if self.covariates is None:
            used = {self.outcome, *self.treatments}
            object.__setattr__(self, "covariates", tuple(v for v in names if v not in used))
        else:
            object.__setattr__(self, "covariates", tuple(self.covariates))

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearGaussianSpec":
        return cls(
            equations={k: dict(v) for k, v in d["equations"].items()},
            outcome=d["outcome"],
            treatments=tuple(d["treatments"]),
            covariates=None if d.get("covariates") is None else tuple(d["covariates"]),
        )

    def topological_order(self) -> list[str]:
        done: list[str] = []
        remaining = list(self.variables)
        while remaining:
            for v in remaining:
                if all(p in done for p in self.equations[v].get("coef", {})):
                    done.append(v)
                    remaining.remove(v)
                    break
        return done

    def _matrices(self):
        names = self.variables
        idx = {v: i for i, v in enumerate(names)}
        m = len(names)
        b = np.zeros((m, m))
        c = np.zeros(m)
        sd = np.zeros(m)
        for v, eq in self.equations.items():
            for p, w in eq.get("coef", {}).items():
                b[idx[v], idx[p]] = float(w)
            c[idx[v]] = float(eq.get("intercept", 0.0))
            sd[idx[v]] = float(eq.get("noise", 1.0))
        return idx, b, c, sd

    def do_expectation(self) -> Callable[[Sequence[float], Sequence[float]], float]:
        """Exact E[outcome | do(treatments = x), covariates = z].

        Under the intervention the system stays jointly Gaussian, so this is
        the Gaussian conditional mean of the outcome given the covariates.
        """
        idx, b, c, sd = self._matrices()
        m = len(self.variables)
        xi = [idx[v] for v in self.treatments]
        zi = [idx[v] for v in self.covariates]
        yi = idx[self.outcome]
        b_do = b.copy()
        sd_do = sd.copy()
        c_do = c.copy()
        b_do[xi, :] = 0.0
        sd_do[xi] = 0.0
        c_do[xi] = 0.0
        mix = np.linalg.inv(np.eye(m) - b_do)
        cov = mix @ np.diag(sd_do**2) @ mix.T
        # mean is affine in x: mix @ (c_do + E_x x)
        base = mix @ c_do
        x_gain = mix[:, xi]
        if zi:
            gain = cov[yi, zi] @ np.linalg.pinv(cov[np.ix_(zi, zi)])
        else:
            gain = np.zeros(0)

        def closure(x, z=()):
            x = np.asarray(x, dtype=float)
            z = np.asarray(z, dtype=float)
            mean = base + x_gain @ x
            return float(mean[yi] + gain @ (z - mean[zi]))

        return closure


def gen_linear_gaussian(spec: LinearGaussianSpec, n: int, seed: int):
    """Sample ``n`` rows and return ``(dataset, closure)``; see
    :meth:`LinearGaussianSpec.do_expectation` for the closure."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    idx, b, c, sd = spec._matrices()
    cols: dict[str, np.ndarray] = {}
    for v in spec.topological_order():
        val = c[idx[v]] + normal(rng, 0.0, sd[idx[v]], n)
        for p, w in spec.equations[v].get("coef", {}).items():
            val = val + float(w) * cols[p]
        cols[v] = val
    data = Dataset(spec.variables, np.column_stack([cols[v] for v in spec.variables]))
    return data, spec.do_expectation()
