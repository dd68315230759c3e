"""Exact evaluation of finite discrete structural causal models.

Used as a brute-force ground truth: joint distributions, interventional
distributions by truncated factorization, the equivalent sum-of-ratios form,
conditional interventional distributions, and the observational formula for
P(y | do(x), z) that the residual cascade relies on.

CPT layout: the table for ``v`` has one axis per parent followed by a final
axis for ``v`` itself. Parents are ordered as observed parents in the graph's
declaration order, then latent parents sorted by name (bidirected arcs expand
to latents named ``U[a,b]``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import analysis
from .graph import CausalGraph, graph_from_dict, graph_to_dict

__all__ = [
    "DiscreteSCM",
    "JointTable",
    "OracleError",
    "DEFAULT_CELL_CAP",
    "joint_distribution",
    "do_effect",
    "do_effect_sum_of_ratios",
    "conditional_do_effect",
    "lemma1_rhs",
    "random_discrete_scm",
    "scm_from_dict",
    "scm_to_dict",
    "load_scm",
]

DEFAULT_CELL_CAP = 10**7


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class JointTable:
    variables: tuple[str, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != len(self.variables):
            raise OracleError("table rank does not match variable count")
        object.__setattr__(self, "probabilities", p)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return self.probabilities.shape

    def prob(self, assignment: Mapping[str, int]) -> float:
        return float(self.probabilities[tuple(assignment[v] for v in self.variables)])

    def marginal(self, keep: Iterable[str]) -> "JointTable":
        keep = [v for v in self.variables if v in set(keep)]
        drop = tuple(i for i, v in enumerate(self.variables) if v not in keep)
        return JointTable(tuple(keep), self.probabilities.sum(axis=drop))

    def total(self) -> float:
        return float(self.probabilities.sum())


@dataclass(frozen=True)
class DiscreteSCM:
    graph: CausalGraph
    cardinalities: Mapping[str, int]
    cpts: Mapping[str, np.ndarray]
    latent_priors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        _, _, latents = g.expanded
        cards = dict(self.cardinalities)
        for v in list(g.order) + sorted(latents):
            k = cards.get(v)
            if k is None or int(k) < 2:
                raise OracleError(f"cardinality of {v} must be an integer >= 2")
        cpts = {}
        for v in g.order:
            if v not in self.cpts:
                raise OracleError(f"missing CPT for {v}")
            t = np.asarray(self.cpts[v], dtype=float)
            shape = tuple(cards[p] for p in self.parent_order(v)) + (cards[v],)
            if t.shape != shape:
                raise OracleError(f"CPT for {v} has shape {t.shape}, expected {shape}")
            _check_dist(t, f"CPT for {v}")
            cpts[v] = t
        priors = {}
        for u in sorted(latents):
            if u not in self.latent_priors:
                raise OracleError(f"missing prior for latent {u}")
            t = np.asarray(self.latent_priors[u], dtype=float)
            if t.shape != (cards[u],):
                raise OracleError(f"prior for {u} has shape {t.shape}, expected {(cards[u],)}")
            _check_dist(t, f"prior for {u}")
            priors[u] = t
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "cpts", cpts)
        object.__setattr__(self, "latent_priors", priors)

    def parent_order(self, v: str) -> tuple[str, ...]:
        return _parent_order(self.graph, v)

    @property
    def latent_order(self) -> tuple[str, ...]:
        return tuple(sorted(self.graph.expanded[2]))


def _parent_order(g: CausalGraph, v: str) -> tuple[str, ...]:
    obs = tuple(p for p in g.order if p in g.parents(v))
    return obs + tuple(sorted(g.latent_parents(v)))


def _check_dist(t: np.ndarray, what: str) -> None:
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise OracleError(f"{what} has negative or non-finite entries")
    if np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-12):
        raise OracleError(f"{what} rows do not sum to 1")


def _full_joint(scm: DiscreteSCM, interventions: Mapping[str, int], cell_cap: int) -> tuple[tuple[str, ...], np.ndarray]:
    """Dense joint over observed (declaration order) then latents."""
    obs = scm.graph.order
    axes = tuple(obs) + scm.latent_order
    cards = scm.cardinalities
    cells = int(np.prod([cards[v] for v in axes], dtype=float))
    if cells > cell_cap:
        raise OracleError(f"product domain has {cells} cells, cap is {cell_cap}")
    pos = {v: i for i, v in enumerate(axes)}
    joint = np.ones([cards[v] for v in axes])

    def broadcast(table: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
        # move table axes into joint positions
        perm = sorted(range(len(names)), key=lambda i: pos[names[i]])
        t = np.transpose(table, perm)
        shape = [1] * len(axes)
        for i in perm:
            shape[pos[names[i]]] = cards[names[i]]
        return t.reshape(shape)

    for v in obs:
        if v in interventions:
            point = np.zeros(cards[v])
            point[interventions[v]] = 1.0
            joint = joint * broadcast(point, (v,))
        else:
            joint = joint * broadcast(scm.cpts[v], scm.parent_order(v) + (v,))
    for u in scm.latent_order:
        joint = joint * broadcast(scm.latent_priors[u], (u,))
    return axes, joint


def _observed_joint(scm, interventions, cell_cap) -> JointTable:
    axes, joint = _full_joint(scm, interventions, cell_cap)
    n_obs = len(scm.graph.order)
    p = joint.sum(axis=tuple(range(n_obs, len(axes))))
    return JointTable(tuple(scm.graph.order), p)


def _check_values(scm: DiscreteSCM, values: Mapping[str, int]) -> dict[str, int]:
    scm.graph.check_nodes(values)
    out = {}
    for v, val in values.items():
        k = scm.cardinalities[v]
        if not (isinstance(val, (int, np.integer)) and 0 <= val < k):
            raise OracleError(f"value {val!r} out of domain for {v} (cardinality {k})")
        out[v] = int(val)
    return out


def joint_distribution(scm: DiscreteSCM, cell_cap: int = DEFAULT_CELL_CAP) -> JointTable:
    """Observed joint, summing the full factorization over latent values."""
    return _observed_joint(scm, {}, cell_cap)


def do_effect(
    scm: DiscreteSCM,
    interventions: Mapping[str, int],
    targets: Iterable[str],
    cell_cap: int = DEFAULT_CELL_CAP,
) -> JointTable:
    """P(targets | do(interventions)) by truncated factorization."""
    interventions = _check_values(scm, interventions)
    targets = scm.graph.check_nodes(targets)
    if targets & set(interventions):
        raise OracleError("intervened variables may not be targets")
    return _observed_joint(scm, interventions, cell_cap).marginal(targets)


def do_effect_sum_of_ratios(
    scm: DiscreteSCM,
    interventions: Mapping[str, int],
    targets: Iterable[str],
    cell_cap: int = DEFAULT_CELL_CAP,
) -> JointTable:
    """P(targets | do(interventions)) from the observed joint alone.

    Sums P(y, x, v') / prod_i P(x_i | pa(x_i)) over the remaining variables,
    with every conditional read off the observed joint. Only valid for
    Markovian models, so graphs with latents are rejected.
    """
    g = scm.graph
    if g.bidirected or g.latents:
        raise OracleError("sum-of-ratios form requires a model without latents")
    interventions = _check_values(scm, interventions)
    targets = g.check_nodes(targets)
    if targets & set(interventions):
        raise OracleError("intervened variables may not be targets")
    joint = joint_distribution(scm, cell_cap)
    names = joint.variables
    p = joint.probabilities
    ratio = p.copy()
    for xv in interventions:
        fam = {xv} | g.parents(xv)
        num = _keepdims_marginal(p, names, fam)
        den = _keepdims_marginal(p, names, g.parents(xv))
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = num / den
        if np.any(~np.isfinite(cond)) or np.any(cond <= 0):
            raise OracleError(f"P({xv} | pa) undefined: zero-probability parent configuration")
        ratio = ratio / cond
    index = tuple(interventions.get(v, slice(None)) for v in names)
    sliced = ratio[index]
    rest = [v for v in names if v not in interventions]
    drop = tuple(i for i, v in enumerate(rest) if v not in targets)
    return JointTable(tuple(v for v in rest if v in targets), sliced.sum(axis=drop))


def _keepdims_marginal(p: np.ndarray, names: tuple[str, ...], keep) -> np.ndarray:
    drop = tuple(i for i, v in enumerate(names) if v not in keep)
    return p.sum(axis=drop, keepdims=True)


def conditional_do_effect(
    scm: DiscreteSCM,
    interventions: Mapping[str, int],
    targets: Iterable[str],
    conditions: Mapping[str, int],
    cell_cap: int = DEFAULT_CELL_CAP,
) -> JointTable:
    """P(targets | do(interventions), conditions) as a ratio of do-distributions."""
    conditions = _check_values(scm, conditions)
    targets = scm.graph.check_nodes(targets)
    if (targets & set(conditions)) or (set(interventions) & set(conditions)):
        raise OracleError("targets, interventions and conditions must be disjoint")
    both = do_effect(scm, interventions, targets | set(conditions), cell_cap)
    return _condition(both, targets, conditions)


def _condition(table: JointTable, targets, conditions: Mapping[str, int]) -> JointTable:
    index = tuple(conditions.get(v, slice(None)) for v in table.variables)
    sliced = table.probabilities[index]
    kept = tuple(v for v in table.variables if v not in conditions)
    sub = JointTable(kept, sliced).marginal(targets)
    mass = sub.total()
    if mass <= 0.0:
        raise OracleError(f"conditioning event {dict(conditions)} has probability zero")
    return JointTable(sub.variables, sub.probabilities / mass)


def lemma1_rhs(
    scm: DiscreteSCM,
    x: Mapping[str, int],
    y: Iterable[str],
    z: Mapping[str, int],
    cell_cap: int = DEFAULT_CELL_CAP,
) -> JointTable:
    """Observational expression for P(y | do(x), z).

    With Z_De = z ∩ De(x) ∩ De(y): returns P(y | x, z) when Z_De is empty,
    otherwise P(y | x, z∖Z_De) P(Z_De | y, x, z∖Z_De) / P(Z_De | x, z∖Z_De).
    Raises unless x ⊆ An(y) and P(y | do(x), z) is identifiable.

    The expression equals the interventional quantity when every other
    observed variable is in z and the model has no latent confounders; with
    latents or omitted variables it can differ even when both hypotheses hold.
    """
    g = scm.graph
    x = _check_values(scm, x)
    z = _check_values(scm, z)
    y = g.check_nodes(y)
    xs, zs = frozenset(x), frozenset(z)
    if not xs or not y:
        raise OracleError("x and y must be non-empty")
    if xs & y or xs & zs or y & zs:
        raise OracleError("x, y and z must be disjoint")
    an_y = analysis.ancestors(g, y)
    if not xs <= an_y:
        raise OracleError(f"hypothesis violated: {sorted(xs - an_y)} not ancestors of y")
    if not analysis.is_identifiable_conditional(g, xs, y, zs):
        raise OracleError("hypothesis violated: P(y | do(x), z) is not identifiable")

    z_de = zs & analysis.descendants(g, xs) & analysis.descendants(g, y)
    joint = joint_distribution(scm, cell_cap).marginal(y | xs | zs)
    if not z_de:
        return _condition(joint, y, {**x, **z})

    # q[y..., z_de...] = P(y, x, z_rest, z_de) at the fixed x and z_rest
    given_rest = {**x, **{v: z[v] for v in zs - z_de}}
    index = tuple(given_rest.get(v, slice(None)) for v in joint.variables)
    free = tuple(v for v in joint.variables if v not in given_rest)
    ys = tuple(v for v in free if v in y)
    zd = tuple(v for v in free if v in z_de)
    q = np.transpose(joint.probabilities[index], [free.index(v) for v in ys + zd])
    zd_axes = tuple(range(len(ys), len(ys) + len(zd)))
    at_z = (Ellipsis,) + tuple(z[v] for v in zd)

    total = q.sum()
    q_y = q.sum(axis=zd_axes)
    if total <= 0.0 or np.any(q_y <= 0.0):
        raise OracleError("zero-probability conditioning event in Z_De terms")
    p_y_given_rest = q_y / total
    p_zde_given_y = q[at_z] / q_y
    p_zde_given_rest = q[at_z].sum() / total
    if p_zde_given_rest <= 0.0:
        raise OracleError(f"P(Z_De = {dict((v, z[v]) for v in zd)} | x, z) is zero")
    return JointTable(ys, p_y_given_rest * p_zde_given_y / p_zde_given_rest)


# -- construction helpers ----------------------------------------------------


def random_discrete_scm(
    g: CausalGraph,
    rng: np.random.Generator,
    cardinality: int | Mapping[str, int] = 2,
    floor: float = 0.05,
) -> DiscreteSCM:
    """Random strictly positive CPTs for ``g`` (every entry ≥ ``floor``/k)."""
    _, _, latents = g.expanded
    names = list(g.order) + sorted(latents)
    if isinstance(cardinality, Mapping):
        cards = {v: int(cardinality.get(v, 2)) for v in names}
    else:
        cards = {v: int(cardinality) for v in names}

    def draw(shape):
        k = shape[-1]
        t = rng.dirichlet(np.ones(k), size=shape[:-1] or None)
        t = (1 - floor) * t + floor / k
        return t / t.sum(axis=-1, keepdims=True)

    cpts = {}
    for v in g.order:
        shape = tuple(cards[p] for p in _parent_order(g, v)) + (cards[v],)
        cpts[v] = draw(shape)
    priors = {u: draw((cards[u],)) for u in sorted(latents)}
    return DiscreteSCM(g, cards, cpts, priors)


def scm_from_dict(d: Mapping) -> DiscreteSCM:
    g = graph_from_dict(d["graph"])
    return DiscreteSCM(
        g,
        {k: int(v) for k, v in d["cardinalities"].items()},
        {k: np.asarray(v, dtype=float) for k, v in d["cpts"].items()},
        {k: np.asarray(v, dtype=float) for k, v in d.get("latent_priors", {}).items()},
    )


def scm_to_dict(scm: DiscreteSCM) -> dict:
    return {
        "graph": graph_to_dict(scm.graph),
        "cardinalities": dict(scm.cardinalities),
        "cpts": {k: v.tolist() for k, v in scm.cpts.items()},
        "latent_priors": {k: v.tolist() for k, v in scm.latent_priors.items()},
    }


def load_scm(path) -> DiscreteSCM:
    with open(path, encoding="utf-8") as fh:
        return scm_from_dict(json.load(fh))
