"""Structural queries on causal graphs.

Kinship sets, graph surgery, d-separation, do-calculus side conditions,
C-components, hedge search and the identifiability tests built on them.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable

from .graph import CausalGraph, GraphError

__all__ = [
    "Kinship",
    "Hedge",
    "NodeCapExceeded",
    "DEFAULT_NODE_CAP",
    "relatives",
    "surgery",
    "observed_projection",
    "d_separated",
    "docalc_rule_applicable",
    "is_c_component",
    "c_components",
    "find_hedge",
    "is_identifiable",
    "maximal_do_conditioning",
    "is_identifiable_conditional",
    "is_available_for_modeling",
    "Theorem1Report",
    "check_theorem1_preconditions",
]

DEFAULT_NODE_CAP = 12


class NodeCapExceeded(GraphError):
    """The graph is too large for exhaustive hedge search; the answer is unknown."""


class Kinship(enum.Enum):
    PARENTS = "parents"
    CHILDREN = "children"
    ANCESTORS = "ancestors"
    DESCENDANTS = "descendants"
    LATENT_PARENTS = "latent_parents"
    INDEPENDENTS = "independents"


def _closure(start: Iterable[str], step) -> set[str]:
    seen: set[str] = set()
    frontier = list(start)
    while frontier:
        v = frontier.pop()
        for w in step(v):
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    return seen


def ancestors(g: CausalGraph, a: Iterable[str]) -> frozenset[str]:
    """Observed proper ancestors of the set ``a`` (``a`` itself excluded)."""
    a = frozenset(a)
    return frozenset(_closure(a, g.parents)) - a


def descendants(g: CausalGraph, a: Iterable[str]) -> frozenset[str]:
    a = frozenset(a)
    return frozenset(_closure(a, g.children)) - a


def relatives(g: CausalGraph, a: Iterable[str], kind: Kinship) -> frozenset[str]:
    a = g.check_nodes(a)
    if kind is Kinship.PARENTS:
        return frozenset().union(*(g.parents(v) for v in a)) - a
    if kind is Kinship.CHILDREN:
        return frozenset().union(*(g.children(v) for v in a)) - a
    if kind is Kinship.ANCESTORS:
        return ancestors(g, a)
    if kind is Kinship.DESCENDANTS:
        return descendants(g, a)
    if kind is Kinship.LATENT_PARENTS:
        return frozenset().union(*(g.latent_parents(v) for v in a))
    if kind is Kinship.INDEPENDENTS:
        # V with no open (unconditioned) path to a, i.e. marginally d-separated
        reach = _reachable(g, a, frozenset())
        return g.observed - a - reach
    raise ValueError(f"unknown kinship {kind!r}")


def surgery(
    g: CausalGraph, cut_incoming: Iterable[str] = (), cut_outgoing: Iterable[str] = ()
) -> CausalGraph:
    """Delete arrows into ``cut_incoming`` then arrows out of ``cut_outgoing``.

    Cutting incoming arrows also removes latent edges into those nodes, so a
    bidirected arc touching a cut node disappears.
    """
    inc = g.check_nodes(cut_incoming)
    out = g.check_nodes(cut_outgoing)
    if not inc and not out:
        return g
    directed = {(a, b) for a, b in g.directed if b not in inc and a not in out}
    bidirected = {arc for arc in g.bidirected if not (set(arc) & inc)}
    return g._replace(directed=directed, bidirected=bidirected)


def observed_projection(g: CausalGraph) -> CausalGraph:
    """Keep only arrows between observed variables."""
    directed = {(a, b) for a, b in g.directed if a in g.observed}
    return CausalGraph(g.observed, frozenset(directed), frozenset(), frozenset(), g.order)


def _reachable(g: CausalGraph, source: frozenset[str], given: frozenset[str]) -> frozenset[str]:
    """Observed nodes joined to ``source`` by an active path given ``given``.

    Bayes-ball traversal on the latent-expanded graph.
    """
    parents, children, _ = g.expanded
    # nodes with a descendant in ``given`` (or in it) open colliders
    opens = set(given) | _closure(given, parents.__getitem__)
    visited: set[tuple[str, bool]] = set()
    reach: set[str] = set()
    # (node, up): up=True means we arrived from a child
    stack = [(s, True) for s in source]
    while stack:
        v, up = stack.pop()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v not in given:
            reach.add(v)
        if up and v not in given:
            stack.extend((p, True) for p in parents[v])
            stack.extend((c, False) for c in children[v])
        elif not up:
            if v not in given:
                stack.extend((c, False) for c in children[v])
            if v in opens:
                stack.extend((p, True) for p in parents[v])
    return frozenset(reach & g.observed) - source


def _disjoint(*sets: frozenset[str]) -> None:
    for s, t in combinations(sets, 2):
        if s & t:
            raise GraphError(f"node sets overlap on {sorted(s & t)}")


def d_separated(g: CausalGraph, a: Iterable[str], b: Iterable[str], c: Iterable[str] = ()) -> bool:
    a, b, c = g.check_nodes(a), g.check_nodes(b), g.check_nodes(c)
    _disjoint(a, b, c)
    if not a or not b:
        return True
    return not (_reachable(g, a, c) & b)


def docalc_rule_applicable(
    g: CausalGraph,
    rule: int | str,
    y: Iterable[str],
    x: Iterable[str] = (),
    z: Iterable[str] = (),
    w: Iterable[str] = (),
) -> bool:
    """Side condition of do-calculus rule 1, 2 or 3 for P(y | do(x), z, w)."""
    y, x, z, w = (g.check_nodes(s) for s in (y, x, z, w))
    _disjoint(y, x, z, w)
    rule = str(rule).upper().lstrip("R")
    if rule == "1":
        h = surgery(g, cut_incoming=x)
    elif rule == "2":
        h = surgery(g, cut_incoming=x, cut_outgoing=z)
    elif rule == "3":
        an_w = ancestors(surgery(g, cut_incoming=x), w) | w
        h = surgery(g, cut_incoming=x | (z - an_w))
    else:
        raise ValueError(f"unknown do-calculus rule {rule!r}")
    return d_separated(h, y, z, x | w)


# -- C-components and hedges --------------------------------------------------


def c_components(g: CausalGraph, nodes: Iterable[str] | None = None) -> list[frozenset[str]]:
    """Partition ``nodes`` (default: all observed) into confounded components
    of the subgraph they induce."""
    nodes = g.observed if nodes is None else g.check_nodes(nodes)
    parent = {v: v for v in nodes}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for group in g.confounders:
        members = [v for v in group if v in nodes]
        for a, b in zip(members, members[1:]):
            parent[find(a)] = find(b)
    comps: dict[str, set[str]] = {}
    for v in nodes:
        comps.setdefault(find(v), set()).add(v)
    order = {v: i for i, v in enumerate(g.order)}
    return sorted((frozenset(c) for c in comps.values()), key=lambda c: min(order[v] for v in c))


def is_c_component(g: CausalGraph) -> bool:
    return len(c_components(g)) <= 1


@dataclass(frozen=True)
class Hedge:
    forest_f: frozenset[str]
    forest_f_prime: frozenset[str]
    root_set: frozenset[str]
    x_subset: frozenset[str]
    y_subset: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "F": sorted(self.forest_f),
            "F_prime": sorted(self.forest_f_prime),
            "R": sorted(self.root_set),
            "x": sorted(self.x_subset),
            "y": sorted(self.y_subset),
        }


class _SubsetTable:
    """Per-graph bitmask tables of all node subsets that are C-forests,
    grouped by root set (nodes with no children inside the subset)."""

    def __init__(self, g: CausalGraph):
        self.names = list(g.order)
        idx = {v: i for i, v in enumerate(self.names)}
        n = len(self.names)
        self.bit = {v: 1 << i for v, i in idx.items()}
        child_mask = [0] * n
        for a, b in g.directed:
            if a in idx:
                child_mask[idx[a]] |= 1 << idx[b]
        groups = [sum(self.bit[v] for v in grp) for grp in g.confounders]
        by_root: dict[int, list[int]] = {}
        for s in range(1, 1 << n):
            if not _connected(s, groups):
                continue
            roots = 0
            rest = s
            while rest:
                low = rest & -rest
                i = low.bit_length() - 1
                if not child_mask[i] & s:
                    roots |= low
                rest ^= low
            by_root.setdefault(roots, []).append(s)
        for members in by_root.values():
            members.sort(key=lambda m: (bin(m).count("1"), m))
        self.by_root = by_root

    def mask(self, nodes: Iterable[str]) -> int:
        return sum(self.bit[v] for v in nodes)

    def names_of(self, mask: int) -> frozenset[str]:
        return frozenset(v for v in self.names if self.bit[v] & mask)


def _connected(s: int, groups: list[int]) -> bool:
    """Is bitmask ``s`` a single component under the confounder groups?"""
    low = s & -s
    comp = low
    changed = True
    while changed:
        changed = False
        for grp in groups:
            inside = grp & s
            if inside & comp and inside & ~comp:
                comp |= inside
                changed = True
    return comp == s


@lru_cache(maxsize=256)
def _subset_table(g: CausalGraph) -> _SubsetTable:
    return _SubsetTable(g)


def _nonempty_subsets(items: frozenset[str]):
    items = sorted(items)
    for r in range(1, len(items) + 1):
        yield from (frozenset(c) for c in combinations(items, r))


def _check_hedge_args(g, x, y, node_cap):
    x, y = g.check_nodes(x), g.check_nodes(y)
    if not x or not y:
        raise GraphError("x and y must be non-empty")
    _disjoint(x, y)
    if len(g.observed) > node_cap:
        raise NodeCapExceeded(
            f"{len(g.observed)} observed nodes exceeds hedge search cap {node_cap}"
        )
    return x, y


def _hedge_for(g: CausalGraph, table: _SubsetTable, x: frozenset[str], y: frozenset[str]) -> Hedge | None:
    cut = surgery(g, cut_incoming=x)
    allowed = table.mask((ancestors(cut, y) | y) - x)
    xmask = table.mask(x)
    for roots in sorted(table.by_root, key=lambda m: (bin(m).count("1"), m)):
        if roots & ~allowed:
            continue
        members = table.by_root[roots]
        inner = [m for m in members if not m & xmask]
        outer = [m for m in members if m & xmask]
        for f in outer:
            for fp in inner:
                if fp & f == fp:
                    return Hedge(
                        table.names_of(f), table.names_of(fp), table.names_of(roots), x, y
                    )
    return None


def find_hedge(
    g: CausalGraph, x: Iterable[str], y: Iterable[str], node_cap: int = DEFAULT_NODE_CAP
) -> Hedge | None:
    """Search every x' ⊆ x, y' ⊆ y for a hedge for P(y' | do(x')).

    Exhaustive over observed node subsets; raises :class:`NodeCapExceeded`
    rather than guessing on larger graphs.
    """
    x, y = _check_hedge_args(g, x, y, node_cap)
    table = _subset_table(g)
    for xs in _nonempty_subsets(x):
        for ys in _nonempty_subsets(y):
            h = _hedge_for(g, table, xs, ys)
            if h is not None:
                return h
    return None


def is_identifiable(
    g: CausalGraph, x: Iterable[str], y: Iterable[str], node_cap: int = DEFAULT_NODE_CAP
) -> bool:
    return find_hedge(g, x, y, node_cap) is None


def maximal_do_conditioning(
    g: CausalGraph, x: Iterable[str], y: Iterable[str], z: Iterable[str]
) -> frozenset[str]:
    """Largest Z' ⊆ z whose members can be moved into the do-set by rule 2.

    A member ``zi`` moves when y is d-separated from it given the current
    do-set and the remaining conditioning variables, in the graph with arrows
    into the do-set and out of ``zi`` removed.
    """
    do, rest = set(g.check_nodes(x)), set(g.check_nodes(z))
    y = g.check_nodes(y)
    _disjoint(frozenset(do), y, frozenset(rest))
    moved: set[str] = set()
    progress = True
    while progress:
        progress = False
        for zi in sorted(rest):
            h = surgery(g, cut_incoming=do, cut_outgoing={zi})
            if d_separated(h, y, {zi}, do | (rest - {zi})):
                do.add(zi)
                rest.discard(zi)
                moved.add(zi)
                progress = True
                break
    return frozenset(moved)


def is_identifiable_conditional(
    g: CausalGraph,
    x: Iterable[str],
    y: Iterable[str],
    z: Iterable[str] = (),
    node_cap: int = DEFAULT_NODE_CAP,
) -> bool:
    """Identifiability of P(y | do(x), z)."""
    x, y, z = g.check_nodes(x), g.check_nodes(y), g.check_nodes(z)
    _disjoint(x, y, z)
    moved = maximal_do_conditioning(g, x, y, z)
    return is_identifiable(g, x | moved, y | (z - moved), node_cap)


def is_available_for_modeling(
    g: CausalGraph,
    x: Iterable[str],
    y: Iterable[str],
    z: Iterable[str] = (),
    node_cap: int = DEFAULT_NODE_CAP,
) -> bool:
    """Identifiable, and no observed arrow points into any treatment."""
    x, y, z = g.check_nodes(x), g.check_nodes(y), g.check_nodes(z)
    if not is_identifiable_conditional(g, x, y, z, node_cap):
        return False
    return observed_projection(surgery(g, cut_incoming=x)) == observed_projection(g)


@dataclass(frozen=True)
class Theorem1Report:
    x_in_ancestors: bool
    z_de_empty: bool
    z_de: frozenset[str]
    covariates: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "x_in_ancestors": self.x_in_ancestors,
            "z_de_empty": self.z_de_empty,
            "z_de": sorted(self.z_de),
            "covariates": sorted(self.covariates),
        }


def check_theorem1_preconditions(g: CausalGraph, x: Iterable[str], y: str) -> Theorem1Report:
    """Check x ⊆ An(y) and that no covariate descends from both x and y.

    Covariates are every observed node other than y and x.
    """
    x = g.check_nodes(x)
    g.check_nodes([y])
    if y in x:
        raise GraphError("outcome must not be a treatment")
    z = g.observed - x - {y}
    z_de = z & descendants(g, x) & descendants(g, {y})
    return Theorem1Report(x <= ancestors(g, {y}), not z_de, frozenset(z_de), frozenset(z))
