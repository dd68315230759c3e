"""Semi-Markovian causal graphs.

A :class:`CausalGraph` holds observed nodes, directed edges, bidirected arcs
(each one shorthand for a latent common cause with exactly two children) and
optional explicit latent nodes, which may have any number of children.
Graphs are immutable; every surgery returns a new graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

__all__ = [
    "CausalGraph",
    "GraphError",
    "CycleError",
    "build_graph",
    "graph_from_dict",
    "graph_to_dict",
    "load_graph",
]


class GraphError(ValueError):
    """Invalid graph construction or query."""


class CycleError(GraphError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("directed cycle: " + " -> ".join(cycle))


def _arc(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class CausalGraph:
    observed: frozenset[str]
    directed: frozenset[tuple[str, str]]
    bidirected: frozenset[tuple[str, str]] = frozenset()
    latents: frozenset[str] = frozenset()
    order: tuple[str, ...] = field(default=(), compare=False, repr=False)

    # -- basic adjacency over observed and explicit latent nodes -------------

    @cached_property
    def _parents(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {v: set() for v in self.observed | self.latents}
        for a, b in self.directed:
            out[b].add(a)
        return {k: frozenset(v) for k, v in out.items()}

    @cached_property
    def _children(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {v: set() for v in self.observed | self.latents}
        for a, b in self.directed:
            out[a].add(b)
        return {k: frozenset(v) for k, v in out.items()}

    def parents(self, v: str) -> frozenset[str]:
        """Observed parents of ``v``."""
        return frozenset(p for p in self._parents[v] if p in self.observed)

    def children(self, v: str) -> frozenset[str]:
        return frozenset(c for c in self._children[v] if c in self.observed)

    def latent_parents(self, v: str) -> frozenset[str]:
        """Latent parents of ``v`` under the canonical expansion."""
        explicit = {p for p in self._parents[v] if p in self.latents}
        arcs = {self.arc_latent_name(a) for a in self.bidirected if v in a}
        return frozenset(explicit | arcs)

    @property
    def nodes(self) -> tuple[str, ...]:
        """Observed nodes in declaration order."""
        return self.order

    def check_nodes(self, nodes: Iterable[str]) -> frozenset[str]:
        nodes = frozenset(nodes)
        unknown = nodes - self.observed
        if unknown:
            raise GraphError(f"unknown node(s): {sorted(unknown)}")
        return nodes

    # -- latent expansion ----------------------------------------------------

    def arc_latent_name(self, arc: tuple[str, str]) -> str:
        return self._arc_names[arc]

    @cached_property
    def _arc_names(self) -> dict[tuple[str, str], str]:
        taken = set(self.observed) | set(self.latents)
        names = {}
        for a, b in sorted(self.bidirected):
            name = f"U[{a},{b}]"
            while name in taken:
                name += "'"
            taken.add(name)
            names[(a, b)] = name
        return names

    @cached_property
    def expanded(self) -> tuple[dict[str, frozenset[str]], dict[str, frozenset[str]], frozenset[str]]:
        """(parents, children, latent set) with one fresh latent per bidirected arc."""
        parents = {k: set(v) for k, v in self._parents.items()}
        children = {k: set(v) for k, v in self._children.items()}
        latents = set(self.latents)
        for arc in sorted(self.bidirected):
            u = self.arc_latent_name(arc)
            latents.add(u)
            parents[u] = set()
            children[u] = set(arc)
            for v in arc:
                parents[v].add(u)
        return (
            {k: frozenset(v) for k, v in parents.items()},
            {k: frozenset(v) for k, v in children.items()},
            frozenset(latents),
        )

    @cached_property
    def confounders(self) -> tuple[frozenset[str], ...]:
        """Observed child sets of every latent (arcs and explicit latents)."""
        groups = [frozenset(a) for a in self.bidirected]
        for u in self.latents:
            ch = self.children(u)
            if len(ch) >= 2:
                groups.append(ch)
        return tuple(groups)

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        """Observed nodes in a topological order (ties in declaration order)."""
        rank = {v: i for i, v in enumerate(self.order)}
        indeg = {v: len(self.parents(v)) for v in self.observed}
        ready = sorted((v for v, d in indeg.items() if d == 0), key=rank.__getitem__)
        out = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            for c in sorted(self.children(v), key=rank.__getitem__):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=rank.__getitem__)
        return tuple(out)

    # -- constructors for derived graphs ---------------------------------------

    def _replace(self, directed=None, bidirected=None) -> "CausalGraph":
        return CausalGraph(
            observed=self.observed,
            directed=self.directed if directed is None else frozenset(directed),
            bidirected=self.bidirected if bidirected is None else frozenset(bidirected),
            latents=self.latents,
            order=self.order,
        )

    def __str__(self) -> str:
        parts = [f"{a}->{b}" for a, b in sorted(self.directed)]
        parts += [f"{a}<->{b}" for a, b in sorted(self.bidirected)]
        return f"CausalGraph({', '.join(self.order)}; {', '.join(parts)})"


def _find_cycle(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    children: dict[str, list[str]] = {v: [] for v in nodes}
    for a, b in edges:
        children[a].append(b)
    color = {v: 0 for v in children}
    stack_path: list[str] = []

    def visit(v: str) -> list[str] | None:
        color[v] = 1
        stack_path.append(v)
        for c in sorted(children[v]):
            if color[c] == 1:
                return stack_path[stack_path.index(c):] + [c]
            if color[c] == 0:
                found = visit(c)
                if found:
                    return found
        stack_path.pop()
        color[v] = 2
        return None

    for v in sorted(children):
        if color[v] == 0:
            found = visit(v)
            if found:
                return found
    return None


def build_graph(
    observed: Iterable[str],
    directed: Iterable[tuple[str, str]] = (),
    bidirected: Iterable[tuple[str, str]] = (),
    latents: Iterable[str] = (),
) -> CausalGraph:
    """Validate and build a :class:`CausalGraph`.

    Directed edges may start at a declared latent; latents may not have
    parents. Bidirected arcs join two observed nodes and are stored unordered.
    """
    order = tuple(observed)
    obs = frozenset(order)
    lat = frozenset(latents)
    if len(obs) != len(order):
        raise GraphError("duplicate observed node names")
    for name in order + tuple(lat):
        if not isinstance(name, str) or not name:
            raise GraphError(f"invalid node name {name!r}")
    if obs & lat:
        raise GraphError(f"names both observed and latent: {sorted(obs & lat)}")

    edges = set()
    for a, b in directed:
        if a not in obs | lat or b not in obs | lat:
            raise GraphError(f"unknown endpoint in edge {a}->{b}")
        if a == b:
            raise GraphError(f"self-loop on {a}")
        if b in lat:
            raise GraphError(f"latent {b} may not have parents")
        edges.add((a, b))

    arcs = set()
    for a, b in bidirected:
        if a not in obs or b not in obs:
            raise GraphError(f"unknown endpoint in arc {a}<->{b}")
        if a == b:
            raise GraphError(f"self-loop on {a}")
        arcs.add(_arc(a, b))

    cycle = _find_cycle(obs | lat, edges)
    if cycle:
        raise CycleError(cycle)
    return CausalGraph(obs, frozenset(edges), frozenset(arcs), lat, order)


def graph_from_dict(d: Mapping) -> CausalGraph:
    try:
        return build_graph(
            d["observed"],
            [tuple(e) for e in d.get("directed", [])],
            [tuple(e) for e in d.get("bidirected", [])],
            d.get("latents", []),
        )
    except KeyError as exc:
        raise GraphError(f"graph object missing key {exc}") from None


def graph_to_dict(g: CausalGraph) -> dict:
    d = {
        "observed": list(g.order),
        "directed": [list(e) for e in sorted(g.directed)],
        "bidirected": [list(a) for a in sorted(g.bidirected)],
    }
    if g.latents:
        d["latents"] = sorted(g.latents)
    return d


def load_graph(path) -> CausalGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))
