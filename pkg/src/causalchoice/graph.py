"""Causal DAGs, background knowledge and d-separation queries."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable


class CycleError(ValueError):
    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"adding {edge[0]} -> {edge[1]} creates a directed cycle")


class QueryError(ValueError):
    """Malformed structural query (bad path, endpoint in conditioning set, ...)."""


class CausalDag:
    """Directed acyclic graph over an ordered list of named variables.

    Acyclicity is checked on every mutation; a rejected edge leaves the graph
    unchanged.  Ancestor/descendant sets are cached and dropped on mutation.
    """

    def __init__(self, variables: Iterable[str] = (), edges: Iterable[tuple[str, str]] = ()):
        self.variables: list[str] = []
        self._parents: dict[str, set[str]] = {}
        self._children: dict[str, set[str]] = {}
        self._desc: dict[str, frozenset[str]] | None = None
        for v in variables:
            self.add_variable(v)
        for a, b in edges:
            self.add_edge(a, b)

    # -- construction -----------------------------------------------------

    def add_variable(self, name: str) -> None:
        if name not in self._parents:
            self.variables.append(name)
            self._parents[name] = set()
            self._children[name] = set()

    def add_edge(self, a: str, b: str) -> None:
        for v in (a, b):
            self.add_variable(v)
        if a in self._parents[b]:
            return
        if a == b or self.has_directed_path(b, a):
            raise CycleError((a, b))
        self._parents[b].add(a)
        self._children[a].add(b)
        self._desc = None

    def remove_edge(self, a: str, b: str) -> None:
        self._parents[b].discard(a)
        self._children[a].discard(b)
        self._desc = None

    def copy(self) -> "CausalDag":
        return CausalDag(self.variables, self.edges)

    # -- queries ------------------------------------------------------------

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted((a, b) for b in self.variables for a in self._parents[b])

    def _check(self, x: str) -> None:
        if x not in self._parents:
            raise KeyError(f"unknown variable {x!r}")

    def parents(self, x: str) -> set[str]:
        self._check(x)
        return set(self._parents[x])

    def children(self, x: str) -> set[str]:
        self._check(x)
        return set(self._children[x])

    def has_edge(self, a: str, b: str) -> bool:
        return a in self._parents.get(b, ())

    def adjacent(self, a: str, b: str) -> bool:
        return self.has_edge(a, b) or self.has_edge(b, a)

    def has_directed_path(self, a: str, b: str) -> bool:
        if a not in self._children or b not in self._children:
            return False
        stack, seen = [a], {a}
        while stack:
            v = stack.pop()
            if v == b:
                return True
            for c in self._children[v]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def descendants(self, x: str) -> frozenset[str]:
        """Strict descendants of ``x`` (cached transitive closure)."""
        self._check(x)
        if self._desc is None:
            desc: dict[str, frozenset[str]] = {}
            for v in reversed(self.topological_order()):
                acc = set()
                for c in self._children[v]:
                    acc.add(c)
                    acc |= desc[c]
                desc[v] = frozenset(acc)
            self._desc = desc
        return self._desc[x]

    def ancestors(self, x: str) -> set[str]:
        self._check(x)
        return {v for v in self.variables if x in self.descendants(v)}

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; ties resolved by declaration order."""
        pos = {v: i for i, v in enumerate(self.variables)}
        indeg = {v: len(self._parents[v]) for v in self.variables}
        ready = sorted((v for v in self.variables if indeg[v] == 0), key=pos.get)
        out = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            for c in sorted(self._children[v], key=pos.get):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready.sort(key=pos.get)
        return out

    def is_exogenous(self, x: str) -> bool:
        return not self.parents(x)

    def endogenous(self) -> list[str]:
        return [v for v in self.topological_order() if self._parents[v]]

    def __eq__(self, other):
        return (
            isinstance(other, CausalDag)
            and set(self.variables) == set(other.variables)
            and self.edges == other.edges
        )

    def __repr__(self):
        return f"CausalDag({len(self.variables)} variables, {len(self.edges)} edges)"

    # -- text format ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        isolated = [v for v in self.variables if not self._parents[v] and not self._children[v]]
        for v in isolated:
            lines.append(v)
        lines.extend(f"{a} -> {b}" for a, b in self.edges)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CausalDag":
        dag = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" in line:
                a, b = (s.strip() for s in line.split("->", 1))
                if not a or not b:
                    raise ValueError(f"line {lineno}: malformed edge {raw!r}")
                dag.add_edge(a, b)
            else:
                dag.add_variable(line)
        return dag


def parents(dag: CausalDag, x: str) -> set[str]:
    return dag.parents(x)


# ------------------------------------------------------------------ triples


def classify_triple(dag: CausalDag, a: str, m: str, b: str) -> str:
    """Return ``"chain"``, ``"fork"`` or ``"collider"`` for the path a - m - b."""
    if len({a, m, b}) != 3:
        raise QueryError("triple must have three distinct variables")
    if not (dag.adjacent(a, m) and dag.adjacent(m, b)):
        raise QueryError(f"{a} - {m} - {b} is not a path in the graph")
    into_m_from_a = dag.has_edge(a, m)
    into_m_from_b = dag.has_edge(b, m)
    if into_m_from_a and into_m_from_b:
        return "collider"
    if not into_m_from_a and not into_m_from_b:
        return "fork"
    return "chain"


def path_blocked(dag: CausalDag, path: list[str], z: Iterable[str]) -> bool:
    """Whether the undirected trail ``path`` is blocked by conditioning on ``z``."""
    z = set(z)
    if len(path) < 2 or len(set(path)) != len(path):
        raise QueryError("path must list at least two distinct vertices")
    for u, v in zip(path, path[1:]):
        if not dag.adjacent(u, v):
            raise QueryError(f"{u} and {v} are not adjacent")
    for a, m, b in zip(path, path[1:], path[2:]):
        kind = classify_triple(dag, a, m, b)
        if kind == "collider":
            if m not in z and not (dag.descendants(m) & z):
                return True
        elif m in z:
            return True
    return False


def undirected_paths(dag: CausalDag, x1: str, x2: str):
    """Yield every simple undirected path from ``x1`` to ``x2``."""
    nbrs = {v: dag.parents(v) | dag.children(v) for v in dag.variables}
    stack = [(x1, [x1])]
    while stack:
        v, path = stack.pop()
        if v == x2:
            yield path
            continue
        for w in sorted(nbrs[v], reverse=True):
            if w not in path:
                stack.append((w, path + [w]))


def _reachable(dag: CausalDag, x1: str, z: set[str]) -> set[str]:
    """Vertices d-connected to ``x1`` given ``z`` (Bayes-ball traversal)."""
    anc_z = set(z)
    for v in z:
        anc_z |= dag.ancestors(v)
    # state: (vertex, arrived_from_child) ; "up" = moving against edge direction
    visited: set[tuple[str, bool]] = set()
    reach: set[str] = set()
    frontier = [(x1, True)]
    while frontier:
        v, up = frontier.pop()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v not in z:
            reach.add(v)
        if up and v not in z:
            frontier.extend((p, True) for p in dag.parents(v))
            frontier.extend((c, False) for c in dag.children(v))
        elif not up:
            if v not in z:
                frontier.extend((c, False) for c in dag.children(v))
            if v in anc_z:
                frontier.extend((p, True) for p in dag.parents(v))
    reach.discard(x1)
    return reach


def d_separated(dag: CausalDag, x1: str, x2: str, z: Iterable[str] = (), method: str = "auto") -> bool:
    """Whether ``x1`` and ``x2`` are d-separated given ``z``.

    ``method="paths"`` enumerates every undirected path and checks blocking;
    ``"reachable"`` runs the linear-time reachability traversal.  ``"auto"``
    enumerates for graphs of at most 12 variables.
    """
    z = set(z)
    for v in (x1, x2, *z):
        dag._check(v)
    if x1 == x2:
        raise QueryError("endpoints must differ")
    if x1 in z or x2 in z:
        raise QueryError("an endpoint is in the conditioning set")
    if method == "auto":
        method = "paths" if len(dag.variables) <= 12 else "reachable"
    if method == "paths":
        return all(path_blocked(dag, p, z) for p in undirected_paths(dag, x1, x2))
    if method == "reachable":
        return x2 not in _reachable(dag, x1, z)
    raise ValueError(f"unknown method {method!r}")


def mechanism_sequence(dag: CausalDag, outcome: str) -> list[str]:
    """Endogenous variables needed to evaluate ``outcome``, parents first.

    Starting from the outcome, endogenous parents are appended breadth-first
    (each variable visited once); the evaluation order is the topological
    order restricted to that set, which is a valid reversal of the visit
    sequence.
    """
    dag._check(outcome)
    seq, visited = [outcome], set()
    i = 0
    while i < len(seq):
        x = seq[i]
        i += 1
        if x in visited:
            continue
        visited.add(x)
        for p in sorted(dag.parents(x)):
            if dag.parents(p) and p not in visited:
                seq.append(p)
    wanted = set(seq)
    return [v for v in dag.topological_order() if v in wanted]


# ---------------------------------------------------------------- knowledge


@dataclass
class Knowledge:
    """Background knowledge restricting the admissible edge set."""

    forbidden: set[tuple[str, str]] = field(default_factory=set)
    required: set[tuple[str, str]] = field(default_factory=set)
    tiers: list[list[str]] = field(default_factory=list)
    exogenous: set[str] = field(default_factory=set)

    def __post_init__(self):
        clash = self.forbidden & self.required
        if clash:
            raise ValueError(f"edges both required and forbidden: {sorted(clash)}")

    def tier_of(self, v: str):
        for i, tier in enumerate(self.tiers):
            if v in tier:
                return i
        return None

    def admits(self, a: str, b: str) -> bool:
        """Whether the edge a -> b is allowed (ignoring acyclicity)."""
        if (a, b) in self.forbidden or b in self.exogenous:
            return False
        ta, tb = self.tier_of(a), self.tier_of(b)
        return not (ta is not None and tb is not None and ta > tb)

    @classmethod
    def from_text(cls, text: str) -> "Knowledge":
        k = cls()
        tiers: dict[int, list[str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            head = head.lower()
            if head in ("forbid", "require") and "->" in rest:
                a, b = (s.strip() for s in rest.split("->", 1))
                (k.forbidden if head == "forbid" else k.required).add((a, b))
            elif head == "tier":
                num, _, names = rest.partition(":")
                tiers[int(num)] = [n.strip() for n in names.split(",") if n.strip()]
            elif line.lower().startswith("exogenous:"):
                names = line.split(":", 1)[1]
                k.exogenous |= {n.strip() for n in names.split(",") if n.strip()}
            else:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        k.tiers = [tiers[i] for i in sorted(tiers)]
        k.__post_init__()
        return k

    def to_text(self) -> str:
        lines = [f"forbid {a} -> {b}" for a, b in sorted(self.forbidden)]
        lines += [f"require {a} -> {b}" for a, b in sorted(self.required)]
        lines += [f"tier {i + 1}: {', '.join(t)}" for i, t in enumerate(self.tiers)]
        if self.exogenous:
            lines.append("exogenous: " + ", ".join(sorted(self.exogenous)))
        return "\n".join(lines) + "\n"


def check_knowledge(dag: CausalDag, k: Knowledge) -> list[str]:
    violations = []
    for a, b in dag.edges:
        if (a, b) in k.forbidden:
            violations.append(f"forbidden edge present: {a} -> {b}")
        ta, tb = k.tier_of(a), k.tier_of(b)
        if ta is not None and tb is not None and ta > tb:
            violations.append(f"edge crosses tiers backward: {a} -> {b}")
    for a, b in sorted(k.required):
        if not dag.has_edge(a, b):
            violations.append(f"required edge missing: {a} -> {b}")
    for v in sorted(k.exogenous):
        if v in dag.variables and dag.parents(v):
            violations.append(f"exogenous-only variable has parents: {v}")
    return violations


def random_dag(n: int, p: float, rng, names=None) -> CausalDag:
    """Erdos-Renyi DAG over a random ordering, for tests and benchmarks."""
    names = list(names) if names is not None else [f"x{i}" for i in range(n)]
    order = list(rng.permutation(n))
    dag = CausalDag(names)
    for i, j in combinations(range(n), 2):
        if rng.random() < p:
            dag.add_edge(names[order[i]], names[order[j]])
    return dag
