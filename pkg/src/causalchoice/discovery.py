"""Score-based structure search over discrete data.

Greedy hill climbing in DAG space with a decomposable BIC score: a forward
phase of single-edge additions, a backward phase of deletions and a sweep
of reversals, repeated until no move improves the score.  Every
intermediate graph is acyclic and admitted by the background knowledge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .data import Dataset
from .graph import CausalDag, CycleError, Knowledge, check_knowledge


class KnowledgeError(ValueError):
    pass


def _cell_keys(data: Dataset, parents):
    keys = np.zeros(data.n, dtype=np.int64)
    q = 1
    for p in parents:
        spec = data.specs[p]
        if not spec.discrete:
            raise TypeError(f"{p!r} is continuous; BIC needs discrete columns")
        keys = keys * spec.n_categories + (data[p] - 1)
        q *= spec.n_categories
    return keys, q


def bic_local(data: Dataset, child: str, parents: Iterable[str]) -> float:
    """Maximized multinomial log-likelihood of ``child`` given its parent cells,
    minus ``ln(N)/2`` times the number of free parameters ``q (K - 1)``.
    Empty parent cells contribute nothing to the likelihood but are counted
    in the penalty.
    """
    spec = data.specs[child]
    if not spec.discrete:
        raise TypeError(f"{child!r} is continuous; BIC needs discrete columns")
    if data.n < 1:
        raise ValueError("empty dataset")
    parents = sorted(parents)
    keys, q = _cell_keys(data, parents)
    k = spec.n_categories
    table = np.bincount(keys * k + (data[child] - 1), minlength=q * k).reshape(q, k).astype(float)
    totals = table.sum(axis=1, keepdims=True)
    nz = table > 0
    ll = float(np.sum(table[nz] * np.log((table / np.where(totals > 0, totals, 1.0))[nz])))
    return ll - 0.5 * math.log(data.n) * q * (k - 1)


class LocalScoreCache:
    """Memoized :func:`bic_local` keyed by ``(child, frozenset(parents))``."""

    def __init__(self, data: Dataset):
        self.data = data
        self.n = data.n
        self._scores: dict[tuple[str, frozenset], float] = {}
        self.hits = 0

    def __call__(self, child: str, parents) -> float:
        key = (child, frozenset(parents))
        if key in self._scores:
            self.hits += 1
            return self._scores[key]
        s = bic_local(self.data, child, key[1])
        self._scores[key] = s
        return s

    def total(self, dag: CausalDag) -> float:
        return sum(self(v, dag.parents(v)) for v in dag.variables)


def total_bic(data: Dataset, dag: CausalDag) -> float:
    return sum(bic_local(data, v, dag.parents(v)) for v in dag.variables)


@dataclass
class Move:
    kind: str  # add | delete | reverse
    edge: tuple[str, str]
    delta: float

    def __str__(self):
        a, b = self.edge
        return f"{self.kind} {a} -> {b} {self.delta!r}"


@dataclass
class SearchTrace:
    initial_edges: list[tuple[str, str]] = field(default_factory=list)
    initial_score: float = 0.0
    moves: list[Move] = field(default_factory=list)
    final_score: float = 0.0

    def replay(self, variables) -> CausalDag:
        dag = CausalDag(variables, self.initial_edges)
        for m in self.moves:
            a, b = m.edge
            if m.kind == "add":
                dag.add_edge(a, b)
            elif m.kind == "delete":
                dag.remove_edge(a, b)
            else:
                dag.remove_edge(a, b)
                dag.add_edge(b, a)
        return dag

    def to_text(self) -> str:
        lines = [f"start score={self.initial_score!r}"]
        lines += [f"require {a} -> {b}" for a, b in self.initial_edges]
        lines += [str(m) for m in self.moves]
        lines.append(f"final score={self.final_score!r}")
        return "\n".join(lines) + "\n"


@dataclass
class SearchConfig:
    max_parents: int = 6
    reversals: bool = True
    max_rounds: int = 50


def greedy_search(
    data: Dataset,
    knowledge: Knowledge | None = None,
    config: SearchConfig | None = None,
    variables=None,
) -> tuple[CausalDag, SearchTrace]:
    """Hill-climb the BIC score from the graph of required edges.

    Ties between equally good moves go to the lexicographically smallest
    ``(from, to)`` pair.
    """
    knowledge = knowledge or Knowledge()
    config = config or SearchConfig()
    variables = list(variables or data.names)
    for v in variables:
        if not data.specs[v].discrete:
            raise TypeError(f"{v!r} is continuous; discretize before searching")
    ordered = sorted(variables)
    score = LocalScoreCache(data)
    dag = CausalDag(variables)
    for a, b in sorted(knowledge.required):
        try:
            dag.add_edge(a, b)
        except CycleError as exc:
            raise KnowledgeError(f"required edges form a cycle: {exc}") from None
    bad = [v for v in check_knowledge(dag, knowledge) if "required edge missing" not in v]
    if bad:
        raise KnowledgeError("; ".join(bad))
    trace = SearchTrace(initial_edges=dag.edges, initial_score=score.total(dag))

    def best_add():
        best = None
        for a in ordered:
            for b in ordered:
                if a == b or dag.adjacent(a, b) or not knowledge.admits(a, b):
                    continue
                pa = dag.parents(b)
                if len(pa) >= config.max_parents or dag.has_directed_path(b, a):
                    continue
                d = score(b, pa | {a}) - score(b, pa)
                if best is None or d > best.delta:
                    best = Move("add", (a, b), d)
        return best

    def best_delete():
        best = None
        for a, b in dag.edges:
            if (a, b) in knowledge.required:
                continue
            pa = dag.parents(b)
            d = score(b, pa - {a}) - score(b, pa)
            if best is None or d > best.delta:
                best = Move("delete", (a, b), d)
        return best

    def best_reverse():
        best = None
        for a, b in dag.edges:
            if (a, b) in knowledge.required or not knowledge.admits(b, a):
                continue
            pa_a, pa_b = dag.parents(a), dag.parents(b)
            if len(pa_a) >= config.max_parents:
                continue
            dag.remove_edge(a, b)
            cyclic = dag.has_directed_path(a, b)
            dag.add_edge(a, b)
            if cyclic:
                continue
            d = (score(b, pa_b - {a}) + score(a, pa_a | {b})) - (score(b, pa_b) + score(a, pa_a))
            if best is None or d > best.delta:
                best = Move("reverse", (a, b), d)
        return best

    def apply(m: Move):
        a, b = m.edge
        if m.kind == "add":
            dag.add_edge(a, b)
        elif m.kind == "delete":
            dag.remove_edge(a, b)
        else:
            dag.remove_edge(a, b)
            dag.add_edge(b, a)
        trace.moves.append(m)

    phases = [best_add, best_delete] + ([best_reverse] if config.reversals else [])
    for _ in range(config.max_rounds):
        moved = False
        for phase in phases:
            while True:
                m = phase()
                if m is None or not m.delta > 0:
                    break
                apply(m)
                moved = True
        if not moved:
            break
    trace.final_score = score.total(dag)
    return dag, trace


# ------------------------------------------------------------ equivalence


@dataclass
class Pattern:
    """Partially directed graph: compelled edges directed, the rest undirected."""

    variables: list[str]
    directed: set[tuple[str, str]]
    undirected: set[frozenset]

    def adjacent(self, a, b) -> bool:
        return (a, b) in self.directed or (b, a) in self.directed or frozenset((a, b)) in self.undirected

    def state(self, a, b) -> str:
        if (a, b) in self.directed:
            return "->"
        if (b, a) in self.directed:
            return "<-"
        if frozenset((a, b)) in self.undirected:
            return "--"
        return ""

    @classmethod
    def from_dag(cls, dag: CausalDag) -> "Pattern":
        return cls(list(dag.variables), set(dag.edges), set())


def cpdag_of(dag: CausalDag) -> Pattern:
    """Markov-equivalence pattern: v-structures plus Meek rules 1-3."""
    directed: set[tuple[str, str]] = set()
    for m in dag.variables:
        pa = sorted(dag.parents(m))
        for a, b in combinations(pa, 2):
            if not dag.adjacent(a, b):
                directed |= {(a, m), (b, m)}
    undirected = {frozenset(e) for e in dag.edges if e not in directed}
    pat = Pattern(list(dag.variables), directed, undirected)

    def orient(a, b):
        pat.undirected.discard(frozenset((a, b)))
        pat.directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for e in sorted(pat.undirected, key=sorted):
            x, y = sorted(e)
            for a, b in ((x, y), (y, x)):
                if frozenset((a, b)) not in pat.undirected:
                    break
                # R1: c -> a - b, c not adjacent to b
                r1 = any((c, a) in pat.directed and not pat.adjacent(c, b) for c in pat.variables if c not in (a, b))
                # R2: a -> c -> b
                r2 = any((a, c) in pat.directed and (c, b) in pat.directed for c in pat.variables)
                # R3: a - c -> b, a - d -> b, c and d not adjacent
                cands = [
                    c for c in pat.variables
                    if frozenset((a, c)) in pat.undirected and (c, b) in pat.directed
                ]
                r3 = any(not pat.adjacent(c, d) for c, d in combinations(cands, 2))
                if r1 or r2 or r3:
                    orient(a, b)
                    changed = True
    return pat


def shd(a: Pattern, b: Pattern) -> int:
    """Number of vertex pairs whose edge state differs (missing, extra, or
    differently oriented); each such pair costs one edit."""
    if set(a.variables) != set(b.variables):
        raise ValueError("patterns are over different variable sets")
    return sum(a.state(x, y) != b.state(x, y) for x, y in combinations(sorted(a.variables), 2))
