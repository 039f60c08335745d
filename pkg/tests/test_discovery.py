import itertools
import math

import numpy as np
import pytest

from causalchoice.data import Dataset, VariableSpec, default_generator, simulate, synthetic_knowledge
from causalchoice.discovery import (
    KnowledgeError,
    LocalScoreCache,
    Pattern,
    bic_local,
    cpdag_of,
    greedy_search,
    shd,
    total_bic,
)
from causalchoice.graph import CausalDag, Knowledge, check_knowledge, random_dag


def dataset(**cols):
    specs = {}
    for k, v in cols.items():
        specs[k] = VariableSpec(k, "categorical", tuple(str(i) for i in range(int(np.max(v)))))
    return Dataset({k: np.asarray(v) for k, v in cols.items()}, specs)


class TestBic:
    def test_hand_computed(self):
        ds = dataset(x=[1] * 60 + [2] * 40)
        expect = 60 * math.log(0.6) + 40 * math.log(0.4) - math.log(100) / 2
        assert bic_local(ds, "x", []) == pytest.approx(expect, abs=1e-10)
        assert expect == pytest.approx(-69.6037, abs=1e-4)

    def test_deterministic_copy(self):
        rng = np.random.default_rng(0)
        x = rng.integers(1, 4, 500)
        ds = dataset(x=x, y=x)
        assert bic_local(ds, "y", ["x"]) == pytest.approx(-math.log(500) / 2 * 3 * 2, abs=1e-9)

    def test_continuous_rejected(self):
        ds = Dataset({"c": np.zeros(3)}, {"c": VariableSpec("c", "continuous")})
        with pytest.raises(TypeError):
            bic_local(ds, "c", [])

    def test_independent_parent_lowers_score(self):
        wins = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            ds = dataset(x=rng.integers(1, 3, 1000), y=rng.integers(1, 3, 1000))
            wins += bic_local(ds, "y", ["x"]) < bic_local(ds, "y", [])
        assert wins > 25

    def test_cache_is_bit_identical(self):
        ds = simulate(default_generator(500, 1))
        cache = LocalScoreCache(ds)
        a = cache("wait", {"age", "stress"})
        b = cache("wait", ["stress", "age"])
        assert a == b and cache.hits == 1

    def test_decomposable_against_joint_likelihood(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            dag = random_dag(4, 0.5, rng, names=list("abcd"))
            ds = dataset(**{v: rng.integers(1, 3, 300) for v in "abcd"})
            # monolithic: log-likelihood of each row under plug-in conditionals
            ll, pen = 0.0, 0.0
            for v in dag.variables:
                pa = sorted(dag.parents(v))
                keys = [tuple(ds[p][i] for p in pa) for i in range(ds.n)]
                for i in range(ds.n):
                    same = [j for j in range(ds.n) if keys[j] == keys[i]]
                    ll += math.log(np.mean(ds[v][same] == ds[v][i]))
                pen += 2 ** len(pa) * 1
            assert total_bic(ds, dag) == pytest.approx(ll - math.log(ds.n) / 2 * pen, rel=1e-10)


class TestSearch:
    def test_independent_columns_give_empty_graph(self):
        rng = np.random.default_rng(1)
        ds = dataset(a=rng.integers(1, 3, 5000), b=rng.integers(1, 3, 5000))
        dag, trace = greedy_search(ds)
        assert dag.edges == []
        assert trace.moves == []

    def test_required_edge_dominates(self):
        rng = np.random.default_rng(2)
        ds = dataset(a=rng.integers(1, 3, 500), b=rng.integers(1, 3, 500))
        dag, _ = greedy_search(ds, Knowledge(required={("a", "b")}))
        assert dag.has_edge("a", "b")

    def test_required_cycle(self):
        rng = np.random.default_rng(2)
        ds = dataset(a=rng.integers(1, 3, 50), b=rng.integers(1, 3, 50))
        with pytest.raises(KnowledgeError):
            greedy_search(ds, Knowledge(required={("a", "b"), ("b", "a")}))

    def test_trace_replay_and_deltas(self):
        ds = simulate(default_generator(3000, 5))
        k = synthetic_knowledge()
        dag, trace = greedy_search(ds, k)
        assert trace.replay(ds.names) == dag
        assert all(m.delta > 0 for m in trace.moves)
        total = sum(m.delta for m in trace.moves)
        assert total == pytest.approx(trace.final_score - trace.initial_score, abs=1e-9)
        assert trace.final_score == pytest.approx(total_bic(ds, dag), abs=1e-9)
        assert check_knowledge(dag, k) == []

    def test_deterministic(self):
        ds = simulate(default_generator(1000, 6))
        a = greedy_search(ds, synthetic_knowledge())[1].to_text()
        b = greedy_search(ds, synthetic_knowledge())[1].to_text()
        assert a == b

    def test_finds_strong_dependence(self):
        rng = np.random.default_rng(3)
        x = rng.integers(1, 3, 2000)
        y = np.where(rng.random(2000) < 0.9, x, 3 - x)
        dag, _ = greedy_search(dataset(x=x, y=y), Knowledge(exogenous={"x"}))
        assert dag.edges == [("x", "y")]


class TestPatterns:
    def test_v_structure_kept(self):
        pat = cpdag_of(CausalDag(["A", "M", "B"], [("A", "M"), ("B", "M")]))
        assert pat.directed == {("A", "M"), ("B", "M")} and not pat.undirected

    def test_single_edge_undirected(self):
        pat = cpdag_of(CausalDag(["A", "B"], [("A", "B")]))
        assert pat.undirected == {frozenset("AB")}

    def test_chain_undirected(self):
        pat = cpdag_of(CausalDag(list("ABC"), [("A", "B"), ("B", "C")]))
        assert not pat.directed and len(pat.undirected) == 2

    def test_meek_rule_one(self):
        dag = CausalDag(list("ABCD"), [("A", "C"), ("B", "C"), ("C", "D")])
        pat = cpdag_of(dag)
        assert ("C", "D") in pat.directed

    def test_equivalent_dags_share_pattern(self):
        # enumerate all DAGs over three nodes; members of one class share a pattern
        names = list("ABC")
        pairs = list(itertools.combinations(names, 2))
        for states in itertools.product((0, 1, 2), repeat=3):
            edges = [(a, b) if s == 1 else (b, a) for (a, b), s in zip(pairs, states) if s]
            dag = CausalDag(names)
            try:
                for e in edges:
                    dag.add_edge(*e)
            except ValueError:
                continue
            pat = cpdag_of(dag)
            v_structs = {
                (m, frozenset((a, b)))
                for m in names
                for a, b in itertools.combinations(sorted(dag.parents(m)), 2)
                if not dag.adjacent(a, b)
            }
            assert bool(v_structs) == bool(pat.directed)

    def test_shd(self):
        a = cpdag_of(CausalDag(["A", "M", "B"], [("A", "M"), ("B", "M")]))
        assert shd(a, a) == 0
        b = Pattern(["A", "M", "B"], {("A", "M"), ("B", "M")}, {frozenset(("A", "B"))})
        assert shd(a, b) == 1 and shd(b, a) == 1
        c = Pattern(["A", "M", "B"], {("M", "A"), ("B", "M")}, set())
        assert shd(a, c) == 1
        with pytest.raises(ValueError):
            shd(a, Pattern(["X"], set(), set()))
