import itertools
import math

import numpy as np
import pytest
import statsmodels.api as sm

from causalchoice import autodiff as ad
from causalchoice import scm as S
from causalchoice.data import Dataset, VariableSpec, default_generator, simulate, split
from causalchoice.graph import CausalDag


def cat(name, k, **kw):
    return VariableSpec(name, "categorical", tuple(f"c{i}" for i in range(1, k + 1)), **kw)


def ordi(name, k):
    return VariableSpec(name, "ordinal", tuple(f"o{i}" for i in range(1, k + 1)))


def cont(name, **kw):
    return VariableSpec(name, "continuous", **kw)


def bare_mechanism(kind="categorical", k=2, m=0):
    """A mechanism on one continuous parent ``x``."""
    specs = {"y": (cat if kind == "categorical" else ordi)("y", k), "x": cont("x")}
    return S.Mechanism("y", specs["y"], ["x"], specs, m)


def toy_scm(m=2, seed=0):
    specs = {"z": cat("z", 3), "x": cont("x"), "a": cat("a", 3), "b": ordi("b", 3), "c": cat("c", 2)}
    dag = CausalDag(list(specs), [("z", "a"), ("x", "a"), ("a", "b"), ("z", "b"), ("b", "c"), ("a", "c")])
    return S.Scm.build(dag, specs, residual_layers=m, seed=seed), specs


def toy_data(specs, n, rng):
    cols = {}
    for name, s in specs.items():
        cols[name] = rng.normal(size=n) if not s.discrete else rng.integers(1, s.n_categories + 1, n)
    return Dataset(cols, specs)


class TestUtilities:
    def test_zero_weights_constant_shift(self):
        specs = {"y": cat("y", 2), "x": cont("x")}
        mech = S.Mechanism("y", specs["y"], ["x"], specs, 1)
        mech.mask = np.ones_like(mech.mask)
        mech.params["beta"] = np.array([[1.0, 0.0], [0.0, 0.0]])
        v0, g, u = mech.forward(np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(g[0], [-math.log(2), -math.log(2)], atol=1e-15)
        np.testing.assert_allclose(u[0], [1 - math.log(2), -math.log(2)], atol=1e-15)
        np.testing.assert_allclose(S.choice_probabilities(mech, {"x": 0.0}), [0.731059, 0.268941], atol=1e-6)

    def test_systematic_utility_examples(self):
        # intercept-only categorical: beta[:, 0] is the utility vector V0
        specs = {"y": cat("y", 2), "x": cont("x")}
        mech = S.Mechanism("y", specs["y"], ["x"], specs, 1)
        mech.mask = np.ones_like(mech.mask)
        mech.params["beta"] = np.array([[1.0, 0.0], [0.0, 0.0]])
        mech.params["W1"] = np.eye(2)
        u = S.systematic_utility(mech, {"x": 0.0})
        np.testing.assert_allclose(u, [1 - 1.313262, -0.693147], atol=1e-6)
        np.testing.assert_allclose(u, [-0.313262, -0.693147], atol=1e-6)

    def test_pure_mnl_when_no_layers(self):
        mech = bare_mechanism(k=3, m=0)
        mech.params["beta"] = np.array([[0.0, 0.0], [0.5, -1.0], [2.0, 0.3]]) * mech.mask
        u = S.systematic_utility(mech, {"x": 1.5})
        np.testing.assert_array_equal(u, mech.params["beta"] @ np.array([1.0, 1.5]))

    def test_missing_parent(self):
        with pytest.raises(S.EvaluationError):
            S.systematic_utility(bare_mechanism(), {})

    def test_reduction_to_mnl(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k, m = int(rng.integers(2, 6)), int(rng.integers(0, 5))
            mech = bare_mechanism(k=k, m=m)
            mech.params["beta"] = rng.normal(size=mech.mask.shape)
            X = np.column_stack([np.ones(5), rng.normal(size=5)])
            v = X @ (mech.params["beta"] * mech.mask).T
            e = np.exp(v - v.max(axis=1, keepdims=True))
            np.testing.assert_array_equal(mech.probabilities(X), e / e.sum(axis=1, keepdims=True))

    def test_linear_stage_monotone(self):
        mech = bare_mechanism(k=3, m=2)
        rng = np.random.default_rng(1)
        mech.params["beta"] = np.array([[0, 0], [0.4, -0.7], [0.1, -0.2]]) * mech.mask
        for key in ("W1", "W2"):
            mech.params[key] = rng.normal(size=(3, 3))
        xs = np.linspace(-3, 3, 50)
        v0, _, _ = mech.forward(np.column_stack([np.ones(50), xs]))
        assert np.all(np.diff(v0[:, 1]) <= 0) and np.all(np.diff(v0[:, 2]) <= 0)
        mech.params["W1"][:] = 0
        mech.params["W2"][:] = 0
        u = mech.utilities(np.column_stack([np.ones(50), xs]))
        assert np.all(np.diff(u[:, 1]) <= 0)


class TestProbabilities:
    def test_uniform_categorical(self):
        mech = bare_mechanism(k=3)
        mech.params["beta"][:] = 0
        np.testing.assert_allclose(S.choice_probabilities(mech, {"x": 0.3}), [1 / 3] * 3, atol=1e-15)

    def test_ordinal_two_levels(self):
        mech = bare_mechanism("ordinal", 2)
        mech.params["beta"][:] = 0
        mech.params["ord_b"] = np.array([0.0])
        np.testing.assert_allclose(S.choice_probabilities(mech, {"x": 1.0}), [0.5, 0.5])

    def test_ordinal_cumulative_differencing(self):
        mech = bare_mechanism("ordinal", 3)
        mech.params["ord_w"] = np.zeros(3)
        logit = lambda p: math.log(p / (1 - p))
        mech.params["ord_b"] = np.array([logit(0.8)])
        mech.params["ord_delta"] = np.array([math.log(logit(0.8) - logit(0.3))])
        np.testing.assert_allclose(S.choice_probabilities(mech, {"x": 0.0}), [0.2, 0.5, 0.3], atol=1e-12)

    def test_ordinal_structure_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            k = int(rng.integers(2, 7))
            mech = bare_mechanism("ordinal", k, m=int(rng.integers(0, 3)))
            for key, val in mech.params.items():
                mech.params[key] = rng.normal(scale=2.0, size=val.shape)
            X = np.column_stack([rng.normal(size=20)])
            u = mech.utilities(X)
            c = mech.cumulative(u)
            if k > 2:
                assert np.all(np.diff(c, axis=1) < 0) or np.all(np.diff(c, axis=1) <= 0)
            p = mech.probabilities(X)
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_alternative_specific_attribute(self):
        specs = {
            "mode": cat("mode", 3),
            "bus_cost": cont("bus_cost", attribute_of=("mode", "c3")),
            "age": cat("age", 2),
        }
        mech = S.Mechanism("mode", specs["mode"], ["bus_cost", "age"], specs)
        col = [f.label for f in mech.features].index("bus_cost")
        np.testing.assert_array_equal(mech.mask[:, col], [0, 0, 1])
        assert mech.mask[0].sum() == 0

    def test_parameter_count(self):
        mech = bare_mechanism(k=3, m=2)
        assert mech.n_parameters == 4 + 2 * 9
        o = bare_mechanism("ordinal", 4, m=1)
        assert o.n_parameters == 3 + 16 + 4 + 1 + 2


class TestLikelihood:
    def test_two_fair_coins(self):
        specs = {"z": cat("z", 2), "a": cat("a", 2), "b": cat("b", 2)}
        dag = CausalDag(["z", "a", "b"], [("z", "a"), ("z", "b")])
        model = S.Scm.build(dag, specs)
        for m in model.mechanisms.values():
            m.params["beta"][:] = 0
        ds = Dataset({"z": [1], "a": [2], "b": [1]}, specs)
        assert S.joint_log_likelihood(model, ds) == pytest.approx(-1.386294, abs=1e-6)

    def test_certain_prediction(self):
        specs = {"z": cat("z", 2), "a": cat("a", 2)}
        model = S.Scm.build(CausalDag(["z", "a"], [("z", "a")]), specs)
        model.mechanisms["a"].params["beta"] = np.array([[0.0, 0.0], [60.0, 0.0]])
        ds = Dataset({"z": [1], "a": [2]}, specs)
        assert S.joint_log_likelihood(model, ds) == pytest.approx(0.0, abs=1e-12)

    def test_clamp_floor(self, caplog):
        specs = {"z": cat("z", 2), "a": cat("a", 2)}
        model = S.Scm.build(CausalDag(["z", "a"], [("z", "a")]), specs)
        model.mechanisms["a"].params["beta"] = np.array([[0.0, 0.0], [100.0, 0.0]])
        ds = Dataset({"z": [1], "a": [1]}, specs)
        assert S.joint_log_likelihood(model, ds) == pytest.approx(math.log(1e-12))
        assert "clamped" in caplog.text

    def test_factorization_sums_to_one(self):
        specs = {"a": cat("a", 2), "b": cat("b", 2), "c": ordi("c", 2)}
        dag = CausalDag(list("abc"), [("a", "b"), ("b", "c"), ("a", "c")])
        model = S.Scm.build(dag, specs, residual_layers=1, seed=3)
        rng = np.random.default_rng(3)
        for m in model.mechanisms.values():
            for key, v in m.params.items():
                m.params[key] = rng.normal(size=v.shape)
        for a in (1, 2):
            total = 0.0
            for b, c in itertools.product((1, 2), repeat=2):
                ds = Dataset({"a": [a], "b": [b], "c": [c]}, specs)
                ll = S.joint_log_likelihood(model, ds)
                assert ll == pytest.approx(sum(S.mechanism_log_likelihoods(model, ds).values()))
                total += math.exp(ll)
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        model, specs = toy_scm(m=2)
        rng = np.random.default_rng(5)
        ds = toy_data(specs, 12, rng)
        prepared = S._teacher_forced(model, ds)
        names = model.trainable()

        def loss(*arrays):
            p = {c: {} for c in model.mechanisms}
            for (c, k), a in zip(names, arrays):
                p[c][k] = a
            return -S._batch_loglik(model, prepared, p)

        for _ in range(3):
            arrays = [rng.normal(scale=0.5, size=model.mechanisms[c].params[k].shape) for c, k in names]
            _, grads = ad.value_and_grad(loss, arrays)
            num = ad.numerical_gradient(lambda *a: float(loss(*a)), arrays)
            for g, n in zip(grads, num):
                np.testing.assert_allclose(g, n, rtol=1e-4, atol=1e-6)


class TestFit:
    def test_zero_epochs_returns_initialization(self):
        model, specs = toy_scm()
        ds = toy_data(specs, 60, np.random.default_rng(0))
        tr, va = split(ds, 0.7, 0)
        fitted, log = S.fit(model, tr, va, S.FitConfig(epochs=0))
        assert S.scm_to_bytes(fitted) == S.scm_to_bytes(model)
        assert len(log.val_loss) == 1

    def test_best_not_worse_than_start(self):
        ds = simulate(default_generator(600, 2))
        model = S.Scm.build(default_generator().dag(), ds.specs, residual_layers=2)
        tr, va = split(ds, 0.7, 0)
        _, log = S.fit(model, tr, va, S.FitConfig(epochs=5))
        assert log.val_loss[log.best_epoch] <= log.val_loss[0]

    def test_deterministic(self):
        ds = simulate(default_generator(300, 2))
        model = S.Scm.build(default_generator().dag(), ds.specs, residual_layers=2)
        tr, va = split(ds, 0.7, 0)
        a, _ = S.fit(model, tr, va, S.FitConfig(epochs=3))
        b, _ = S.fit(model, tr, va, S.FitConfig(epochs=3))
        assert S.scm_to_bytes(a) == S.scm_to_bytes(b)

    def test_config_ranges(self):
        assert S.FitConfig().in_declared_ranges()
        assert not S.FitConfig(residual_layers=3).in_declared_ranges()
        with pytest.raises(ValueError):
            S.FitConfig(threshold_init=1.0)

    def test_mnl_recovery(self):
        rng = np.random.default_rng(11)
        n = 2500
        x = rng.normal(size=n)
        beta = np.array([[0.0, 0.0], [0.5, -1.0], [-0.3, 0.8]])
        v = np.column_stack([np.ones(n), x]) @ beta.T
        p = np.exp(v) / np.exp(v).sum(axis=1, keepdims=True)
        y = (p.cumsum(axis=1) < rng.random((n, 1))).sum(axis=1) + 1
        specs = {"x": cont("x"), "y": cat("y", 3)}
        ds = Dataset({"x": x, "y": y}, specs)
        tr, va = split(ds, 0.7, 0)
        model = S.Scm.build(CausalDag(["x", "y"], [("x", "y")]), specs, 0, seed=1)
        fitted, _ = S.fit(model, tr, va, S.FitConfig(residual_layers=0, epochs=200, patience=20, learning_rate=0.01))
        est = fitted.mechanisms["y"].params["beta"]
        oracle = sm.MNLogit(tr["y"], sm.add_constant(tr["x"])).fit(disp=0)
        se = np.asarray(oracle.bse).T  # rows: alternatives 2..K; columns: const, x
        for k in (1, 2):
            assert np.all(np.abs(est[k] - beta[k]) <= 3 * se[k - 1])


class TestPrediction:
    def test_argmax_and_tie(self):
        specs = {"z": cat("z", 2), "a": cat("a", 2)}
        model = S.Scm.build(CausalDag(["z", "a"], [("z", "a")]), specs)
        mech = model.mechanisms["a"]
        mech.params["beta"] = np.array([[0.0, 0.0], [math.log(4.0), 0.0]])
        cats, probs = S.predict_sequential(model, {"z": 1})
        assert cats["a"] == 2
        np.testing.assert_allclose(probs["a"], [0.2, 0.8])
        mech.params["beta"][:] = 0
        assert S.predict_sequential(model, {"z": 1})[0]["a"] == 1

    def test_missing_exogenous(self):
        model, _ = toy_scm()
        with pytest.raises(S.EvaluationError):
            S.predict_sequential(model, {"z": 1})

    def test_soft_propagation_by_hand(self):
        specs = {"a": cat("a", 2), "b": cat("b", 2), "c": cat("c", 2)}
        dag = CausalDag(list("abc"), [("a", "b"), ("b", "c")])
        model = S.Scm.build(dag, specs)
        model.mechanisms["b"].params["beta"] = np.array([[0, 0], [0.3, 1.2]])
        model.mechanisms["c"].params["beta"] = np.array([[0, 0], [-0.4, 2.0]])
        cats, probs = S.predict_sequential(model, {"a": 2})
        pb = 1 / (1 + math.exp(-(0.3 + 1.2)))
        pc = 1 / (1 + math.exp(-(-0.4 + 2.0 * pb)))
        assert probs["b"][1] == pytest.approx(pb)
        assert probs["c"][1] == pytest.approx(pc)
        assert cats == {"b": 2, "c": 2}

    def test_from_generator_matches_generator(self):
        cfg = default_generator(20000, 8)
        ds = simulate(cfg)
        model = S.Scm.from_generator(cfg)
        _, probs = S.predict_sequential(model, {"gender": ds["gender"], "age": ds["age"], "cars": ds["cars"]})
        assert probs["stress"][:, 1].mean() == pytest.approx(np.mean(ds["stress"] == 2), abs=0.015)


class TestMetrics:
    def test_aic(self):
        assert S.aic_value(-1342.01, 300) == pytest.approx(3284.02, abs=1e-9)
        assert S.aic_value(-70701.37, 26) == pytest.approx(141454.74, abs=1e-9)
        assert S.aic_value(0.0, 0) == 0.0

    def test_aic_uses_parameter_count(self):
        model, specs = toy_scm()
        ds = toy_data(specs, 30, np.random.default_rng(1))
        assert S.aic(model, ds) == -2 * S.joint_log_likelihood(model, ds) + 2 * model.n_parameters

    def _constant_model(self, y):
        specs = {"z": cat("z", 2), "a": cat("a", 2)}
        model = S.Scm.build(CausalDag(["z", "a"], [("z", "a")]), specs)
        model.mechanisms["a"].params["beta"] = np.array([[0.0, 0.0], [-1.0, 0.0]])
        return model, Dataset({"z": np.ones(len(y), dtype=int), "a": y}, specs)

    def test_mpe(self):
        model, ds = self._constant_model([1, 1, 1, 1])
        assert S.mpe(model, ds)["a"] == 0.0
        model, ds = self._constant_model([1, 1, 2, 1])
        assert S.mpe(model, ds)["a"] == 0.25
        model, ds = self._constant_model([1] * 60 + [2] * 40)
        assert S.mpe(model, ds)["a"] == pytest.approx(0.4)


class TestSubstitution:
    def _model(self, cost_coef):
        specs = {
            "mode": cat("mode", 3),
            "car_cost": cont("car_cost", attribute_of=("mode", "c2")),
            "z": cat("z", 2),
        }
        dag = CausalDag(["car_cost", "z", "mode"], [("car_cost", "mode"), ("z", "mode")])
        model = S.Scm.build(dag, specs, residual_layers=0)
        m = model.mechanisms["mode"]
        labels = [f.label for f in m.features]
        m.params["beta"][:] = 0
        m.params["beta"][1, labels.index("car_cost")] = cost_coef
        m.params["beta"][2, labels.index("(intercept)")] = 0.4
        ds = Dataset({"car_cost": np.linspace(0, 1, 20), "z": np.ones(20, dtype=int), "mode": np.ones(20, dtype=int)}, specs)
        return model, ds

    def test_flat_with_zero_coefficient(self):
        model, ds = self._model(0.0)
        curve = S.substitution_curve(model, ds, "car_cost", np.linspace(0, 5, 6))
        first = curve[0][1]["mode"]
        for _, probs in curve:
            np.testing.assert_allclose(probs["mode"], first, atol=1e-15)
            assert probs["mode"].sum() == pytest.approx(1.0, abs=1e-9)

    def test_own_share_decreases(self):
        model, ds = self._model(-0.8)
        curve = S.substitution_curve(model, ds, "car_cost", np.linspace(0, 5, 11))
        shares = [probs["mode"][1] for _, probs in curve]
        assert np.all(np.diff(shares) < 0)

    def test_not_a_parent(self):
        model, ds = self._model(-0.8)
        with pytest.raises(ValueError):
            S.substitution_curve(model, ds, "mode", [0.0])


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        model, _ = toy_scm(m=2, seed=4)
        path = tmp_path / "m.cct"
        S.save_scm(path, model)
        back = S.load_scm(path)
        assert S.scm_to_bytes(back) == path.read_bytes()
        for c, m in model.mechanisms.items():
            for k, v in m.params.items():
                np.testing.assert_array_equal(back.mechanisms[c].params[k], v)

    def test_coefficient_rows(self):
        model = S.Scm.from_generator(default_generator())
        rows = S.coefficient_rows(model)
        latent = {(r[0], r[2]): r[3] for r in rows if r[1] == "(latent index)"}
        assert latent[("wait", "stress=2")] == pytest.approx(0.6)
        assert latent[("density", "wait=2")] == pytest.approx(-0.8)
