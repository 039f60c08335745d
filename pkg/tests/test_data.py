import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from causalchoice.data import (
    DEFAULT_GENERATOR,
    Dataset,
    GeneratorConfig,
    IngestionError,
    VariableSpec,
    default_generator,
    discretize,
    dump_specs,
    jenks_breaks,
    load_csv,
    load_specs,
    simulate,
    split,
    within_class_sse,
)

SPECS = {
    "mode": VariableSpec("mode", "categorical", ("walk", "car", "bus")),
    "wait": VariableSpec("wait", "ordinal", ("low", "high"), breaks=[5.0]),
    "cost": VariableSpec("cost", "continuous"),
}


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = write(tmp_path, "cost,mode,wait\n1.5,walk,3\n2.0,car,6\n0.5,bus,5\n")
        ds = load_csv(p, SPECS)
        assert ds.n == 3
        np.testing.assert_array_equal(ds["mode"], [1, 2, 3])
        np.testing.assert_array_equal(ds["wait"], [1, 2, 1])
        assert "wait discretized" in ds.provenance

    def test_row_with_gap_dropped(self, tmp_path):
        p = write(tmp_path, "mode,wait,cost\nwalk,3,1\ncar,,2\nbus,7,3\n")
        ds = load_csv(p, SPECS)
        assert ds.n == 2 and ds.dropped == 1

    def test_unknown_label_names_row(self, tmp_path):
        p = write(tmp_path, "mode,wait,cost\nwalk,3,1\nplane,3,1\n")
        with pytest.raises(IngestionError, match="row 2.*mode"):
            load_csv(p, SPECS)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path, "mode,cost\nwalk,1\n")
        with pytest.raises(IngestionError, match="wait"):
            load_csv(p, SPECS)

    def test_round_trip_through_csv(self, tmp_path):
        ds = simulate(default_generator(50, 2))
        p = write(tmp_path, ds.to_csv())
        back = load_csv(p, ds.specs)
        for name in ds.names:
            np.testing.assert_array_equal(back[name], ds[name])

    def test_specs_round_trip(self, tmp_path):
        p = write(tmp_path, dump_specs(SPECS), "s.json")
        assert load_specs(p) == SPECS

    def test_dataset_validates_codes(self):
        with pytest.raises(ValueError):
            Dataset({"mode": np.array([0, 1])}, SPECS)


class TestVariableSpec:
    def test_needs_two_labels(self):
        with pytest.raises(ValueError):
            VariableSpec("x", "ordinal", ("a",))

    def test_unique_labels(self):
        with pytest.raises(ValueError):
            VariableSpec("x", "categorical", ("a", "a"))


def brute_force_jenks(values, k):
    vals = np.unique(values)
    best = None
    for cuts in itertools.combinations(range(1, len(vals)), k - 1):
        breaks = [float(vals[c - 1]) for c in cuts]
        sse = within_class_sse(values, breaks)
        if best is None or sse < best[0] - 1e-9 * max(1.0, best[0]):
            best = (sse, breaks)
    return best


class TestJenks:
    def test_two_clusters(self):
        assert jenks_breaks([1, 2, 10, 11], 2) == [2.0]

    def test_point_masses(self):
        b = jenks_breaks([0, 0, 0, 5, 5], 2)
        assert b == [0.0]
        assert within_class_sse([0, 0, 0, 5, 5], b) == 0.0

    def test_k_equals_distinct(self):
        v = [3.0, 1.0, 2.0, 2.0, 3.0]
        b = jenks_breaks(v, 3)
        assert within_class_sse(v, b) == 0.0

    def test_too_few_distinct(self):
        with pytest.raises(ValueError):
            jenks_breaks([1, 1, 2], 3)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 40), min_size=4, max_size=20), st.integers(2, 4))
    def test_matches_brute_force(self, ints, k):
        values = np.asarray(ints, dtype=float) / 4.0
        if len(np.unique(values)) < k:
            return
        sse, breaks = brute_force_jenks(values, k)
        got = jenks_breaks(values, k)
        assert within_class_sse(values, got) == pytest.approx(sse, rel=1e-9, abs=1e-9)
        assert got == breaks


class TestDiscretize:
    def test_survey_thresholds(self):
        assert discretize([6.0], [5.0])[0] == 2
        assert discretize([0.59], [0.59])[0] == 1
        assert discretize([0.6], [0.59])[0] == 2
        assert discretize([8.0], [7.8])[0] == 2

    def test_below_all(self):
        assert discretize([-10.0], [0.0, 1.0])[0] == 1

    def test_idempotent_on_codes(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=100)
        breaks = jenks_breaks(x, 3)
        codes = discretize(x, breaks)
        again = discretize(codes, jenks_breaks(codes, 3))
        np.testing.assert_array_equal(again, codes)


class TestSplit:
    def test_sizes(self):
        ds = simulate(default_generator(10, 0))
        tr, va = split(ds, 0.7, 1)
        assert (tr.n, va.n) == (7, 3)

    def test_seeded_and_exhaustive(self):
        ds = Dataset({"row": np.arange(101.0)}, {"row": VariableSpec("row", "continuous")})
        a = split(ds, 0.7, 5)
        b = split(ds, 0.7, 5)
        np.testing.assert_array_equal(a[0]["row"], b[0]["row"])
        rows = np.concatenate([a[0]["row"], a[1]["row"]])
        np.testing.assert_array_equal(np.sort(rows), np.arange(101))
        assert a[0].n == 71

    def test_ratio_bounds(self):
        ds = simulate(default_generator(10, 0))
        with pytest.raises(ValueError):
            split(ds, 1.0, 0)


class TestGenerator:
    def test_defaults(self):
        cfg = default_generator()
        assert cfg.n == 2500
        m = cfg.mechanisms
        assert m["stress"]["coefficients"]["gender"] == [0.5]
        assert m["wait"]["coefficients"]["stress"] == [0.6]
        assert m["density"]["coefficients"]["wait"] == [-0.8]
        assert any("age" in note for note in cfg.notes)

    def test_seeded(self):
        a = simulate(default_generator(300, 4))
        b = simulate(default_generator(300, 4))
        for name in a.names:
            np.testing.assert_array_equal(a[name], b[name])

    def test_exogenous_marginals(self):
        cfg = default_generator(20000, 11)
        ds = simulate(cfg)
        for v in cfg.variables:
            if "probs" not in v:
                continue
            freq = np.bincount(ds[v["name"]] - 1, minlength=len(v["probs"])) / ds.n
            p = np.asarray(v["probs"])
            assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / ds.n) + 1e-12)

    def test_gender_share(self):
        ds = simulate(default_generator(20000, 1))
        share = np.mean(ds["gender"] == 2)
        assert abs(share - 0.382) <= 3 * np.sqrt(0.382 * 0.618 / 20000)

    def test_zero_coefficients_independent(self):
        base = json.loads(json.dumps(DEFAULT_GENERATOR))
        for mech in base["mechanisms"].values():
            mech["coefficients"] = {p: [0.0] * len(c) for p, c in mech["coefficients"].items()}
        ok = 0
        for seed in range(10):
            base["seed"] = seed
            ds = simulate(GeneratorConfig.from_dict(base))
            table = np.zeros((3, 2))
            np.add.at(table, (ds["cars"] - 1, ds["stress"] - 1), 1)
            ok += chi2_contingency(table)[1] > 0.01
        assert ok >= 9

    def test_target_shares(self):
        ds = simulate(default_generator(50000, 3))
        assert np.mean(ds["wait"] == 2) == pytest.approx(0.357, abs=0.01)
        assert np.mean(ds["stress"] == 2) == pytest.approx(0.252, abs=0.01)

    def test_config_round_trip(self, tmp_path):
        cfg = default_generator(123, 9)
        p = tmp_path / "g.json"
        p.write_text(cfg.dump())
        assert GeneratorConfig.load(p).to_dict() == cfg.to_dict()

    def test_invalid_config(self):
        bad = json.loads(json.dumps(DEFAULT_GENERATOR))
        bad["mechanisms"]["wait"]["coefficients"]["stress"] = [float("nan")]
        with pytest.raises(ValueError):
            GeneratorConfig.from_dict(bad)
        bad = json.loads(json.dumps(DEFAULT_GENERATOR))
        bad["variables"][0]["probs"] = [1.5, -0.5]
        with pytest.raises(ValueError):
            GeneratorConfig.from_dict(bad)
