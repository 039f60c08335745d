"""Datasets, variable specifications, discretization and the synthetic generator."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import CausalDag, Knowledge

log = logging.getLogger(__name__)

KINDS = ("categorical", "ordinal", "continuous")


class IngestionError(ValueError):
    pass


@dataclass
class VariableSpec:
    """Type and role of one column.

    ``attribute_of`` marks an alternative-specific attribute as
    ``(choice_variable, alternative_label)``: it then enters only that
    alternative's utility.  ``breaks`` (a list of thresholds, or ``"jenks"``)
    makes :func:`load_csv` read the raw column as numbers and discretize it.
    """

    name: str
    kind: str
    labels: tuple[str, ...] = ()
    exogenous: bool = False
    attribute_of: tuple[str, str] | None = None
    breaks: list[float] | str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        self.labels = tuple(str(x) for x in self.labels)
        if self.discrete:
            if len(self.labels) < 2:
                raise ValueError(f"{self.name}: discrete variables need at least 2 labels")
            if len(set(self.labels)) != len(self.labels):
                raise ValueError(f"{self.name}: duplicate labels")
        if self.attribute_of is not None:
            self.attribute_of = tuple(self.attribute_of)

    @property
    def discrete(self) -> bool:
        return self.kind != "continuous"

    @property
    def n_categories(self) -> int:
        return len(self.labels) if self.discrete else 0

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.discrete:
            d["labels"] = list(self.labels)
        if self.exogenous:
            d["exogenous"] = True
        if self.attribute_of is not None:
            d["attribute_of"] = list(self.attribute_of)
        if self.breaks is not None:
            d["breaks"] = self.breaks
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSpec":
        labels = d.get("labels", ())
        if not labels and d.get("categories"):
            labels = [str(i) for i in range(1, int(d["categories"]) + 1)]
        return cls(
            name=d["name"],
            kind=d["kind"],
            labels=tuple(labels),
            exogenous=bool(d.get("exogenous", False)),
            attribute_of=d.get("attribute_of"),
            breaks=d.get("breaks"),
        )


def load_specs(path) -> dict[str, VariableSpec]:
    doc = json.loads(Path(path).read_text())
    items = doc["variables"] if isinstance(doc, dict) else doc
    return {s.name: s for s in map(VariableSpec.from_dict, items)}


def dump_specs(specs: dict[str, VariableSpec]) -> str:
    return json.dumps({"variables": [s.to_dict() for s in specs.values()]}, indent=2) + "\n"


def knowledge_from_specs(specs: dict[str, VariableSpec]) -> Knowledge:
    return Knowledge(exogenous={s.name for s in specs.values() if s.exogenous})


@dataclass
class Dataset:
    """Column-major observations.  Discrete columns hold codes ``1..K``."""

    columns: dict[str, np.ndarray]
    specs: dict[str, VariableSpec]
    provenance: str = ""

    def __post_init__(self):
        lengths = {len(c) for c in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns differ in length")
        for name, col in self.columns.items():
            spec = self.specs[name]
            if spec.discrete:
                col = np.asarray(col, dtype=np.int64)
                if col.size and (col.min() < 1 or col.max() > spec.n_categories):
                    raise ValueError(f"{name}: codes outside 1..{spec.n_categories}")
            else:
                col = np.asarray(col, dtype=float)
            self.columns[name] = col

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset({k: v[idx] for k, v in self.columns.items()}, self.specs, self.provenance)

    def with_column(self, name: str, values) -> "Dataset":
        cols = dict(self.columns)
        cols[name] = np.asarray(values)
        return Dataset(cols, self.specs, self.provenance)

    def to_csv(self, path=None, labels: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        cols = []
        for name in self.names:
            spec, col = self.specs[name], self.columns[name]
            if spec.discrete and labels:
                cols.append([spec.labels[c - 1] for c in col])
            elif spec.discrete:
                cols.append([str(int(c)) for c in col])
            else:
                cols.append([repr(float(x)) for x in col])
        for row in zip(*cols):
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def load_csv(path, specs: dict[str, VariableSpec]) -> Dataset:
    """Read a headered CSV; rows with an empty cell in a declared column are dropped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        missing = [n for n in specs if n not in header]
        if missing:
            raise IngestionError(f"{path}: missing declared columns {missing}")
        pos = {n: header.index(n) for n in specs}
        raw = {n: [] for n in specs}
        dropped = 0
        for rowno, row in enumerate(reader, 1):
            if not row:
                continue
            cells = {n: (row[i].strip() if i < len(row) else "") for n, i in pos.items()}
            if any(c == "" for c in cells.values()):
                dropped += 1
                continue
            for n, cell in cells.items():
                raw[n].append((rowno, cell))
    columns, notes = {}, [f"source={Path(path).name}"]
    for n, spec in specs.items():
        cells = raw[n]
        if not spec.discrete or spec.breaks is not None:
            try:
                values = np.array([float(c) for _, c in cells])
            except ValueError as exc:
                raise IngestionError(f"{path}: column {n!r}: {exc}") from None
            if spec.discrete:
                breaks = spec.breaks
                if breaks == "jenks":
                    breaks = jenks_breaks(values, spec.n_categories)
                breaks = [float(b) for b in breaks]
                if len(breaks) != spec.n_categories - 1:
                    raise IngestionError(f"{n}: need {spec.n_categories - 1} breaks")
                values = discretize(values, breaks)
                notes.append(f"{n} discretized at {breaks}")
            columns[n] = values
            continue
        lookup = {lab: i + 1 for i, lab in enumerate(spec.labels)}
        codes = np.empty(len(cells), dtype=np.int64)
        for j, (rowno, c) in enumerate(cells):
            if c not in lookup:
                raise IngestionError(f"{path}: row {rowno}, column {n!r}: unknown label {c!r}")
            codes[j] = lookup[c]
        columns[n] = codes
    if dropped:
        notes.append(f"dropped {dropped} incomplete rows")
        log.info("%s: dropped %d incomplete rows", path, dropped)
    ds = Dataset(columns, dict(specs), "; ".join(notes))
    ds.dropped = dropped
    return ds


# ------------------------------------------------------------ discretization


def _sse(prefix1, prefix2, weights, i, j):
    w = weights[j] - weights[i]
    s = prefix1[j] - prefix1[i]
    return prefix2[j] - prefix2[i] - s * s / w


def jenks_breaks(values, k: int, tol: float = 1e-12) -> list[float]:
    """Optimal k-class breaks of 1-D data (minimum within-class squared deviation).

    Classes are contiguous runs of the sorted distinct values; each break is
    the largest value of the lower class.  Among equally good partitions the
    one with the leftmost breaks wins.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    vals, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    n = len(vals)
    if n < k:
        raise ValueError(f"need at least {k} distinct values, got {n}")
    w = np.concatenate([[0.0], np.cumsum(counts)])
    s1 = np.concatenate([[0.0], np.cumsum(counts * vals)])
    s2 = np.concatenate([[0.0], np.cumsum(counts * vals * vals)])
    # best[m][i]: min SSE of values[i:] split into m classes
    best = np.full((k + 1, n + 1), np.inf)
    ends = np.arange(n + 1)
    best[1, :n] = np.maximum(_sse(s1, s2, w, np.arange(n), n), 0.0)
    for m in range(2, k + 1):
        for i in range(n - m + 1):
            j = ends[i + 1 : n - m + 2]
            cand = np.maximum(_sse(s1, s2, w, i, j), 0.0) + best[m - 1, j]
            best[m, i] = cand.min()
    out, i = [], 0
    for m in range(k, 1, -1):
        j = ends[i + 1 : n - m + 2]
        cand = np.maximum(_sse(s1, s2, w, i, j), 0.0) + best[m - 1, j]
        lim = best[m, i] + tol * max(1.0, abs(best[m, i]))
        nxt = int(j[np.argmax(cand <= lim)])
        out.append(float(vals[nxt - 1]))
        i = nxt
    return out


def within_class_sse(values, breaks) -> float:
    values = np.asarray(values, dtype=float)
    cats = discretize(values, breaks)
    total = 0.0
    for c in np.unique(cats):
        v = values[cats == c]
        total += float(((v - v.mean()) ** 2).sum())
    return total


def discretize(values, breaks) -> np.ndarray:
    """Category = 1 + number of breaks strictly below the value."""
    breaks = np.asarray(breaks, dtype=float)
    return np.searchsorted(breaks, np.asarray(values, dtype=float), side="left").astype(np.int64) + 1


def split(data: Dataset, ratio: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = math.ceil(ratio * data.n)
    return data.take(np.sort(perm[:n_train])), data.take(np.sort(perm[n_train:]))


# ----------------------------------------------------------------- generator


@dataclass
class GeneratorConfig:
    """Ground-truth ordered-logit data-generating process.

    ``variables`` holds one dict per variable: discrete exogenous variables
    carry ``probs``, continuous exogenous ones ``normal = [mean, sd]``, and
    endogenous ones are described in ``mechanisms`` by per-parent coefficient
    lists (one entry per non-reference level, or one for a continuous parent)
    and ascending ``thresholds`` on the latent scale.
    """

    variables: list[dict]
    mechanisms: dict[str, dict]
    n: int = 2500
    seed: int = 0
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.notes = list(self.notes)
        by_name = {v["name"]: v for v in self.variables}
        for v in self.variables:
            if "probs" in v:
                p = np.asarray(v["probs"], dtype=float)
                if np.any(p < 0) or np.any(p > 1):
                    raise ValueError(f"{v['name']}: probabilities outside [0, 1]")
                if abs(p.sum() - 1.0) > 1e-12:
                    note = f"{v['name']}: probabilities renormalized from sum {p.sum():.6g}"
                    if note not in self.notes:
                        self.notes.append(note)
                    v["probs"] = list(p / p.sum())
        for child, mech in self.mechanisms.items():
            if child not in by_name:
                raise ValueError(f"mechanism for undeclared variable {child!r}")
            spec = self.spec(child)
            if not spec.discrete:
                raise ValueError(f"{child}: generated mechanisms must be discrete")
            if len(mech["thresholds"]) != spec.n_categories - 1:
                raise ValueError(f"{child}: need {spec.n_categories - 1} thresholds")
            if list(mech["thresholds"]) != sorted(mech["thresholds"]):
                raise ValueError(f"{child}: thresholds must ascend")
            for parent, coefs in mech["coefficients"].items():
                ps = self.spec(parent)
                want = ps.n_categories - 1 if ps.discrete else 1
                if len(coefs) != want or not np.all(np.isfinite(coefs)):
                    raise ValueError(f"{child}<-{parent}: expected {want} finite coefficients")
        self.dag()

    def spec(self, name: str) -> VariableSpec:
        v = next(v for v in self.variables if v["name"] == name)
        return VariableSpec.from_dict(v)

    @property
    def specs(self) -> dict[str, VariableSpec]:
        return {v["name"]: VariableSpec.from_dict(v) for v in self.variables}

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted((p, c) for c, m in self.mechanisms.items() for p in m["coefficients"])

    def dag(self) -> CausalDag:
        return CausalDag([v["name"] for v in self.variables], self.edges)

    def replace(self, **kw) -> "GeneratorConfig":
        d = copy.deepcopy(self.to_dict())
        d.update(kw)
        return GeneratorConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "variables": self.variables,
            "mechanisms": self.mechanisms,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = copy.deepcopy(d)
        return cls(d["variables"], d["mechanisms"], int(d.get("n", 2500)), int(d.get("seed", 0)), d.get("notes", []))

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _design(columns, specs, parent, coefs):
    spec = specs[parent]
    coefs = np.asarray(coefs, dtype=float)
    x = columns[parent]
    if spec.discrete:
        return np.concatenate([[0.0], coefs])[x - 1]
    return coefs[0] * x


def latent_index(cfg: GeneratorConfig, child: str, columns) -> np.ndarray:
    """Linear index of the child's ordered-logit mechanism (before noise)."""
    specs = cfg.specs
    n = len(next(iter(columns.values())))
    eta = np.zeros(n)
    for parent, coefs in cfg.mechanisms[child]["coefficients"].items():
        eta = eta + _design(columns, specs, parent, coefs)
    return eta


def simulate(cfg: GeneratorConfig) -> Dataset:
    """Draw ``cfg.n`` rows in topological order with logistic latent noise."""
    rng = np.random.default_rng(cfg.seed)
    specs = cfg.specs
    by_name = {v["name"]: v for v in cfg.variables}
    columns: dict[str, np.ndarray] = {}
    for name in cfg.dag().topological_order():
        v, spec = by_name[name], specs[name]
        if name in cfg.mechanisms:
            eta = latent_index(cfg, name, columns)
            latent = eta + rng.logistic(size=cfg.n)
            columns[name] = discretize(latent, cfg.mechanisms[name]["thresholds"])
        elif spec.discrete:
            columns[name] = rng.choice(spec.n_categories, size=cfg.n, p=v["probs"]).astype(np.int64) + 1
        else:
            mu, sd = v["normal"]
            columns[name] = rng.normal(mu, sd, size=cfg.n)
    ordered = {v["name"]: columns[v["name"]] for v in cfg.variables}
    note = f"simulated n={cfg.n} seed={cfg.seed}"
    if cfg.notes:
        note += "; " + "; ".join(cfg.notes)
    return Dataset(ordered, specs, note)


def calibrate_thresholds(cfg: GeneratorConfig, shares: dict[str, list[float]], n=1_000_000, seed=12345):
    """Set thresholds so each child's category shares match ``shares``.

    Mechanisms are calibrated in topological order on one large simulated
    sample (quantile inversion of the simulated latent variable).
    """
    cfg = cfg.replace()
    rng = np.random.default_rng(seed)
    big = cfg.replace(n=n, seed=seed)
    columns: dict[str, np.ndarray] = {}
    specs = cfg.specs
    by_name = {v["name"]: v for v in cfg.variables}
    for name in cfg.dag().topological_order():
        spec = specs[name]
        if name in cfg.mechanisms:
            latent = latent_index(big, name, columns) + rng.logistic(size=n)
            if name in shares:
                cum = np.cumsum(shares[name])[:-1]
                thr = [float(np.quantile(latent, q)) for q in cum]
                cfg.mechanisms[name]["thresholds"] = [round(t, 4) for t in thr]
                big.mechanisms[name]["thresholds"] = cfg.mechanisms[name]["thresholds"]
            columns[name] = discretize(latent, cfg.mechanisms[name]["thresholds"])
        elif spec.discrete:
            columns[name] = rng.choice(spec.n_categories, size=n, p=by_name[name]["probs"]) + 1
        else:
            mu, sd = by_name[name]["normal"]
            columns[name] = rng.normal(mu, sd, size=n)
    return cfg


# The collider study: density perception is caused by both stress and wait
# time.  Age uses the four pedestrian-survey groups; exogenous shares are the
# survey means (renormalized).  Thresholds were frozen with
# calibrate_thresholds(shares={"stress": [.748, .252], "wait": [.643, .357],
# "density": [.5, .5]}).
DEFAULT_GENERATOR = {
    "n": 2500,
    "seed": 0,
    "variables": [
        {"name": "gender", "kind": "categorical", "labels": ["male", "female"],
         "exogenous": True, "probs": [0.618, 0.382]},
        {"name": "age", "kind": "categorical", "labels": ["18-29", "30-39", "40-49", "50+"],
         "exogenous": True, "probs": [0.542, 0.339, 0.034, 0.084]},
        {"name": "cars", "kind": "categorical", "labels": ["none", "one", "more"],
         "exogenous": True, "probs": [0.302, 0.345, 0.353]},
        {"name": "stress", "kind": "ordinal", "labels": ["low", "high"]},
        {"name": "wait", "kind": "ordinal", "labels": ["low", "high"]},
        {"name": "density", "kind": "ordinal", "labels": ["low", "high"]},
    ],
    "mechanisms": {
        "stress": {
            "coefficients": {"gender": [0.500], "age": [0.561, 2.911, 1.975], "cars": [-0.300, -0.132]},
            "thresholds": [1.6848],
        },
        "wait": {
            "coefficients": {"gender": [0.603], "age": [-1.410, -1.854, -2.854], "stress": [0.600]},
            "thresholds": [0.3227],
        },
        "density": {
            "coefficients": {"stress": [0.500], "wait": [-0.800]},
            "thresholds": [-0.153],
        },
    },
}


def default_generator(n: int = 2500, seed: int = 0) -> GeneratorConfig:
    d = copy.deepcopy(DEFAULT_GENERATOR)
    d["n"], d["seed"] = n, seed
    return GeneratorConfig.from_dict(d)


def synthetic_knowledge() -> Knowledge:
    """Demographics have no causes inside the model."""
    return Knowledge(exogenous={"gender", "age", "cars"})
