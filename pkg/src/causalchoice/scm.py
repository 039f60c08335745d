"""Deep structural causal model built from residual logit mechanisms.

Each endogenous variable of a DAG gets one :class:`Mechanism`.  Its linear
stage maps parent features to a K-vector of utilities, ``M`` residual
layers add the heterogeneity term, and the output is a softmax
(categorical) or a cumulative-logit head (ordinal).  All mechanisms are
trained jointly on the sum of their log-likelihoods, which is the log of
the Markov-factorized joint distribution.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import tensorio
from .data import Dataset, GeneratorConfig, VariableSpec
from .graph import CausalDag

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

# Hyperparameter ranges searched at random.
RESIDUAL_LAYERS = (2, 4, 8, 16, 32)
LEARNING_RATES = (0.01, 0.001)
BATCH_SIZES = (32, 64)
HIDDEN_LAYERS = (4, 6)
THRESHOLD_RANGE = (0.3, 0.6)


class EvaluationError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite


class Feature(NamedTuple):
    parent: str  # "" for the intercept
    level: int  # category code for a discrete parent, 0 continuous, -1 intercept

    @property
    def label(self) -> str:
        if self.level < 0:
            return "(intercept)"
        if self.level == 0:
            return self.parent
        return f"{self.parent}={self.level}"


@dataclass
class FitConfig:
    residual_layers: int = 2
    learning_rate: float = 0.01
    batch_size: int = 64
    threshold_init: float = 0.45
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    hidden_layers: int = 4

    def __post_init__(self):
        if self.residual_layers < 0 or self.epochs < 0 or self.patience < 1:
            raise ValueError("residual_layers/epochs must be >= 0 and patience >= 1")
        if not self.learning_rate > 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be positive and batch_size >= 1")
        if not 0.0 < self.threshold_init < 1.0:
            raise ValueError("threshold_init must lie in (0, 1)")

    def in_declared_ranges(self) -> bool:
        return (
            self.residual_layers in RESIDUAL_LAYERS
            and self.learning_rate in LEARNING_RATES
            and self.batch_size in BATCH_SIZES
            and self.hidden_layers in HIDDEN_LAYERS
            and THRESHOLD_RANGE[0] <= self.threshold_init <= THRESHOLD_RANGE[1]
        )


# --------------------------------------------------------------- mechanisms


def encode_parents(features, parent_specs, values, n=None) -> np.ndarray:
    """Feature matrix for ``values`` (parent -> codes, reals or probability rows).

    A discrete parent may be given as integer codes ``1..K`` or as an
    ``(N, K)`` matrix of category probabilities (soft encoding).
    """
    cols, cache = [], {}
    for f in features:
        if f.level < 0:
            cols.append(None)
            continue
        if f.parent not in values:
            raise EvaluationError(f"missing value for parent {f.parent!r}")
        v = np.asarray(values[f.parent], dtype=float)
        if f.level == 0:
            cols.append(np.atleast_1d(v))
            continue
        if f.parent not in cache:
            k = parent_specs[f.parent].n_categories
            if v.ndim == 2 or (v.ndim == 1 and v.shape[0] == k and n == 0):
                cache[f.parent] = np.atleast_2d(v)
            else:
                codes = np.atleast_1d(v).astype(np.int64)
                cache[f.parent] = (codes[:, None] == np.arange(1, k + 1)).astype(float)
        cols.append(cache[f.parent][:, f.level - 1])
    rows = n if n else max((len(c) for c in cols if c is not None), default=1)
    return np.column_stack([np.ones(rows) if c is None else np.broadcast_to(c, (rows,)) for c in cols]) if cols else np.zeros((rows, 0))


class Mechanism:
    """One structural equation ``P(child | parents)``.

    Parameters (``self.params``):

    ``beta``      K x F linear coefficients, multiplied by the fixed ``mask``
    ``W1..WM``    K x K residual-layer weights
    ``ord_w``     K penultimate weights shared by all thresholds (ordinal)
    ``ord_b``     first threshold bias (ordinal)
    ``ord_delta`` log gaps between successive biases, K - 2 entries (ordinal)
    """

    def __init__(
        self,
        child: str,
        spec: VariableSpec,
        parents: list[str],
        parent_specs: dict[str, VariableSpec],
        residual_layers: int = 0,
        rng: np.random.Generator | None = None,
        threshold_init: float = 0.45,
    ):
        if spec.kind not in ("categorical", "ordinal"):
            raise ValueError(f"{child}: mechanisms need a discrete child")
        self.child = child
        self.kind = spec.kind
        self.spec = spec
        self.parents = list(parents)
        self.parent_specs = {p: parent_specs[p] for p in self.parents}
        self.residual_layers = int(residual_layers)
        k = spec.n_categories
        feats = [Feature("", -1)] if self.kind == "categorical" else []
        for p in self.parents:
            ps = self.parent_specs[p]
            if ps.discrete:
                feats += [Feature(p, lev) for lev in range(2, ps.n_categories + 1)]
            else:
                feats.append(Feature(p, 0))
        self.features = feats
        mask = np.zeros((k, len(feats)))
        for j, f in enumerate(feats):
            ps = self.parent_specs.get(f.parent)
            if ps is not None and ps.attribute_of and ps.attribute_of[0] == child:
                mask[spec.labels.index(ps.attribute_of[1]), j] = 1.0
            else:
                mask[1:, j] = 1.0
        self.mask = mask
        rng = rng if rng is not None else np.random.default_rng(0)
        params = {"beta": rng.uniform(-0.1, 0.1, size=mask.shape) * mask}
        for m in range(1, self.residual_layers + 1):
            params[f"W{m}"] = np.zeros((k, k))
        if self.kind == "ordinal":
            w = np.linspace(0.0, 1.0, k)
            params["ord_w"] = w
            shift = self.residual_layers * math.log(2.0) * w.sum()
            params["ord_b"] = np.array([math.log(threshold_init / (1 - threshold_init)) + shift])
            params["ord_delta"] = np.zeros(k - 2)
        self.params = params

    @property
    def n_alternatives(self) -> int:
        return self.spec.n_categories

    @property
    def n_parameters(self) -> int:
        n = int(self.mask.sum()) + self.residual_layers * self.n_alternatives ** 2
        if self.kind == "ordinal":
            n += self.n_alternatives + 1 + (self.n_alternatives - 2)
        return n

    def copy(self) -> "Mechanism":
        other = copy.copy(self)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def encode(self, values, n=None) -> np.ndarray:
        return encode_parents(self.features, self.parent_specs, values, n)

    # forward pieces work on numpy arrays and on tape variables alike

    def forward(self, X, p=None):
        """``(V0, g, VM)``: linear stage, heterogeneity term and utilities.

        ``g`` is accumulated on its own so that equal residual terms stay
        bitwise equal across alternatives.
        """
        p = self.params if p is None else p
        v0 = X @ (p["beta"] * self.mask).T
        v, g = v0, 0.0
        for m in range(1, self.residual_layers + 1):
            s = ad.softplus(v @ p[f"W{m}"].T)
            v = v - s
            g = g - s
        return v0, g, v

    def utilities(self, X, p=None):
        return self.forward(X, p)[2]

    def probabilities(self, X) -> np.ndarray:
        """Choice probabilities for the rows of ``X`` (plain arrays only).

        For a categorical child the softmax sees ``V0 + (g - max g)``, which
        equals the utilities up to a per-row shift; with zero residual
        weights this is exactly ``V0``.
        """
        v0, g, v = self.forward(X)
        if self.kind == "categorical":
            g = np.asarray(g, dtype=float)
            shift = g - g.max(axis=-1, keepdims=True) if g.ndim else 0.0
            return ad.softmax(v0 + shift, axis=-1)
        return self.probabilities_from_utilities(v)

    def biases(self, p=None):
        p = self.params if p is None else p
        k = self.n_alternatives
        if k == 2:
            return p["ord_b"]
        gaps = ad.exp(p["ord_delta"])
        cum = np.tril(np.ones((k - 2, k - 2))) @ gaps
        return ad.concatenate([p["ord_b"], p["ord_b"] - cum], axis=0)

    def cumulative(self, u, p=None):
        """``c_k = P(x > k)`` for k = 1..K-1, shape (N, K-1)."""
        p = self.params if p is None else p
        z = u @ p["ord_w"]
        return ad.sigmoid(ad.reshape(z, (-1, 1)) + ad.reshape(self.biases(p), (1, -1)))

    def probabilities_from_utilities(self, u, p=None):
        if self.kind == "categorical":
            return ad.softmax(u, axis=-1)
        c = self.cumulative(u, p)
        n = u.shape[0]
        upper = ad.concatenate([np.ones((n, 1)), c], axis=1)
        lower = ad.concatenate([c, np.zeros((n, 1))], axis=1)
        return upper - lower

    def log_probabilities(self, X, p=None):
        u = self.utilities(X, p)
        if self.kind == "categorical":
            return ad.log_softmax(u, axis=-1)
        return ad.log(ad.clamp_min(self.probabilities_from_utilities(u, p), PROB_FLOOR))

    def effective_coefficients(self) -> dict[str, float]:
        """Linear-stage effect of each feature on the latent index (ordinal) or
        on each alternative's utility relative to the first (categorical)."""
        beta = self.params["beta"] * self.mask
        if self.kind == "ordinal":
            eff = self.params["ord_w"] @ beta
            return {f.label: float(e) for f, e in zip(self.features, eff)}
        return {
            f"{f.label}@{self.spec.labels[k]}": float(beta[k, j] - beta[0, j])
            for j, f in enumerate(self.features)
            for k in range(1, self.n_alternatives)
        }

    def coefficient(self, parent: str, level: int = 2) -> float:
        """Ordinal-scale coefficient of one parent level (ordinal mechanisms)."""
        label = Feature(parent, level if self.parent_specs[parent].discrete else 0).label
        return self.effective_coefficients()[label]

    def to_meta(self) -> dict:
        return {
            "child": self.child,
            "kind": self.kind,
            "parents": self.parents,
            "residual_layers": self.residual_layers,
        }


class ConstantMechanism:
    """Mechanism of a hard intervention: emits one category with probability 1."""

    kind = "constant"
    residual_layers = 0
    n_parameters = 0

    def __init__(self, child: str, spec: VariableSpec, value: int):
        if not 1 <= value <= spec.n_categories:
            raise ValueError(f"{child}: category {value} outside 1..{spec.n_categories}")
        self.child = child
        self.spec = spec
        self.value = int(value)
        self.parents: list[str] = []
        self.params: dict[str, np.ndarray] = {}

    @property
    def n_alternatives(self) -> int:
        return self.spec.n_categories

    def copy(self):
        return self

    def probabilities(self, n: int) -> np.ndarray:
        out = np.zeros((n, self.n_alternatives))
        out[:, self.value - 1] = 1.0
        return out

    def to_meta(self) -> dict:
        return {"child": self.child, "kind": "constant", "value": self.value, "parents": []}


def systematic_utility(m: Mechanism, pa_row) -> np.ndarray:
    """Deterministic utilities (linear stage plus residual term) for a row or columns."""
    X = m.encode(pa_row)
    u = m.utilities(X)
    return u[0] if _is_row(pa_row) else u


def choice_probabilities(m: Mechanism, pa_row) -> np.ndarray:
    if isinstance(m, ConstantMechanism):
        return m.probabilities(1)[0]
    p = m.probabilities(m.encode(pa_row))
    return p[0] if _is_row(pa_row) else p


def _is_row(values) -> bool:
    return all(np.ndim(v) == 0 for v in values.values()) if values else True


# ---------------------------------------------------------------------- SCM


class Scm:
    """Mechanisms attached to a DAG, evaluated parents-first."""

    def __init__(self, dag: CausalDag, specs: dict[str, VariableSpec], mechanisms: dict):
        self.dag = dag
        self.specs = specs
        endo = set(dag.endogenous())
        missing = endo - set(mechanisms)
        if missing:
            raise ValueError(f"no mechanism for endogenous variables {sorted(missing)}")
        for child, m in mechanisms.items():
            if m.kind != "constant":
                if child not in endo:
                    raise ValueError(f"{child} has a mechanism but no parents")
                if set(m.parents) != dag.parents(child):
                    raise ValueError(f"{child}: mechanism parents differ from the DAG")
        self.order = [v for v in dag.topological_order() if v in mechanisms]
        self.mechanisms = {v: mechanisms[v] for v in self.order}

    @classmethod
    def build(cls, dag: CausalDag, specs: dict[str, VariableSpec], residual_layers=0, seed=0, threshold_init=0.45):
        rng = np.random.default_rng(seed)
        mechs = {}
        for v in dag.endogenous():
            pa = [p for p in dag.variables if p in dag.parents(v)]
            mechs[v] = Mechanism(v, specs[v], pa, specs, residual_layers, rng, threshold_init)
        return cls(dag, specs, mechs)

    @classmethod
    def from_generator(cls, cfg: GeneratorConfig) -> "Scm":
        """SCM whose mechanisms reproduce the generator's ordered logits exactly."""
        dag, specs = cfg.dag(), cfg.specs
        mechs = {}
        for child, g in cfg.mechanisms.items():
            pa = [p for p in dag.variables if p in dag.parents(child)]
            m = Mechanism(child, VariableSpec(child, "ordinal", specs[child].labels), pa, specs, 0)
            k = m.n_alternatives
            beta = np.zeros_like(m.params["beta"])
            for j, f in enumerate(m.features):
                coefs = g["coefficients"][f.parent]
                beta[k - 1, j] = coefs[max(f.level, 2) - 2]
            t = np.asarray(g["thresholds"], dtype=float)
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"{child}: thresholds must be strictly ascending")
            m.params.update(beta=beta, ord_w=np.eye(k)[k - 1], ord_b=np.array([-t[0]]), ord_delta=np.log(np.diff(t)))
            mechs[child] = m
        return cls(dag, specs, mechs)

    @property
    def n_parameters(self) -> int:
        return sum(m.n_parameters for m in self.mechanisms.values())

    def trainable(self) -> list[tuple[str, str]]:
        return [(c, k) for c, m in self.mechanisms.items() for k in m.params]

    def copy(self) -> "Scm":
        return Scm(self.dag.copy(), self.specs, {k: m.copy() for k, m in self.mechanisms.items()})

    def roots(self) -> list[str]:
        return [v for v in self.dag.variables if v not in self.mechanisms]


# ---------------------------------------------------------------- likelihood


def _teacher_forced(scm: Scm, data: Dataset):
    out = {}
    for child, m in scm.mechanisms.items():
        if m.kind == "constant":
            continue
        out[child] = (m.encode(data.columns, data.n), data[child] - 1)
    return out


def _batch_loglik(scm, prepared, params, idx=None):
    total = 0.0
    for child, (X, y) in prepared.items():
        m = scm.mechanisms[child]
        Xb, yb = (X, y) if idx is None else (X[idx], y[idx])
        lp = m.log_probabilities(Xb, params[child])
        total = total + ad.vsum(ad.pick(lp, yb))
    return total


def mechanism_log_likelihoods(scm: Scm, data: Dataset) -> dict[str, float]:
    prepared = _teacher_forced(scm, data)
    out = {}
    for child, (X, y) in prepared.items():
        p = scm.mechanisms[child].log_probabilities(X)
        out[child] = float(np.sum(p[np.arange(len(y)), y]))
    return out


def joint_log_likelihood(scm: Scm, data: Dataset) -> float:
    """Sum over rows and mechanisms of ``ln P(x_i = observed | observed parents)``.

    Probabilities below 1e-12 are clamped there; a warning reports how many.
    """
    prepared = _teacher_forced(scm, data)
    total, clamped = 0.0, 0
    for child, (X, y) in prepared.items():
        m = scm.mechanisms[child]
        if m.kind == "categorical":
            lp = m.log_probabilities(X)
            sel = lp[np.arange(len(y)), y]
            clamped += int(np.sum(sel < math.log(PROB_FLOOR)))
            sel = np.maximum(sel, math.log(PROB_FLOOR))
        else:
            probs = m.probabilities_from_utilities(m.utilities(X))
            sel = probs[np.arange(len(y)), y]
            clamped += int(np.sum(sel < PROB_FLOOR))
            sel = np.log(np.maximum(sel, PROB_FLOOR))
        total += float(np.sum(sel))
    if clamped:
        log.warning("%d observed categories had probability below %g (clamped)", clamped, PROB_FLOOR)
    return total


def aic_value(loglik: float, n_parameters: int) -> float:
    return -2.0 * loglik + 2.0 * n_parameters


def aic(scm: Scm, data: Dataset) -> float:
    return aic_value(joint_log_likelihood(scm, data), scm.n_parameters)


# ------------------------------------------------------------------ training


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def rows(self):
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
            yield e, tr, va


def _snapshot(scm: Scm):
    return {c: {k: v.copy() for k, v in m.params.items()} for c, m in scm.mechanisms.items()}


def _restore(scm: Scm, snap):
    for c, ps in snap.items():
        scm.mechanisms[c].params = {k: v.copy() for k, v in ps.items()}


def fit(scm: Scm, train: Dataset, val: Dataset, cfg: FitConfig) -> tuple[Scm, TrainingLog]:
    """Minimize the mean negative joint log-likelihood with minibatch RMSprop.

    Epoch 0 in the log is the initialization.  Training stops after
    ``cfg.patience`` epochs without a validation improvement and the
    parameters of the best validation epoch are returned.
    """
    scm = scm.copy()
    rng = np.random.default_rng(cfg.seed)
    tr_prep = _teacher_forced(scm, train)
    va_prep = _teacher_forced(scm, val)
    names = scm.trainable()
    n_val = max(val.n, 1)

    def val_loss():
        p = {c: m.params for c, m in scm.mechanisms.items()}
        return -float(_batch_loglik(scm, va_prep, p)) / n_val

    history = TrainingLog()
    history.train_loss.append(-float(_batch_loglik(scm, tr_prep, {c: m.params for c, m in scm.mechanisms.items()})) / max(train.n, 1))
    history.val_loss.append(val_loss())
    best, best_snap, stale = history.val_loss[0], _snapshot(scm), 0
    state = ad.OptimizerState(cfg.learning_rate)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(train.n)
        batch_losses = []
        for start in range(0, train.n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            tape = ad.Tape()
            leaves = {c: {} for c in scm.mechanisms}
            flat = []
            for c, k in names:
                leaf = tape.leaf(scm.mechanisms[c].params[k])
                leaves[c][k] = leaf
                flat.append(leaf)
            loss = -_batch_loglik(scm, tr_prep, leaves, idx) * (1.0 / len(idx))
            lv = float(loss.value)
            if not math.isfinite(lv):
                _restore(scm, best_snap)
                raise DivergenceError(f"non-finite loss at epoch {epoch}", last_finite=scm)
            grads = ad.gradient(loss, flat)
            new, state = ad.rmsprop_step([leaf.value for leaf in flat], grads, state)
            for (c, k), arr in zip(names, new):
                scm.mechanisms[c].params[k] = arr
            batch_losses.append(lv)
        history.train_loss.append(float(np.mean(batch_losses)))
        vl = val_loss()
        history.val_loss.append(vl)
        if not math.isfinite(vl):
            _restore(scm, best_snap)
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", last_finite=scm)
        if vl < best:
            best, best_snap, stale = vl, _snapshot(scm), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                break
    _restore(scm, best_snap)
    return scm, history


# ---------------------------------------------------------------- prediction


def predict_sequential(scm: Scm, exo, offsets=None, variables=None):
    """Predict every mechanism from the exogenous roots alone.

    Upstream predictions reach their children as probability vectors; the
    reported category is the argmax (ties go to the lowest code).
    ``offsets`` maps a mechanism to an (N, K) array added to its utilities
    (abducted residuals); ``variables`` restricts evaluation to a subset
    that must be closed under endogenous parents.
    Returns ``(categories, probabilities)``.
    """
    columns = exo.columns if isinstance(exo, Dataset) else exo
    offsets = offsets or {}
    roots = scm.roots()
    single = _is_row({k: columns[k] for k in roots if k in columns})
    values = {}
    for r in roots:
        if r not in columns:
            raise EvaluationError(f"missing exogenous value {r!r}")
        values[r] = np.atleast_1d(columns[r])
    n = len(values[roots[0]]) if roots else 1
    cats, probs = {}, {}
    for child, m in scm.mechanisms.items():
        if variables is not None and child not in variables:
            continue
        if m.kind == "constant":
            p = m.probabilities(n)
        else:
            X = m.encode(values, n)
            if child in offsets:
                u = m.utilities(X) + np.asarray(offsets[child], dtype=float).reshape(n, -1)
                p = m.probabilities_from_utilities(u)
            else:
                p = m.probabilities(X)
        probs[child] = p
        cats[child] = np.argmax(p, axis=1) + 1
        values[child] = p
    if single:
        return {k: int(v[0]) for k, v in cats.items()}, {k: v[0] for k, v in probs.items()}
    return cats, probs


def mpe(scm: Scm, data: Dataset) -> dict[str, float]:
    """Share of rows whose sequential prediction misses the observed category."""
    cats, _ = predict_sequential(scm, data)
    return {c: float(np.mean(cats[c] != data[c])) for c in scm.mechanisms if c in data.columns}


def substitution_curve(scm: Scm, data: Dataset, variable: str, grid) -> list[tuple[float, dict[str, np.ndarray]]]:
    """Average predicted choice probabilities with ``variable`` set to each grid value."""
    users = [c for c, m in scm.mechanisms.items() if variable in m.parents]
    if not users:
        raise ValueError(f"{variable!r} is not a parent of any mechanism")
    if scm.specs[variable].discrete:
        raise ValueError(f"{variable!r} must be continuous")
    out = []
    for x in grid:
        cols = dict(data.columns)
        cols[variable] = np.full(data.n, float(x))
        _, probs = predict_sequential(scm, cols)
        out.append((float(x), {c: p.mean(axis=0) for c, p in probs.items()}))
    return out


# -------------------------------------------------------------- persistence


def _mech_tensors(m, prefix=""):
    return {f"{prefix}{m.child}/{k}": v for k, v in m.params.items()}


def mechanism_bytes(m) -> bytes:
    """Canonical serialization of one mechanism (structure and parameters)."""
    return tensorio.dumps(_mech_tensors(m), m.to_meta())


def scm_to_bytes(scm: Scm) -> bytes:
    tensors = {}
    for m in scm.mechanisms.values():
        tensors.update(_mech_tensors(m, "mech/"))
    meta = {
        "format": "causalchoice-scm",
        "variables": [scm.specs[v].to_dict() for v in scm.dag.variables],
        "edges": [list(e) for e in scm.dag.edges],
        "mechanisms": [m.to_meta() for m in scm.mechanisms.values()],
    }
    return tensorio.dumps(tensors, meta)


def scm_from_bytes(buf: bytes) -> Scm:
    tensors, meta = tensorio.loads(buf)
    if meta.get("format") != "causalchoice-scm":
        raise tensorio.FormatError("not a model file")
    specs = {d["name"]: VariableSpec.from_dict(d) for d in meta["variables"]}
    dag = CausalDag(list(specs), [tuple(e) for e in meta["edges"]])
    mechs = {}
    for mm in meta["mechanisms"]:
        child = mm["child"]
        if mm["kind"] == "constant":
            mechs[child] = ConstantMechanism(child, specs[child], mm["value"])
            continue
        m = Mechanism(child, VariableSpec(child, mm["kind"], specs[child].labels), mm["parents"], specs, mm["residual_layers"])
        m.spec = specs[child] if specs[child].kind == mm["kind"] else m.spec
        m.params = {k.split("/", 2)[2]: v for k, v in tensors.items() if k.startswith(f"mech/{child}/")}
        mechs[child] = m
    return Scm(dag, specs, mechs)


def save_scm(path, scm: Scm) -> None:
    with open(path, "wb") as fh:
        fh.write(scm_to_bytes(scm))


def load_scm(path) -> Scm:
    with open(path, "rb") as fh:
        return scm_from_bytes(fh.read())


def coefficient_rows(scm: Scm):
    """(mechanism, alternative, parent feature, estimate) rows for reporting."""
    rows = []
    for child, m in scm.mechanisms.items():
        if m.kind == "constant":
            continue
        beta = m.params["beta"]
        for k in range(m.n_alternatives):
            for j, f in enumerate(m.features):
                if m.mask[k, j]:
                    rows.append((child, m.spec.labels[k], f.label, float(beta[k, j])))
        if m.kind == "ordinal":
            for label, v in m.effective_coefficients().items():
                rows.append((child, "(latent index)", label, v))
            for i, b in enumerate(np.atleast_1d(m.biases())):
                rows.append((child, "(threshold)", f"b{i + 1}", float(b)))
    return rows
