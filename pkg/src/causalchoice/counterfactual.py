"""Counterfactual analysis: flow-VAE abduction, do-operations, prediction.

A :class:`FlowVae` learns an approximate posterior over a latent vector
``gamma`` given a mechanism's parents.  The encoder gives a Gaussian base
draw ``gamma_0``, a stack of planar flows maps it to ``gamma_K``, and a
decoder reconstructs the parents.  The abducted residual of a row is
``gamma_K - systematic_utility``; it is held fixed while the model is
manipulated and the outcome re-predicted.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensorio
from .data import Dataset
from .scm import ConstantMechanism, DivergenceError, Mechanism, Scm, predict_sequential

LOG_2PI = math.log(2.0 * math.pi)
INVERTIBILITY_MARGIN = 1e-9


class InterventionError(ValueError):
    pass


# ------------------------------------------------------------ planar flows


def _corrected_u(u, w):
    """Return ``u_hat`` with ``w . u_hat >= -1 + 1e-9``.

    ``u`` is left untouched where ``w . u >= -1/2``; below that the inner
    product is mapped smoothly onto ``(-1, -1/2)`` by
    ``m(a) = -1 + exp(2a + 1) / 2``, which matches ``a`` in value and slope
    at ``a = -1/2``.
    """
    a = ad.vsum(w * u)
    av = float(ad._val(a))
    if av >= -0.5:
        return u
    target = ad.clamp_min(-1.0 + 0.5 * ad.exp(2.0 * a + 1.0), -1.0 + INVERTIBILITY_MARGIN)
    norm2 = ad.clamp_min(ad.vsum(w * w), 1e-300)
    return u + (target - a) * w / norm2


def planar_layer(gamma, u, w, b):
    """One planar map over rows of ``gamma``; returns ``(gamma', log|det J|)``."""
    uh = _corrected_u(u, w)
    pre = gamma @ w + b
    h = ad.tanh(pre)
    out = gamma + ad.reshape(h, (-1, 1)) * ad.reshape(uh, (1, -1))
    wu = ad.vsum(w * uh)
    det = 1.0 + (1.0 - h * h) * wu
    return out, ad.log(ad.absolute(det))


def flow_forward(flows, gamma0):
    """Push ``gamma0`` (d or N x d) through ``flows`` = [(u, w, b), ...]."""
    single = np.ndim(ad._val(gamma0)) == 1
    g = ad.reshape(gamma0, (1, -1)) if single else gamma0
    total = 0.0
    for u, w, b in flows:
        g, ld = planar_layer(g, u, w, b)
        total = total + ld
    gv = ad._val(g)
    if not np.all(np.isfinite(gv)) or not np.all(np.isfinite(ad._val(total))):
        raise ad.DomainError("non-finite value in flow")
    if isinstance(total, float):
        total = np.zeros(len(gv))
    if single:
        return ad.reshape(g, (-1,)), ad.getitem(total, 0)
    return g, total


def reparameterize(mu, sigma, noise):
    return mu + sigma * noise


# ------------------------------------------------------------------ the VAE


@dataclass
class FvaeConfig:
    hidden_layers: int = 4
    width: int = 16
    flows: int = 4
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    warmup: int = 10

    def __post_init__(self):
        if self.hidden_layers < 0 or self.flows < 0 or self.width < 1:
            raise ValueError("hidden_layers and flows must be >= 0 and width >= 1")


def _dense(rng, n_in, n_out, scale=1.0):
    lim = scale * math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out)


class FlowVae:
    """Encoder, planar flow stack and decoder for one mechanism's latent."""

    def __init__(self, mechanism: Mechanism, cfg: FvaeConfig | None = None):
        if isinstance(mechanism, ConstantMechanism):
            raise ValueError("a constant mechanism has no latent to abduct")
        cfg = cfg or FvaeConfig()
        self.cfg = cfg
        self.child = mechanism.child
        self.features = list(mechanism.features)
        self.parent_specs = dict(mechanism.parent_specs)
        self.parents = list(mechanism.parents)
        self.d = mechanism.n_alternatives
        f = len(self.features)
        self.x_mean = np.zeros(f)
        self.x_std = np.ones(f)
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, np.ndarray] = {}
        n_in = f
        for i in range(cfg.hidden_layers):
            p[f"enc{i}_W"], p[f"enc{i}_b"] = _dense(rng, n_in, cfg.width)
            n_in = cfg.width
        p["enc_out_W"], p["enc_out_b"] = _dense(rng, n_in, 2 * self.d, 0.1)
        for k in range(cfg.flows):
            p[f"flow{k}_u"] = rng.normal(0.0, 0.1, self.d)
            p[f"flow{k}_w"] = rng.normal(0.0, 0.1, self.d)
            p[f"flow{k}_b"] = np.zeros(1)
        n_in = self.d
        for i in range(cfg.hidden_layers):
            p[f"dec{i}_W"], p[f"dec{i}_b"] = _dense(rng, n_in, cfg.width)
            n_in = cfg.width
        for name in self.parents:
            ps = self.parent_specs[name]
            width = ps.n_categories if ps.discrete else 1
            p[f"dec_out_{name}_W"], p[f"dec_out_{name}_b"] = _dense(rng, n_in, width, 0.1)
        self.params = p

    def copy(self) -> "FlowVae":
        other = object.__new__(FlowVae)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.x_mean, other.x_std = self.x_mean.copy(), self.x_std.copy()
        return other

    def zero_encoder(self) -> "FlowVae":
        """Copy with every encoder weight and bias set to zero."""
        other = self.copy()
        for k in other.params:
            if k.startswith("enc"):
                other.params[k] = np.zeros_like(other.params[k])
        return other

    def identity_flows(self) -> "FlowVae":
        other = self.copy()
        for k in other.params:
            if k.startswith("flow") and k.endswith("_u"):
                other.params[k] = np.zeros_like(other.params[k])
        return other

    def flows(self, p=None):
        p = self.params if p is None else p
        return [(p[f"flow{k}_u"], p[f"flow{k}_w"], p[f"flow{k}_b"]) for k in range(self.cfg.flows)]

    def standardized(self, values, n=None) -> np.ndarray:
        from .scm import encode_parents

        X = encode_parents(self.features, self.parent_specs, values, n)
        return (X - self.x_mean) / self.x_std

    def _mlp(self, x, prefix, p):
        for i in range(self.cfg.hidden_layers):
            x = ad.tanh(x @ ad.transpose(p[f"{prefix}{i}_W"]) + p[f"{prefix}{i}_b"])
        return x

    def encode_std(self, X, p=None):
        p = self.params if p is None else p
        h = self._mlp(X, "enc", p)
        out = h @ ad.transpose(p["enc_out_W"]) + p["enc_out_b"]
        return out[:, : self.d], out[:, self.d :]

    def decode(self, g, p=None):
        p = self.params if p is None else p
        h = self._mlp(g, "dec", p)
        return {name: h @ ad.transpose(p[f"dec_out_{name}_W"]) + p[f"dec_out_{name}_b"] for name in self.parents}

    def to_bytes(self) -> bytes:
        tensors = dict(self.params)
        tensors["x_mean"], tensors["x_std"] = self.x_mean, self.x_std
        meta = {"format": "causalchoice-fvae", "child": self.child, "config": self.cfg.__dict__}
        return tensorio.dumps(tensors, meta)

    @classmethod
    def from_bytes(cls, buf: bytes, mechanism: Mechanism) -> "FlowVae":
        tensors, meta = tensorio.loads(buf)
        if meta.get("format") != "causalchoice-fvae" or meta["child"] != mechanism.child:
            raise tensorio.FormatError("flow-VAE file does not match the mechanism")
        v = cls(mechanism, FvaeConfig(**meta["config"]))
        v.x_mean, v.x_std = tensors.pop("x_mean"), tensors.pop("x_std")
        v.params = tensors
        return v


def encode(v: FlowVae, pa_row) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation for a row (or columns) of parents."""
    single = all(np.ndim(x) == 0 for x in pa_row.values())
    X = v.standardized(pa_row)
    mu, logvar = v.encode_std(X)
    sigma = np.exp(0.5 * logvar)
    return (mu[0], sigma[0]) if single else (mu, sigma)


def _recon_loglik(v: FlowVae, g, values, p):
    logits = v.decode(g, p)
    total = 0.0
    for name in v.parents:
        ps = v.parent_specs[name]
        out = logits[name]
        if ps.discrete:
            codes = np.asarray(values[name], dtype=np.int64) - 1
            total = total + ad.pick(ad.log_softmax(out, axis=-1), codes)
        else:
            x = np.asarray(values[name], dtype=float)
            resid = ad.reshape(out, (-1,)) - x
            total = total + (-0.5 * LOG_2PI - 0.5 * resid * resid)
    return total


def elbo_terms(v: FlowVae, values, noise, p=None):
    """Per-row ``(ln Q0(g0), log-det, ln p(gK), ln p(Pa | gK))``."""
    p = v.params if p is None else p
    noise = np.atleast_2d(noise)
    X = v.standardized(values, len(noise))
    mu, logvar = v.encode_std(X, p)
    if not np.all(np.isfinite(ad._val(logvar))):
        raise ad.DomainError("non-finite encoder variance")
    sigma = ad.exp(0.5 * logvar)
    g0 = reparameterize(mu, sigma, noise)
    diff = g0 - mu
    log_q0 = ad.vsum(-0.5 * LOG_2PI - 0.5 * logvar - 0.5 * diff * diff / ad.exp(logvar), axis=1)
    gk, logdet = flow_forward(v.flows(p), g0)
    log_prior = ad.vsum(-0.5 * LOG_2PI - 0.5 * gk * gk, axis=1)
    return log_q0, logdet, log_prior, _recon_loglik(v, gk, values, p)


def elbo_loss(v: FlowVae, values, noise, p=None, kl_weight: float = 1.0):
    """Batch mean of ``ln Q0(g0) - log-det - ln p(gK) - ln p(Pa | gK)``.

    ``kl_weight`` scales the first three terms; it is below 1 only during
    the warm-up epochs of :func:`fit_fvae`.
    """
    log_q0, logdet, log_prior, recon = elbo_terms(v, values, noise, p)
    return ad.mean((log_q0 - logdet - log_prior) * kl_weight - recon)


def kl_estimate(v: FlowVae, values, noise) -> np.ndarray:
    """Per-row single-draw estimate of ``KL(Q_K || prior)``."""
    log_q0, logdet, log_prior, _ = elbo_terms(v, values, noise)
    return log_q0 - logdet - log_prior


@dataclass
class FvaeLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _subset(values, idx):
    return {k: np.asarray(v)[idx] for k, v in values.items()}


def fit_fvae(v: FlowVae, train: Dataset, val: Dataset | None = None, cfg: FvaeConfig | None = None):
    """Train encoder, flows and decoder jointly on the negative ELBO.

    The KL part of the loss is ramped linearly from 0 to 1 over
    ``cfg.warmup`` epochs, which keeps the decoder from ignoring the latent
    early on.  Validation uses the full ELBO with one fixed noise draw per
    row, so the stopping rule is deterministic; the best epoch is chosen
    among those trained at full weight.  Returns ``(fitted copy, log)``.
    """
    cfg = cfg or v.cfg
    v = v.copy()
    val = val if val is not None else train
    X = v.standardized(train.columns, train.n)
    if X.shape[1]:
        v.x_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        v.x_std = np.where(sd > 0, sd, 1.0)
    rng = np.random.default_rng(cfg.seed)
    val_noise = np.random.default_rng(cfg.seed + 1).standard_normal((val.n, v.d))
    names = list(v.params)

    def val_loss():
        return float(elbo_loss(v, val.columns, val_noise))

    history = FvaeLog()
    history.val_loss.append(val_loss())
    history.train_loss.append(float(elbo_loss(v, train.columns, rng.standard_normal((train.n, v.d)))))
    best, best_params, stale = history.val_loss[0], {k: a.copy() for k, a in v.params.items()}, 0
    state = ad.OptimizerState(cfg.learning_rate)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(train.n)
        losses = []
        beta = min(1.0, epoch / cfg.warmup) if cfg.warmup > 0 else 1.0
        for start in range(0, train.n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            noise = rng.standard_normal((len(idx), v.d))
            tape = ad.Tape()
            leaves = {k: tape.leaf(v.params[k]) for k in names}
            loss = elbo_loss(v, _subset(train.columns, idx), noise, leaves, beta)
            lv = float(loss.value)
            if not math.isfinite(lv):
                v.params = best_params
                raise DivergenceError(f"non-finite ELBO at epoch {epoch}", last_finite=v)
            grads = ad.gradient(loss, [leaves[k] for k in names])
            new, state = ad.rmsprop_step([v.params[k] for k in names], grads, state)
            v.params = dict(zip(names, new))
            losses.append(lv)
        history.train_loss.append(float(np.mean(losses)))
        vl = val_loss()
        history.val_loss.append(vl)
        if beta < 1.0:
            continue
        if vl < best or epoch == max(cfg.warmup, 1):
            best, best_params, stale = vl, {k: a.copy() for k, a in v.params.items()}, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    v.params = best_params
    return v, history


def latent(v: FlowVae, values, noise=None) -> np.ndarray:
    """``gamma_K`` for each row; ``noise=None`` follows the posterior mean."""
    X = v.standardized(values)
    mu, logvar = v.encode_std(X)
    noise = np.zeros_like(mu) if noise is None else np.asarray(noise, dtype=float).reshape(mu.shape)
    gk, _ = flow_forward(v.flows(), reparameterize(mu, np.exp(0.5 * logvar), noise))
    return gk


def reconstruct(v: FlowVae, values) -> dict[str, np.ndarray]:
    """Decoded parent categories (or means) along the posterior-mean path."""
    out = v.decode(latent(v, values))
    return {
        name: np.argmax(o, axis=1) + 1 if v.parent_specs[name].discrete else o[:, 0]
        for name, o in out.items()
    }


def abduct(v: FlowVae, m: Mechanism, row, noise=None) -> np.ndarray:
    """Residual ``gamma_K - systematic_utility`` for a row or columns of parents."""
    if v.child != m.child or v.features != list(m.features):
        raise InterventionError(f"flow-VAE for {v.child!r} does not match mechanism {m.child!r}")
    single = all(np.ndim(x) == 0 for x in row.values())
    gk = latent(v, row, noise)
    eps = gk - m.utilities(m.encode(row))
    return eps[0] if single else eps


def abduct_all(vaes: dict[str, FlowVae], scm: Scm, data: Dataset, noise=None) -> dict[str, np.ndarray]:
    """Residual store ``{mechanism: (N, K)}`` for every mechanism with a VAE."""
    return {c: abduct(v, scm.mechanisms[c], data.columns, None if noise is None else noise[c]) for c, v in vaes.items()}


def save_eps(path, eps: dict[str, np.ndarray]) -> None:
    tensorio.save(path, {f"eps/{k}": v for k, v in eps.items()}, {"format": "causalchoice-eps", "rows": "index"})


def load_eps(path) -> dict[str, np.ndarray]:
    tensors, meta = tensorio.load(path)
    if meta.get("format") != "causalchoice-eps":
        raise tensorio.FormatError("not a residual store")
    return {k.split("/", 1)[1]: v for k, v in tensors.items()}


def latent_samples_csv(v: FlowVae, data: Dataset, draws: int, seed: int) -> str:
    """CSV of ``gamma_K`` samples (row, draw, gamma_1..gamma_d) for histograms."""
    rng = np.random.default_rng(seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "draw"] + [f"gamma_{j + 1}" for j in range(v.d)])
    for draw in range(draws):
        gk = latent(v, data.columns, rng.standard_normal((data.n, v.d)))
        for i in range(data.n):
            w.writerow([i, draw] + [repr(float(x)) for x in gk[i]])
    return buf.getvalue()


# ------------------------------------------------------------ interventions


@dataclass
class InterventionSpec:
    target: str
    kind: str = "hard"
    value: int | None = None
    mechanism: Mechanism | None = None

    def __post_init__(self):
        if self.kind not in ("hard", "soft"):
            raise InterventionError(f"unknown intervention kind {self.kind!r}")
        if self.kind == "hard" and self.value is None:
            raise InterventionError("a hard intervention needs a value")
        if self.kind == "soft" and self.mechanism is None:
            raise InterventionError("a soft intervention needs a replacement mechanism")

    @classmethod
    def parse(cls, text: str, scm: Scm) -> "InterventionSpec":
        """``"stress=low"`` or ``"stress=1"`` (hard); ``"none"`` is the identity."""
        if text.strip() == "none":
            raise InterventionError("use identity() for the no-op intervention")
        target, _, value = text.partition("=")
        target, value = target.strip(), value.strip()
        if target not in scm.specs:
            raise InterventionError(f"unknown variable {target!r}")
        labels = scm.specs[target].labels
        code = labels.index(value) + 1 if value in labels else int(value)
        return cls(target, "hard", code)

    @classmethod
    def identity(cls, scm: Scm, target: str) -> "InterventionSpec":
        return cls(target, "soft", mechanism=scm.mechanisms[target].copy())


def intervene(scm: Scm, spec: InterventionSpec) -> Scm:
    """Interventional copy of ``scm``; every other mechanism is left as is."""
    t = spec.target
    if t not in scm.dag.variables:
        raise InterventionError(f"unknown variable {t!r}")
    if t not in scm.mechanisms:
        raise InterventionError(f"{t!r} is exogenous; only endogenous variables can be intervened on")
    dag = scm.dag.copy()
    for p in sorted(dag.parents(t)):
        dag.remove_edge(p, t)
    if spec.kind == "hard":
        new = ConstantMechanism(t, scm.specs[t], spec.value)
    else:
        new = spec.mechanism
        if new.child != t:
            raise InterventionError(f"replacement mechanism is for {new.child!r}, not {t!r}")
        for p in new.parents:
            dag.add_edge(p, t)
    mechs = {c: (new if c == t else m.copy()) for c, m in scm.mechanisms.items()}
    return Scm(dag, scm.specs, mechs)


def _relevant(scm: Scm, outcome: str | None):
    if outcome is None:
        return list(scm.mechanisms)
    keep = scm.dag.ancestors(outcome) | {outcome}
    return [c for c in scm.mechanisms if c in keep]


def predict_counterfactual(int_scm: Scm, eps: dict[str, np.ndarray], row, outcome: str | None = None):
    """Sequential prediction with each mechanism's residual added to its
    utilities.  Returns the outcome category (or all categories when
    ``outcome`` is None)."""
    variables = _relevant(int_scm, outcome)
    for c in variables:
        if int_scm.mechanisms[c].kind != "constant" and c not in eps:
            raise InterventionError(f"no abducted residual for {c!r}")
    cats, _ = predict_sequential(int_scm, row, offsets=eps, variables=set(variables))
    return cats if outcome is None else cats[outcome]


def transition_matrix(factual, counterfactual, k: int) -> np.ndarray:
    f = np.asarray(factual, dtype=np.int64)
    c = np.asarray(counterfactual, dtype=np.int64)
    if f.shape != c.shape:
        raise ValueError("factual and counterfactual differ in length")
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (f - 1, c - 1), 1)
    return out


@dataclass
class CounterfactualReport:
    outcome: str
    labels: tuple[str, ...]
    factual: np.ndarray
    counterfactual: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return transition_matrix(self.factual, self.counterfactual, len(self.labels))

    def share_deltas(self) -> dict[str, float]:
        k = len(self.labels)
        f = np.bincount(self.factual - 1, minlength=k) / len(self.factual)
        c = np.bincount(self.counterfactual - 1, minlength=k) / len(self.counterfactual)
        return {lab: float(c[i] - f[i]) for i, lab in enumerate(self.labels)}

    def summary(self) -> dict:
        n = len(self.factual)
        return {
            "outcome": self.outcome,
            "n": n,
            "share_delta": self.share_deltas(),
            "decreased": float(np.mean(self.counterfactual < self.factual)) if n else 0.0,
            "increased": float(np.mean(self.counterfactual > self.factual)) if n else 0.0,
            "unchanged": float(np.mean(self.counterfactual == self.factual)) if n else 0.0,
        }

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "factual", "counterfactual"])
        for i, (a, b) in enumerate(zip(self.factual, self.counterfactual)):
            w.writerow([i, self.labels[a - 1], self.labels[b - 1]])
        return buf.getvalue()

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["factual\\counterfactual"] + list(self.labels))
        for lab, row in zip(self.labels, self.matrix):
            w.writerow([lab] + [int(x) for x in row])
        return buf.getvalue()


def counterfactual_report(scm: Scm, spec: InterventionSpec | None, eps, data: Dataset, outcome: str) -> CounterfactualReport:
    """Factual (original model plus residuals) against counterfactual outcomes."""
    factual = np.atleast_1d(predict_counterfactual(scm, eps, data, outcome))
    int_scm = scm if spec is None else intervene(scm, spec)
    cf = np.atleast_1d(predict_counterfactual(int_scm, eps, data, outcome))
    return CounterfactualReport(outcome, scm.specs[outcome].labels, factual, cf)


def fit_outcome_vaes(scm: Scm, train: Dataset, val: Dataset, outcome: str, cfg: FvaeConfig):
    """One flow-VAE per mechanism on the outcome's ancestral path."""
    out, logs = {}, {}
    for c in _relevant(scm, outcome):
        m = scm.mechanisms[c]
        if m.kind == "constant":
            continue
        out[c], logs[c] = fit_fvae(FlowVae(m, cfg), train, val, cfg)
    return out, logs

