"""Command-line entry point: ``causalchoice <command> [options]``.

Commands: simulate, discover, fit, search, counterfactual.  Every command
needs ``--seed`` and writes into ``--out``.  A JSON ``--config`` file may
supply any option by its long name (dashes or underscores); options on the
command line win.  Exit codes: 0 success, 1 usage or input error, 2
numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import counterfactual as cf
from . import scm as S
from .data import (
    Dataset,
    GeneratorConfig,
    IngestionError,
    default_generator,
    dump_specs,
    knowledge_from_specs,
    load_csv,
    load_specs,
    simulate,
    split,
)
from .discovery import KnowledgeError, SearchConfig, greedy_search
from .graph import CausalDag, CycleError, Knowledge, QueryError, check_knowledge

log = logging.getLogger("causalchoice")

DEFAULTS = {
    "n": None,
    "generator": None,
    "max_parents": 6,
    "no_reversals": False,
    "residual_layers": 2,
    "learning_rate": 0.01,
    "batch_size": 64,
    "threshold_init": 0.45,
    "hidden_layers": 4,
    "epochs": 100,
    "patience": 10,
    "ratio": 0.7,
    "trials": 4,
    "intervention": "none",
    "model": None,
    "fvae_epochs": 40,
    "flows": 4,
    "latent_draws": 0,
    "sweep": None,
    "grid": None,
}


class UsageError(Exception):
    pass


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str | bytes) -> Path:
    path = out / name
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text)
    return path


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _load_data(args) -> Dataset:
    _need(args, "data", "specs")
    specs = load_specs(args.specs)
    data = load_csv(args.data, specs)
    if data.n == 0:
        raise UsageError(f"{args.data}: no complete rows")
    if getattr(data, "dropped", 0):
        log.info("dropped %d incomplete rows", data.dropped)
    return data


def _load_dag(args, data: Dataset) -> CausalDag:
    _need(args, "dag")
    dag = CausalDag.from_text(Path(args.dag).read_text())
    for v in data.names:
        if v not in dag.variables:
            dag.add_variable(v)
    unknown = set(dag.variables) - set(data.names)
    if unknown:
        raise UsageError(f"DAG variables missing from the data: {sorted(unknown)}")
    return CausalDag([v for v in data.names], dag.edges)


def _knowledge(args, specs) -> Knowledge:
    k = knowledge_from_specs(specs)
    if args.knowledge:
        extra = Knowledge.from_text(Path(args.knowledge).read_text())
        k = Knowledge(
            forbidden=k.forbidden | extra.forbidden,
            required=k.required | extra.required,
            tiers=extra.tiers,
            exogenous=k.exogenous | extra.exogenous,
        )
    return k


def _fit_config(args, seed=None) -> S.FitConfig:
    return S.FitConfig(
        residual_layers=int(args.residual_layers),
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        threshold_init=float(args.threshold_init),
        epochs=int(args.epochs),
        patience=int(args.patience),
        seed=int(args.seed if seed is None else seed),
        hidden_layers=int(args.hidden_layers),
    )


def _fit_one(data: Dataset, dag: CausalDag, cfg: S.FitConfig, ratio: float, split_seed: int):
    train, val = split(data, ratio, split_seed)
    model = S.Scm.build(dag, data.specs, cfg.residual_layers, cfg.seed, cfg.threshold_init)
    fitted, history = S.fit(model, train, val, cfg)
    return fitted, history, train, val


def _report(fitted: S.Scm, history, train: Dataset, val: Dataset, cfg: S.FitConfig) -> dict:
    ll_train = S.joint_log_likelihood(fitted, train)
    ll_val = S.joint_log_likelihood(fitted, val) if val.n else 0.0
    b = fitted.n_parameters
    return {
        "config": dict(cfg.__dict__),
        "n_train": train.n,
        "n_val": val.n,
        "log_likelihood_train": ll_train,
        "log_likelihood_val": ll_val,
        "n_parameters": b,
        "aic": S.aic_value(ll_train, b),
        "mpe_val": S.mpe(fitted, val) if val.n else {},
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.val_loss) - 1,
        "stopped_early": history.stopped_early,
    }


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_simulate(args, out: Path) -> None:
    cfg = GeneratorConfig.load(args.generator) if args.generator else default_generator()
    cfg = cfg.replace(seed=int(args.seed), **({"n": int(args.n)} if args.n is not None else {}))
    data = simulate(cfg)
    _write(out, "data.csv", data.to_csv())
    _write(out, "specs.json", dump_specs(data.specs))
    _write(out, "generator.json", cfg.dump())
    _write(out, "dag.txt", cfg.dag().to_text())
    print(f"simulated {data.n} rows -> {out / 'data.csv'}")


def cmd_discover(args, out: Path) -> None:
    data = _load_data(args)
    k = _knowledge(args, data.specs)
    dag, trace = greedy_search(data, k, SearchConfig(int(args.max_parents), not args.no_reversals))
    bad = check_knowledge(dag, k)
    if bad:
        raise KnowledgeError("; ".join(bad))
    _write(out, "dag.txt", dag.to_text())
    _write(out, "trace.log", trace.to_text())
    print(f"{len(dag.edges)} edges, score {trace.final_score:.4f} -> {out / 'dag.txt'}")


def cmd_fit(args, out: Path) -> None:
    data = _load_data(args)
    dag = _load_dag(args, data)
    cfg = _fit_config(args)
    fitted, history, train, val = _fit_one(data, dag, cfg, float(args.ratio), int(args.seed))
    report = _report(fitted, history, train, val, cfg)
    _write(out, "model.cct", S.scm_to_bytes(fitted))
    _write(out, "report.json", _dump_json(report))
    _write(out, "coefficients.csv", _csv(["mechanism", "alternative", "parent", "estimate"], S.coefficient_rows(fitted)))
    _write(out, "training_log.csv", _csv(["epoch", "train_loss", "val_loss"], history.rows()))
    if args.sweep:
        _need(args, "grid")
        lo, hi, n = (float(x) for x in str(args.grid).split(":"))
        curve = S.substitution_curve(fitted, data, args.sweep, np.linspace(lo, hi, int(n)))
        rows = [
            (x, mech, fitted.specs[mech].labels[k], float(p[k]))
            for x, probs in curve
            for mech, p in probs.items()
            for k in range(len(p))
        ]
        _write(out, "substitution.csv", _csv([args.sweep, "mechanism", "alternative", "share"], rows))
    print(f"AIC {report['aic']:.2f}, LL {report['log_likelihood_train']:.2f}, B {report['n_parameters']}")


def sample_plan(trials: int, seed: int) -> list[S.FitConfig]:
    """Draw hyperparameters uniformly from the declared ranges."""
    rng = np.random.default_rng(seed)
    seeds = rng.choice(2**31 - 1, size=trials, replace=False)
    plan = []
    for s in seeds:
        plan.append(
            dict(
                residual_layers=int(rng.choice(S.RESIDUAL_LAYERS)),
                learning_rate=float(rng.choice(S.LEARNING_RATES)),
                batch_size=int(rng.choice(S.BATCH_SIZES)),
                hidden_layers=int(rng.choice(S.HIDDEN_LAYERS)),
                threshold_init=float(rng.uniform(*S.THRESHOLD_RANGE)),
                seed=int(s),
            )
        )
    return plan


def cmd_search(args, out: Path) -> None:
    data = _load_data(args)
    dag = _load_dag(args, data)
    plan = sample_plan(int(args.trials), int(args.seed))
    board, best = [], None
    for i, p in enumerate(plan):
        cfg = S.FitConfig(epochs=int(args.epochs), patience=int(args.patience), **p)
        try:
            fitted, history, train, val = _fit_one(data, dag, cfg, float(args.ratio), int(args.seed))
        except S.DivergenceError as exc:
            log.warning("trial %d diverged: %s", i, exc)
            continue
        vl = min(history.val_loss)
        board.append((vl, i, cfg))
        if best is None or vl < best[0]:
            best = (vl, i, fitted, history, train, val, cfg)
    if best is None:
        raise S.DivergenceError("every trial diverged")
    board.sort(key=lambda r: (r[0], r[1]))
    rows = [
        (i, vl, c.residual_layers, c.learning_rate, c.batch_size, c.hidden_layers, c.threshold_init, c.seed)
        for vl, i, c in board
    ]
    header = ["trial", "val_loss", "residual_layers", "learning_rate", "batch_size", "hidden_layers", "threshold_init", "seed"]
    _write(out, "leaderboard.csv", _csv(header, rows))
    vl, i, fitted, history, train, val, cfg = best
    report = _report(fitted, history, train, val, cfg)
    report["trial"] = i
    _write(out, "model.cct", S.scm_to_bytes(fitted))
    _write(out, "report.json", _dump_json(report))
    print(f"best trial {i}: val loss {vl:.6f}")


def cmd_counterfactual(args, out: Path) -> None:
    data = _load_data(args)
    _need(args, "outcome")
    if args.model:
        model = S.load_scm(args.model)
    else:
        dag = _load_dag(args, data)
        model, _, _, _ = _fit_one(data, dag, _fit_config(args), float(args.ratio), int(args.seed))
        _write(out, "model.cct", S.scm_to_bytes(model))
    if args.outcome not in model.mechanisms:
        raise UsageError(f"{args.outcome!r} is not an endogenous variable of the model")
    train, val = split(data, float(args.ratio), int(args.seed))
    fcfg = cf.FvaeConfig(
        hidden_layers=int(args.hidden_layers),
        flows=int(args.flows),
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        epochs=int(args.fvae_epochs),
        patience=int(args.patience),
        seed=int(args.seed),
    )
    vaes, _ = cf.fit_outcome_vaes(model, train, val, args.outcome, fcfg)
    for c, v in vaes.items():
        _write(out, f"fvae_{c}.cct", v.to_bytes())
    eps = cf.abduct_all(vaes, model, data)
    cf.save_eps(out / "eps.cct", eps)
    if args.intervention == "none":
        spec = None
    else:
        spec = cf.InterventionSpec.parse(args.intervention, model)
    report = cf.counterfactual_report(model, spec, eps, data, args.outcome)
    _write(out, "counterfactual_rows.csv", report.rows_csv())
    _write(out, "transition_matrix.csv", report.matrix_csv())
    summary = report.summary()
    summary["intervention"] = args.intervention
    _write(out, "summary.json", _dump_json(summary))
    if int(args.latent_draws) > 0:
        v = vaes[args.outcome]
        _write(out, "latent_samples.csv", cf.latent_samples_csv(v, data, int(args.latent_draws), int(args.seed)))
    print(f"{args.intervention}: {summary['decreased']:.4f} decreased, {summary['increased']:.4f} increased")


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "fit": cmd_fit,
    "search": cmd_search,
    "counterfactual": cmd_counterfactual,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalchoice", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--data", help="CSV dataset")
    common.add_argument("--specs", help="JSON variable specifications")
    common.add_argument("--dag", help="DAG text file (one 'A -> B' per line)")
    common.add_argument("--knowledge", help="background knowledge file")
    common.add_argument("--outcome", help="outcome variable")
    common.add_argument("--seed", type=int, help="master seed (required)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    fitopts = argparse.ArgumentParser(add_help=False)
    fitopts.add_argument("--residual-layers", type=int)
    fitopts.add_argument("--learning-rate", type=float)
    fitopts.add_argument("--batch-size", type=int)
    fitopts.add_argument("--threshold-init", type=float)
    fitopts.add_argument("--hidden-layers", type=int)
    fitopts.add_argument("--epochs", type=int)
    fitopts.add_argument("--patience", type=int)
    fitopts.add_argument("--ratio", type=float, help="training share of the split")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    p.add_argument("--generator", help="generator config JSON (default: built-in collider study)")
    p.add_argument("--n", type=int)
    p = sub.add_parser("discover", parents=[common], help="greedy BIC structure search")
    p.add_argument("--max-parents", type=int)
    p.add_argument("--no-reversals", action="store_true", default=None)
    p = sub.add_parser("fit", parents=[common, fitopts], help="fit the structural model on a DAG")
    p.add_argument("--sweep", help="continuous variable for a substitution curve")
    p.add_argument("--grid", help="LO:HI:N grid for --sweep")
    p = sub.add_parser("search", parents=[common, fitopts], help="random hyperparameter search")
    p.add_argument("--trials", type=int)
    p = sub.add_parser("counterfactual", parents=[common, fitopts], help="abduct, intervene, predict")
    p.add_argument("--model", help="fitted model file (otherwise fit with --dag)")
    p.add_argument("--intervention", help="'VAR=VALUE' hard intervention, or 'none'")
    p.add_argument("--fvae-epochs", type=int)
    p.add_argument("--flows", type=int)
    p.add_argument("--latent-draws", type=int, help="gamma_K samples per row to export")
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from ``--config`` and then from the defaults."""
    file_values = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        file_values = {k.replace("-", "_"): v for k, v in raw.items()}
    for key, value in file_values.items():
        if getattr(args, key, None) is None and key not in ("command", "config"):
            setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    if args.seed is None:
        raise UsageError("--seed is required")
    if args.out is None:
        raise UsageError("--out is required")
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except (S.DivergenceError, ad.DomainError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (
        UsageError,
        IngestionError,
        KnowledgeError,
        CycleError,
        QueryError,
        cf.InterventionError,
        S.EvaluationError,
        OSError,
        KeyError,
        ValueError,
        TypeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
