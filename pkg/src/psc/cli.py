"""Batch command-line front end.

A run directory holds everything a pipeline produces::

    config.json              resolved configuration
    run-metadata.json        seed, config/dataset hashes, timestamps
    chains/k=<k>.jsonl       posterior draws, one JSON record per line
    chains/k=<k>.diag.json   acceptance rates and log-joint trace
    metrics.csv              per-k test metrics (select-k)
    roc/k=<k>.csv            ROC points
    predictions/k=<k>.csv    posterior-predictive probabilities
    estimate/subspace.csv    Bayes estimate of the subspace
    estimate/importance.csv  feature scores
    baselines/{knn,gmm}.csv  KNN and mixture-discriminant sweeps
    report.txt               plain-text summary

Every command except ``synth`` and ``fit`` reads ``config.json`` from the
run directory, so ``--config`` is only needed for those two.
"""
import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import KnnConfig, gmm_discriminant_fit_predict, knn_sweep
from .data import (
    STANDARDIZE_MODES,
    CsvSchema,
    SplitSpec,
    SyntheticSpec,
    file_hash,
    generate_synthetic,
    load_csv,
    load_wbc,
    split,
    standardize,
    wbc_path,
)
from .estimator import (
    FeatureImportance,
    estimate_from_chain,
    feature_importance,
    format_table,
    write_importance_csv,
    write_subspace_csv,
)
from .evaluate import (
    EvalReport,
    evaluate,
    format_report,
    posterior_predict,
    read_metrics_csv,
    select_k,
    write_metrics_csv,
    write_predictions_csv,
    write_roc_csv,
)
from .gibbs import SamplerConfig, load_chain, run_chain, save_chain, state_to_record
from .model import Standardization
from .priors import PriorConfig

log = logging.getLogger("psc")

DEFAULTS = {
    "dataset": {"source": "wbc", "path": None, "schema": {}, "standardize": "center"},
    "split": {"test_fraction": 1 / 3, "seed": 0, "stratified": True},
    "prior": {},
    "sampler": {},
    "k_grid": [3],
    "k_max": 25,
    "seed": 0,
    "knn_grid": list(range(1, 26)),
    "gmm_grid": [1, 2, 3, 4, 5],
    "synthetic": None,
}


class ConfigError(ValueError):
    pass


def _locate(text, key):
    """1-based line of the first occurrence of a JSON key, or None."""
    needle = json.dumps(key) + ":"
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line.replace('": ', '":'):
            return lineno
    return None


def _where(path, text, key):
    line = _locate(text, key) if text else None
    return f"{path}:{line}" if line else str(path)


def load_config(path):
    """Read a JSON run configuration and merge it over the defaults.

    Errors name the file and, where possible, the offending line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = resolve_config(raw, path, text)
    ds = cfg["dataset"]
    if ds.get("path"):
        p = Path(ds["path"])
        ds["path"] = str(p if p.is_absolute() else (path.parent / p).resolve())
    return cfg


def resolve_config(raw, path="<config>", text=None):
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{_where(path, text, key)}: unknown key {key!r}")
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(cfg[key], dict) and isinstance(value, dict):
            extra = set(value) - set(cfg[key]) if key in ("dataset", "split") else set()
            if extra:
                bad = sorted(extra)[0]
                raise ConfigError(f"{_where(path, text, bad)}: unknown {key} setting {bad!r}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    checks = [
        ("prior", lambda v: PriorConfig.from_dict(v)),
        ("sampler", lambda v: SamplerConfig.from_dict(v)),
        ("split", lambda v: SplitSpec(**v)),
    ]
    for key, build in checks:
        try:
            build(cfg[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(path, text, key)}: invalid {key} settings: {exc}") from None
    ds = cfg["dataset"]
    if ds["source"] not in ("wbc", "csv"):
        raise ConfigError(f"{_where(path, text, 'source')}: dataset source must be 'wbc' or 'csv'")
    if ds["source"] == "csv" and not ds.get("path"):
        raise ConfigError(f"{_where(path, text, 'dataset')}: a csv dataset needs a path")
    if ds["standardize"] not in STANDARDIZE_MODES:
        raise ConfigError(f"{_where(path, text, 'standardize')}: standardize must be one of {STANDARDIZE_MODES}")
    grid = cfg["k_grid"]
    if not isinstance(grid, list) or not grid or not all(isinstance(k, int) and k >= 1 for k in grid):
        raise ConfigError(f"{_where(path, text, 'k_grid')}: k_grid must be a nonempty list of positive integers")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_dataset(cfg):
    ds = cfg["dataset"]
    if ds["source"] == "wbc":
        data = load_wbc(ds.get("path"))
        source = ds.get("path") or wbc_path()
    else:
        data = load_csv(ds["path"], CsvSchema.from_dict(ds.get("schema") or {}))
        source = ds["path"]
    return data, file_hash(source)


def prepare(cfg):
    """Load, split and standardize exactly as configured: (train, test, transform, dataset hash)."""
    data, digest = load_dataset(cfg)
    bad = [k for k in cfg["k_grid"] if k > data.m]
    if bad:
        raise ConfigError(f"k_grid values {bad} exceed the feature dimension m={data.m}")
    train, test = split(data, SplitSpec(**cfg["split"]))
    train, transform = standardize(train, mode=cfg["dataset"]["standardize"])
    test, _ = standardize(test, transform)
    return train, test, transform, digest


def _chain_path(run, k):
    return run / "chains" / f"k={k}.jsonl"


def _fit_one(args):
    train, k, prior, sampler, seed = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    chain = run_chain(train, k, PriorConfig.from_dict(prior), SamplerConfig.from_dict(sampler), rng=rng)
    return k, chain


def _read_run_config(run, override=None):
    path = Path(override) if override else run / "config.json"
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run `psc fit` first or pass --config")
    return load_config(path)


def _load_run_chain(run, k, cfg):
    path = _chain_path(run, k)
    if not path.exists():
        raise FileNotFoundError(f"missing chain file {path}; run `psc fit` for k={k}")
    diag_path = path.with_suffix(".diag.json")
    std, names = None, ()
    if diag_path.exists():
        diag = json.loads(diag_path.read_text())
        std = Standardization.from_dict(diag["standardization"]) if diag.get("standardization") else None
        names = tuple(diag.get("feature_names", ()))
    return load_chain(path, std, names)


def _fitted_ks(run):
    ks = sorted(int(p.name[2:-6]) for p in (run / "chains").glob("k=*.jsonl"))
    if not ks:
        raise FileNotFoundError(f"no chain files under {run / 'chains'}; run `psc fit` first")
    return ks


def _chosen_k(run, args_k):
    if args_k is not None:
        return args_k
    sel = run / "selected_k.json"
    if sel.exists():
        return json.loads(sel.read_text())["k"]
    ks = _fitted_ks(run)
    if len(ks) == 1:
        return ks[0]
    raise FileNotFoundError(f"several chains in {run} and no {sel}; run `psc select-k` or pass --k")


def cmd_synth(args):
    cfg = load_config(args.config) if args.config else resolve_config({})
    spec_d = dict(cfg.get("synthetic") or {})
    if not spec_d:
        raise ConfigError("synth needs a 'synthetic' section in the config")
    if args.seed is not None:
        spec_d["seed"] = args.seed
    if args.k is not None:
        spec_d["k"] = args.k
    spec = SyntheticSpec.from_dict(spec_d)
    data, truth = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "data.csv", "w") as fh:
        fh.write(",".join([f"x{j + 1}" for j in range(data.m)] + ["label"]) + "\n")
        for x, y in zip(data.X, data.y):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")
    _write_json(out / "truth.json", state_to_record(truth, 0, 0.0))
    run_cfg = copy.deepcopy(cfg)
    run_cfg["dataset"] = {"source": "csv", "path": "data.csv", "schema": {"label_column": "label"},
                          "standardize": cfg["dataset"]["standardize"]}
    run_cfg["synthetic"] = None
    _write_json(out / "config.json", run_cfg)
    print(f"wrote {data.n} observations (m={data.m}, c={data.c}) to {out / 'data.csv'}")


def cmd_fit(args):
    run = Path(args.out)
    cfg = _read_run_config(run, args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.k is not None:
        cfg["k_grid"] = [args.k]
    train, test, transform, digest = prepare(cfg)
    started = datetime.now(timezone.utc).isoformat()
    stored = copy.deepcopy(cfg)
    if stored["dataset"].get("path"):
        stored["dataset"]["path"] = os.path.relpath(stored["dataset"]["path"], run.resolve())
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", stored)
    jobs = [(train, k, cfg["prior"], cfg["sampler"], cfg["seed"]) for k in cfg["k_grid"]]
    workers = min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fit_one, jobs))
    else:
        results = [_fit_one(j) for j in jobs]
    (run / "chains").mkdir(exist_ok=True)
    for k, chain in results:
        save_chain(chain, _chain_path(run, k))
        _write_json(_chain_path(run, k).with_suffix(".diag.json"), {
            "k": k,
            "acceptance": chain.acceptance,
            "final_step": float(chain.step_trace[-1]),
            "log_joint": [float(v) for v in chain.log_joint],
            "standardization": transform.to_dict(),
            "feature_names": list(train.feature_names),
        })
        print(f"k={k}: {len(chain)} draws, frame acceptance {chain.acceptance['sampling']:.2f}")
    _write_json(run / "run-metadata.json", {
        "version": __version__,
        "seed": cfg["seed"],
        "config_hash": config_hash(stored),
        "dataset_hash": digest,
        "n_train": train.n,
        "n_test": test.n,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    })


def _eval_chain(run, k, cfg, test):
    chain = _load_run_chain(run, k, cfg)
    pred = posterior_predict(chain, test)
    return pred, evaluate(pred, test.y, k=k)


def cmd_select_k(args):
    run = Path(args.out)
    cfg = _read_run_config(run, args.config)
    _, test, _, _ = prepare(cfg)
    ks = [args.k] if args.k is not None else _fitted_ks(run)
    reports = []
    for k in ks:
        _, rep = _eval_chain(run, k, cfg, test)
        reports.append(rep)
        if rep.roc_points is not None:
            (run / "roc").mkdir(exist_ok=True)
            write_roc_csv(rep, run / "roc" / f"k={k}.csv")
    write_metrics_csv(reports, run / "metrics.csv")
    best = select_k(reports, cfg["k_max"])
    _write_json(run / "selected_k.json", {"k": best})
    for r in reports:
        auc = "" if r.auc is None else f"  auc {r.auc:.4f}"
        print(f"k={r.k}: error {r.error_rate:.4f}{auc}")
    print(f"selected k={best}")


def cmd_predict(args):
    run = Path(args.out)
    cfg = _read_run_config(run, args.config)
    k = _chosen_k(run, args.k)
    chain = _load_run_chain(run, k, cfg)
    if args.input:
        data = load_csv(args.input, CsvSchema.from_dict(cfg["dataset"].get("schema") or {}))
        pred = posterior_predict(chain, data)
        y = data.y
    else:
        _, test, _, _ = prepare(cfg)
        pred = posterior_predict(chain, test)
        y = test.y
    (run / "predictions").mkdir(exist_ok=True)
    path = run / "predictions" / f"k={k}.csv"
    write_predictions_csv(pred, path, y)
    print(f"wrote {len(pred.labels)} predictions to {path}")
    print(format_report(evaluate(pred, y, k=k)), end="")


def cmd_estimate(args):
    run = Path(args.out)
    cfg = _read_run_config(run, args.config)
    k = _chosen_k(run, args.k)
    chain = _load_run_chain(run, k, cfg)
    est = estimate_from_chain(chain)
    out = run / "estimate"
    out.mkdir(exist_ok=True)
    write_subspace_csv(est, out / "subspace.csv")
    imp = feature_importance(est, chain.feature_names or None)
    write_importance_csv(imp, out / "importance.csv")
    _write_json(out / "summary.json", {"k_fit": k, "k_hat": est.k_hat, "unique": est.unique,
                                       "objective": [float(v) for v in est.objective]})
    print(f"k_hat={est.k_hat} (chain k={k}){'' if est.unique else ' [not unique]'}")
    print(format_table(imp), end="")


def cmd_baseline(args):
    run = Path(args.out)
    cfg = _read_run_config(run, args.config)
    train, test, _, _ = prepare(cfg)
    knn_k, knn_err, knn_all = knn_sweep(train, test, KnnConfig(tuple(cfg["knn_grid"])))
    gmm_g, gmm_err, gmm_all = gmm_discriminant_fit_predict(train, test, cfg["gmm_grid"], cfg["seed"])
    out = run / "baselines"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([EvalReport(e, None, k=g) for g, e in knn_all.items()], out / "knn.csv")
    write_metrics_csv([EvalReport(e, None, k=g) for g, e in gmm_all.items()], out / "gmm.csv")
    _write_json(out / "summary.json", {"knn": {"k": knn_k, "error_rate": knn_err},
                                       "gmm": {"components": gmm_g, "error_rate": gmm_err}})
    print(f"KNN: best k={knn_k}, error {knn_err:.4f}")
    print(f"mixture discriminant: best components={gmm_g}, error {gmm_err:.4f}")


def cmd_report(args):
    run = Path(args.out)
    _read_run_config(run, args.config)
    lines = [f"run directory: {run}"]
    meta = run / "run-metadata.json"
    if meta.exists():
        m = json.loads(meta.read_text())
        lines.append(f"seed {m['seed']}, n_train {m['n_train']}, n_test {m['n_test']}")
    metrics = run / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"missing {metrics}; run `psc select-k` first")
    lines += ["", "test metrics by k:"]
    for r in sorted(read_metrics_csv(metrics), key=lambda r: r.k):
        auc = "" if r.auc is None else f"  AUC {r.auc:.4f}  AUC-error {r.auc_minus_error:.4f}"
        lines.append(f"  k={r.k:<3d} error {r.error_rate:.4f}{auc}")
    k = _chosen_k(run, args.k)
    lines.append(f"selected k: {k}")
    imp_path = run / "estimate" / "importance.csv"
    if not imp_path.exists():
        raise FileNotFoundError(f"missing {imp_path}; run `psc estimate` first")
    imp = _read_importance(imp_path)
    summary = json.loads((run / "estimate" / "summary.json").read_text())
    lines += ["", f"principal directions (k_hat={summary['k_hat']}):", format_table(imp).rstrip("\n")]
    base = run / "baselines" / "summary.json"
    if base.exists():
        b = json.loads(base.read_text())
        lines += ["", "baselines:",
                  f"  KNN (k={b['knn']['k']}): error {b['knn']['error_rate']:.4f}",
                  f"  mixture discriminant ({b['gmm']['components']} components): "
                  f"error {b['gmm']['error_rate']:.4f}"]
    text = "\n".join(lines) + "\n"
    (run / "report.txt").write_text(text)
    print(text, end="")


def _read_importance(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    names = tuple(r[0] for r in body)
    loadings = np.array([[float(v) for v in r[1:-2]] for r in body]).reshape(len(body), -1)
    return FeatureImportance(names, np.array([float(r[-1]) for r in body]),
                             np.array([float(r[-2]) for r in body]), loadings)


COMMANDS = {
    "fit": (cmd_fit, "run one chain per k in the grid"),
    "select-k": (cmd_select_k, "evaluate chains on the test split and pick k"),
    "predict": (cmd_predict, "posterior-predictive class probabilities"),
    "estimate": (cmd_estimate, "Bayes estimate of the subspace and feature scores"),
    "baseline": (cmd_baseline, "KNN and mixture-discriminant sweeps"),
    "synth": (cmd_synth, "generate a synthetic dataset and run config"),
    "report": (cmd_report, "write report.txt from earlier outputs"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="psc", description="Principal subspace classifier")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--k", type=int, help="override the subspace dimension")
        if name == "predict":
            p.add_argument("--input", help="CSV to classify (same schema as the training data)")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"psc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
