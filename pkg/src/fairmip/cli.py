"""Command-line entry point: ``fairmip <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import forest as forest_mod
from . import mip_model, theory_lab
from .dataset import (MissingnessSpec, TabularDataset, inject_missingness,
                      load_csv, missingness_report, read_raw_csv, scale_unit_interval)
from .errors import DataError, InvariantError, SchemaError
from .metrics import FairnessMetric

logger = logging.getLogger("fairmip")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

_NUM = {"type": "number"}
_STR = {"type": "string"}
RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": _STR, "label_col": _STR, "group_col": _STR, "na_token": _STR,
                "delimiter": _STR,
                "drop_cols": {"type": "array", "items": _STR},
                "encodings": {"type": "object",
                              "additionalProperties": {"type": "object",
                                                       "additionalProperties": _NUM}},
            },
        },
        "missingness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "entries": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["feature", "p0", "p1"],
                    "properties": {"feature": _STR,
                                   "p0": {"type": "number", "minimum": 0, "maximum": 1},
                                   "p1": {"type": "number", "minimum": 0, "maximum": 1}}}},
                "seed": {"type": "integer"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_tree": {"type": "integer", "minimum": 1},
                "t_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 4},
                "lambda": {"type": ["number", "string"]},
                "metric": {"type": "string"},
                "depth": {"type": "integer", "minimum": 1},
                "node_limit": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"big_m": {"type": ["number", "null"]},
                           "eps_tol": {"type": "number", "exclusiveMinimum": 0}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambdas": {"type": "array", "items": _NUM, "minItems": 1},
                "repeats": {"type": "integer", "minimum": 1},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": _STR, "model": _STR, "log": _STR, "report": _STR,
                           "predictions": _STR, "tradeoff": _STR},
        },
    },
}

EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "groups", "metrics", "tree_objectives", "n", "config_sha256"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "n": {"type": "integer", "minimum": 0},
        "config_sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "groups": {"type": "object", "required": ["0", "1"]},
        "metrics": {"type": "object", "required": [m.value for m in FairnessMetric]},
        "tree_objectives": {"type": "array", "items": _NUM},
    },
}

TRAIN_LOG_SCHEMA = {
    "type": "object",
    "required": ["trees", "total_solver_time", "budget", "config"],
    "properties": {
        "trees": {"type": "array", "items": {
            "type": "object",
            "required": ["tree", "objective", "wall_time", "proven_optimal", "nodes"],
            "properties": {"tree": {"type": "integer"}, "objective": _NUM,
                           "wall_time": _NUM, "proven_optimal": {"type": "boolean"},
                           "nodes": {"type": "integer"}}}},
        "total_solver_time": _NUM,
        "budget": {"type": ["number", "null"]},
    },
}

MISSINGNESS_REPORT_SCHEMA = {
    "type": "object",
    "required": ["seed", "spec", "rows"],
    "properties": {
        "rows": {"type": "array", "items": {
            "type": "object", "required": ["feature", "group", "n", "missing", "rate", "se"]}},
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# config handling

def load_run_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
    validate_run_config(doc)
    return doc


def validate_run_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"invalid run config at {where}: {exc.message}") from exc


def _pick(cli_value, section: dict, key: str, default=None):
    if cli_value is not None:
        return cli_value
    return section.get(key, default)


def _parse_lambda(raw) -> float:
    try:
        lam = float(raw)
    except (TypeError, ValueError):
        raise UsageError(f"lambda must be a number, got {raw!r}") from None
    if not lam >= 0 or math.isinf(lam):
        raise UsageError(f"lambda must be a finite nonnegative number, got {raw!r}")
    return lam


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.get("output", {}).get("dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_file(args, cfg, key: str, default: str) -> Path:
    name = cfg.get("output", {}).get(key, default)
    p = Path(name)
    return p if p.is_absolute() else _out_dir(args, cfg) / p


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _na(args, cfg) -> str:
    return args.na_token if args.na_token is not None else cfg.get("data", {}).get("na_token", "NA")


def _load_data(args, cfg, path_attr="data") -> TabularDataset:
    data = cfg.get("data", {})
    path = getattr(args, path_attr, None) or data.get("path")
    if path is None:
        raise UsageError("no input data: pass --data or set data.path in the config")
    label = _pick(getattr(args, "label_col", None), data, "label_col", "label")
    group = _pick(getattr(args, "group_col", None), data, "group_col", "group")
    return load_csv(path, label, group, na_token=_na(args, cfg),
                    delimiter=data.get("delimiter", ","), encodings=data.get("encodings"),
                    drop_cols=data.get("drop_cols", ()))


def _missingness(cfg) -> tuple[MissingnessSpec | None, int | None]:
    sec = cfg.get("missingness")
    if not sec or not sec.get("entries"):
        return None, None
    return MissingnessSpec.from_json(sec["entries"]), sec.get("seed")


def _train_config(args, cfg) -> forest_mod.TrainConfig:
    sec = cfg.get("train", {})
    lam = _parse_lambda(_pick(args.lam, sec, "lambda", 0.0))
    t_limit = _pick(args.t_limit, sec, "t_limit", 60.0)
    t_limit = math.inf if t_limit is None else float(t_limit)
    try:
        return forest_mod.TrainConfig(
            n_tree=int(_pick(args.n_tree, sec, "n_tree", 30)),
            t_limit=t_limit,
            batch_size=int(_pick(args.batch_size, sec, "batch_size", 200)),
            lam=lam,
            metric=FairnessMetric.parse(_pick(args.metric, sec, "metric", "fnr")),
            depth=int(_pick(args.depth, sec, "depth", 3)),
            seed=_seed(args, cfg),
            node_limit=_pick(args.node_limit, sec, "node_limit"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _prepared_training_data(args, cfg) -> TabularDataset:
    ds = _load_data(args, cfg)
    spec, mseed = _missingness(cfg)
    if spec is not None:
        ds = inject_missingness(ds, spec, _seed(args, cfg) if mseed is None else mseed)
    return scale_unit_interval(ds)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands

def cmd_inject(args, cfg) -> int:
    if args.spec is not None:
        try:
            spec = MissingnessSpec.from_json(json.loads(Path(args.spec).read_text()))
        except OSError as exc:
            raise DataError(f"cannot read spec {args.spec}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"spec {args.spec} is not valid JSON: {exc}") from exc
        mseed = None
    else:
        spec, mseed = _missingness(cfg)
        if spec is None:
            raise UsageError("inject needs --spec or missingness.entries in the config")
    seed = _seed(args, cfg) if mseed is None or args.seed is not None else mseed
    ds = _load_data(args, cfg)
    out = inject_missingness(ds, spec, seed)
    delim = cfg.get("data", {}).get("delimiter", ",")
    header, body = read_raw_csv(args.data or cfg["data"]["path"], delim)
    na = _na(args, cfg)
    new = out.mask & ~ds.mask
    cols = [header.index(f) for f in ds.feature_names]
    body = [list(r) for r in body]
    for k, raw_row in enumerate(ds.row_index):
        for j in np.flatnonzero(new[k]):
            body[raw_row][cols[j]] = na
    stem = Path(args.data or cfg["data"]["path"]).stem
    csv_path = _out_dir(args, cfg) / f"{stem}_injected.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    report = {"seed": seed, "spec": spec.to_json(), "rows": missingness_report(out)}
    jsonschema.validate(report, MISSINGNESS_REPORT_SCHEMA)
    _write_json(_out_dir(args, cfg) / f"{stem}_missingness.json", report)
    logger.info("wrote %s", csv_path)
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    tcfg = _train_config(args, cfg)
    ds = _prepared_training_data(args, cfg)
    log: list = []
    model = forest_mod.train(ds, tcfg, log=log)
    forest_mod.save(model, _out_file(args, cfg, "model", "model.json"))
    total = math.fsum(r["wall_time"] for r in log)
    budget = None if math.isinf(tcfg.t_limit) else tcfg.n_tree * tcfg.t_limit
    doc = {"config": tcfg.to_json(), "trees": log, "total_solver_time": total, "budget": budget}
    jsonschema.validate(doc, TRAIN_LOG_SCHEMA)
    _write_json(_out_file(args, cfg, "log", "train_log.json"), doc)
    logger.info("trained %d trees in %.1fs of solver time (budget %s)", tcfg.n_tree, total, budget)
    return EXIT_OK


def _model(args) -> forest_mod.ForestModel:
    if not args.model:
        raise UsageError("--model is required")
    return forest_mod.load(args.model)


def cmd_predict(args, cfg) -> int:
    model = _model(args)
    ds = _load_data(args, cfg)
    preds = forest_mod.predict_majority(model, ds)
    path = _out_file(args, cfg, "predictions", "predictions.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction"])
        for r, p in zip(ds.row_index.tolist(), preds.tolist()):
            w.writerow([r, p])
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    model = _model(args)
    ds = _load_data(args, cfg)
    rep = forest_mod.evaluate(model, ds).to_json()
    rep["config_sha256"] = config_hash({"model_config": model.config.to_json(), "run": cfg})
    jsonschema.validate(rep, EVAL_REPORT_SCHEMA)
    _write_json(_out_file(args, cfg, "report", "report.json"), rep)
    if not args.quiet:
        print(json.dumps({"accuracy": rep["accuracy"], "metrics": rep["metrics"]}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    tcfg = _train_config(args, cfg)
    sec = cfg.get("sweep", {})
    if args.lambdas is not None:
        lambdas = [_parse_lambda(x) for x in args.lambdas.split(",") if x.strip()]
    else:
        lambdas = sec.get("lambdas")
    if not lambdas:
        raise UsageError("sweep needs a nonempty lambda list (--lambdas or sweep.lambdas)")
    ds = _load_data(args, cfg)
    spec, mseed = _missingness(cfg)
    if spec is not None:
        ds = inject_missingness(ds, spec, _seed(args, cfg) if mseed is None else mseed)
    rows = forest_mod.sweep_lambda(ds, tcfg, lambdas,
                                   repeats=int(_pick(args.repeats, sec, "repeats", 10)),
                                   test_fraction=float(sec.get("test_fraction", 0.3)),
                                   seed=_seed(args, cfg))
    forest_mod.write_tradeoff_csv(rows, _out_file(args, cfg, "tradeoff", "tradeoff.csv"))
    if args.points:
        _write_json(Path(args.points), [{"lambda": r["lambda"], "accuracy": a, "metric_value": m}
                                        for r in rows for a, m in r["per_split"]])
    return EXIT_OK


def cmd_verify_theory(args, cfg) -> int:
    checks = theory_lab.run_checks(seed=_seed(args, cfg), inject_fault=args.inject_fault)
    doc = {"checks": checks, "passed": all(c["passed"] for c in checks)}
    if not args.quiet:
        print(json.dumps(doc, indent=2, sort_keys=True))
    if args.out:
        _write_json(_out_dir(args, cfg) / "theory.json", doc)
    if not doc["passed"]:
        raise InvariantError("theory checks failed: " +
                             ", ".join(c["name"] for c in checks if not c["passed"]))
    return EXIT_OK


def cmd_inspect(args, cfg) -> int:
    doc: dict = {}
    if args.model:
        model = _model(args)
        doc["model"] = {"n_tree": len(model.trees), "depth": model.trees[0].depth,
                        "feature_names": list(model.feature_names),
                        "config": model.config.to_json(),
                        "trees": [t.to_json() for t in model.trees]}
    if args.data or cfg.get("data", {}).get("path"):
        ds = _load_data(args, cfg)
        doc["data"] = {"n": ds.n, "d": ds.d, "feature_names": list(ds.feature_names),
                       "diagnostics": dict(ds.diagnostics),
                       "missingness": missingness_report(ds)}
        if args.export_lp:
            tcfg = _train_config(args, cfg)
            msec = cfg.get("model", {})
            mcfg = mip_model.ModelConfig(tcfg.depth, tcfg.lam, tcfg.metric,
                                         msec.get("big_m"), msec.get("eps_tol", 1e-6))
            prog = mip_model.build_program(scale_unit_interval(ds), mcfg)
            mip_model.export_lp(prog, args.export_lp)
            doc["program"] = dict(mip_model.variable_counts(prog))
            doc["program"]["constraints"] = len(prog.constraints)
    elif args.export_lp:
        raise UsageError("--export-lp needs --data")
    if not doc:
        raise UsageError("inspect needs --model and/or --data")
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="run config JSON")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--na-token", dest="na_token", default=d, help="missing-cell marker")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _data_flags(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--label-col", dest="label_col")
    p.add_argument("--group-col", dest="group_col")


def _train_flags(p):
    p.add_argument("--n-tree", dest="n_tree", type=int)
    p.add_argument("--t-limit", dest="t_limit", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--metric", choices=[m.value for m in FairnessMetric])
    p.add_argument("--depth", type=int)
    p.add_argument("--node-limit", dest="node_limit", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairmip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fairmip {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("inject", cmd_inject, "erase cells with per-group probabilities")
    _data_flags(p)
    p.add_argument("--spec", help="missingness spec JSON")
    p = add("train", cmd_train, "train a forest")
    _data_flags(p)
    _train_flags(p)
    p = add("predict", cmd_predict, "write majority-vote predictions")
    _data_flags(p)
    p.add_argument("--model")
    p = add("evaluate", cmd_evaluate, "accuracy and fairness report")
    _data_flags(p)
    p.add_argument("--model")
    p = add("sweep", cmd_sweep, "fairness-accuracy trade-off over lambda")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--lambdas", help="comma-separated lambda values")
    p.add_argument("--repeats", type=int)
    p.add_argument("--points", help="also write per-split points as JSON")
    p = add("verify-theory", cmd_verify_theory, "run the constructive theory checks")
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                   help=argparse.SUPPRESS)
    p = add("inspect", cmd_inspect, "describe a model or dataset; optionally export the MIP")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--model")
    p.add_argument("--export-lp", dest="export_lp", help="write the program in LP format")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("missing command (try --help)")
        cfg = load_run_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
