"""Command-line entry points: ``gaminet train | predict | explain | benchmark``.

Exit codes: 0 success, 1 invalid input or configuration, 2 training
divergence or a failed benchmark repetition.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import model as gm
from .data import (ConfigurationError, IngestionError, Schema, TASKS, fit_transform, load_csv, load_for_meta,
                   split, transform)
from .interpret import global_explain, importance_ratios, local_explain, write_json
from .nn_core import NumericError, ShapeError
from .seeding import substream
from .svg import render_svg, write_panels
from .synth import DISTRIBUTIONS, SynthConfig, run_benchmark, write_reports
from .trainer import TrainConfig, TrainingDivergence, fit

log = logging.getLogger("gaminet")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
THREADS_ENV = "GAMINET_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation failures: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Everything a training run needs besides the data and schema."""

    train: TrainConfig = field(default_factory=TrainConfig)
    task: str = "regression"
    val_fraction: float = 0.2
    test_fraction: float = 0.0

    RUN_KEYS = ("task", "val_fraction", "test_fraction")

    @classmethod
    def from_flat(cls, d: dict) -> "RunConfig":
        d = dict(d)
        run = {k: d.pop(k) for k in cls.RUN_KEYS if k in d}
        out = cls(TrainConfig.from_dict(d), **run)
        if out.task not in TASKS:
            raise ConfigurationError(f"task must be one of {', '.join(TASKS)}")
        return out

    def to_dict(self) -> dict:
        d = {"task": self.task, "val_fraction": self.val_fraction, "test_fraction": self.test_fraction}
        d.update(self.train.to_dict())
        return d


def _read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def _parse_override(item: str):
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"--set expects key=value, got {item!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def _load_schema(path) -> Schema:
    doc = _read_toml(path)
    roles = doc.get("columns", doc)
    if not isinstance(roles, dict) or not all(isinstance(v, str) for v in roles.values()):
        raise ConfigurationError(f"{path}: schema must map column names to roles")
    return Schema(dict(roles))


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _threads(n: Optional[int]):
    if n is None:
        n = int(os.environ.get(THREADS_ENV, "1"))
    if n < 1:
        raise ConfigurationError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- train ---------------------------------------------------------------------

ARTIFACTS = {"model": "model.json", "trace": "trace.csv", "report": "training_report.json",
             "importance_csv": "importance.csv", "importance_json": "importance.json",
             "manifest": "manifest.json"}


def _train_inputs(args):
    """(data path, schema, run config) from flags or from a manifest."""
    if args.manifest:
        man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        data_path = Path(args.data or man["data"]["path"])
        if _digest(data_path) != man["data"]["sha256"]:
            raise ConfigurationError(f"{data_path}: contents differ from the manifest digest")
        return data_path, Schema(dict(man["schema"]["columns"])), RunConfig.from_flat(man["config"])
    if not args.data or not args.schema:
        raise ConfigurationError("train needs --data and --schema (or --manifest)")
    flat = _read_toml(args.config) if args.config else {}
    for item in args.set or []:
        k, v = _parse_override(item)
        flat[k] = v
    if args.seed is not None:
        flat["seed"] = args.seed
    return Path(args.data), _load_schema(args.schema), RunConfig.from_flat(flat)


def cmd_train(args) -> int:
    data_path, schema, run = _train_inputs(args)
    out = Path(args.out)
    table = load_csv(data_path, schema)
    data = fit_transform(table, schema, run.task)
    seed = run.train.seed
    train, val, test = split(data, run.test_fraction, run.val_fraction, rng=substream(seed, "split"))
    run.train.validate(train.n)
    out.mkdir(parents=True, exist_ok=True)
    with _threads(args.threads):
        result = fit(train, val, run.train)
    m = result.model
    gm.save(m, out / ARTIFACTS["model"])
    result.trace.write_csv(out / ARTIFACTS["trace"])
    report = result.report()
    report["loss"] = {name: gm.loss(m.link, part.response, gm.predict(m, part.features)[0])
                      for name, part in (("train", train), ("validation", val), ("test", test)) if part.n}
    (out / ARTIFACTS["report"]).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    table_ir = importance_ratios(m, train)
    table_ir.write_csv(out / ARTIFACTS["importance_csv"])
    write_json(table_ir, out / ARTIFACTS["importance_json"])
    manifest = {
        "version": __version__,
        "seed": seed,
        "config": run.to_dict(),
        "data": {"path": str(data_path.resolve()), "sha256": _digest(data_path), "rows": data.n},
        "schema": {"columns": dict(schema.roles)},
        "artifacts": dict(ARTIFACTS),
    }
    (out / ARTIFACTS["manifest"]).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"kept {len(m.main_effects)} main effects and {len(m.interactions)} interactions; "
          f"wrote {out / ARTIFACTS['model']}")
    return EXIT_OK


# -- predict -------------------------------------------------------------------

def _encoded(model, data_path):
    table = load_for_meta(data_path, model.meta)
    return transform(table, model.meta, with_response=False).features


def cmd_predict(args) -> int:
    model = gm.load(args.model)
    x = _encoded(model, args.data)
    eta, _ = gm.predict(model, x)
    mean = gm.invert_link(model.link, eta)
    _write_csv(args.out, ["row", "eta", "mean"], [[i, repr(float(e)), repr(float(v))]
                                                   for i, (e, v) in enumerate(zip(eta, mean))])
    return EXIT_OK


# -- explain -------------------------------------------------------------------

def _emit(doc_obj, out_dir: Optional[Path], name: str):
    if out_dir is None:
        json.dump(doc_obj.to_dict() if hasattr(doc_obj, "to_dict") else [g.to_dict() for g in doc_obj],
                  sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        write_json(doc_obj, out_dir / name)


def cmd_explain(args) -> int:
    model = gm.load(args.model)
    x = _encoded(model, args.data)
    out_dir = Path(args.out) if args.out else (Path(args.svg_dir) if args.svg_dir else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    svg_dir = Path(args.svg_dir) if args.svg_dir else None
    if svg_dir is not None:
        svg_dir.mkdir(parents=True, exist_ok=True)
    if args.row is not None:
        if not 0 <= args.row < x.shape[0]:
            raise ConfigurationError(f"row {args.row} out of range; data has {x.shape[0]} rows")
        expl = local_explain(model, x[args.row])
        _emit(expl, out_dir, f"local_row{args.row}.json")
        if svg_dir is not None:
            render_svg(expl, svg_dir / f"local_row{args.row}.svg")
        return EXIT_OK
    if not model.effect_keys():
        raise ConfigurationError("model has no active effects to explain")
    table = importance_ratios(model, x)
    grids = global_explain(model, x, args.grid, args.heatmap_grid, table=table)
    _emit(table, out_dir, "importance.json")
    if out_dir is not None:
        table.write_csv(out_dir / "importance.csv")
        write_json(grids, out_dir / "shape_grids.json")
    if svg_dir is not None:
        write_panels(grids, svg_dir)
        render_svg(table, svg_dir / "importance.svg")
    return EXIT_OK


# -- benchmark -----------------------------------------------------------------

def cmd_benchmark(args) -> int:
    if args.suite != "synthetic":
        raise ConfigurationError("only the 'synthetic' suite is available")
    synth = SynthConfig(n=args.n, distribution=args.dist, seed=args.seed).validate()
    if args.reps < 1:
        raise ConfigurationError("--reps must be >= 1")
    e1, e2, e3 = args.epochs
    cfg = TrainConfig(epochs_stage1=e1, epochs_stage2=e2, epochs_stage3=e3,
                      clarity_lambda=args.lam).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []

    def keep(rep, result):
        reports.append(rep)
        write_reports(reports, out, synth, args.lam, cfg)
        if args.save_models or args.svg:
            gm.save(result.model, out / f"model_rep{rep.repetition}.json")

    with _threads(args.threads):
        for r in range(args.reps):
            try:
                run_benchmark(synth, cfg, r + 1, on_report=keep, first=r)
            except (TrainingDivergence, NumericError, FloatingPointError) as exc:
                write_reports(reports, out, synth, args.lam, cfg)
                print(f"repetition {r} failed: {exc}", file=sys.stderr)
                return EXIT_FAILED
            if args.svg:
                _bench_panels(synth, r, out)
    doc = write_reports(reports, out, synth, args.lam, cfg)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK if doc["summary"]["repetitions"] == args.reps else EXIT_FAILED


def _bench_panels(synth, r, out: Path):
    from .synth import prepare_repetition
    model = gm.load(out / f"model_rep{r}.json")
    if not model.effect_keys():
        return
    _, _, train, _, _ = prepare_repetition(synth, r)
    write_panels(global_explain(model, train), out / f"panels_rep{r}")


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gaminet", description="Additive neural models with pairwise interactions.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help=f"BLAS threads (default ${THREADS_ENV} or 1; 1 is bit-reproducible)")

    p = sub.add_parser("train", help="fit a model on a CSV file")
    p.add_argument("--data")
    p.add_argument("--schema", help="TOML file mapping column names to roles")
    p.add_argument("--config", help="flat TOML file of training options")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest", help="re-run from a manifest.json written by an earlier run")
    p.add_argument("--out", required=True)
    threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="global shape functions or a local breakdown")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--row", type=int)
    which.add_argument("--global", dest="global_", action="store_true")
    p.add_argument("--svg-dir")
    p.add_argument("--out", help="directory for JSON/CSV documents (default: --svg-dir, else stdout)")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--heatmap-grid", type=int, default=51)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("benchmark", help="synthetic benchmark")
    p.add_argument("--suite", default="synthetic")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--dist", default="uniform", help=f"one of {', '.join(DISTRIBUTIONS)}")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--epochs", type=int, nargs=3, default=(5000, 5000, 500), metavar=("S1", "S2", "S3"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="write shape-function panels per repetition")
    p.add_argument("--save-models", action="store_true")
    threads(p)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDivergence, NumericError) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ConfigurationError, IngestionError, ShapeError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
