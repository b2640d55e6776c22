"""Command-line entry point.

``envlab``                      print the experiment catalog
``envlab list [--json]``        same, optionally machine-readable
``envlab run --config PATH --out DIR [--threads K] [--gate] [--json]``

Exit status: 0 when every asserted verdict passes, 2 when a verdict (or the
identity gate) fails, 1 on configuration or solver errors.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .experiments import EXPERIMENTS, ExperimentReport, canonical_json, catalog, run_config
from .experiments._common import resolve_threads
from .experiments.gate import run_gate
from .experiments.report import rows_to_csv
from .ma import MASolverError
from .torus import CONVENTIONS_VERSION

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2

log = logging.getLogger("envlab")


def _print_catalog(as_json: bool, out=None):
    out = out or sys.stdout
    items = catalog()
    if as_json:
        out.write(json.dumps({"experiments": items, "conventions": CONVENTIONS_VERSION}, indent=2) + "\n")
        return
    out.write(f"envlab {__version__}: {len(items)} experiments\n\n")
    for it in items:
        out.write(f"  {it['id']:<16} {it['description']}\n")
        out.write(f"  {'':<16} required: {', '.join(it['required_keys'])}\n")
        out.write(f"  {'':<16} optional: {', '.join(it['optional_keys'])}\n")


def _header(digest: str) -> str:
    return f"# envlab {__version__} config_hash={digest} conventions={CONVENTIONS_VERSION}\n"


def write_outputs(report: ExperimentReport, out: Path, digest: str, threads: int) -> None:
    """Write report.json, metadata.json, tables/*.csv and plotdata/*.dat."""
    out.mkdir(parents=True, exist_ok=True)
    body = report.to_dict()
    body["config_hash"] = digest
    body["conventions"] = CONVENTIONS_VERSION
    body["envlab_version"] = __version__
    (out / "report.json").write_text(canonical_json(body), encoding="utf-8")
    meta = {
        "config_hash": digest,
        "conventions": CONVENTIONS_VERSION,
        "envlab_version": __version__,
        "experiment": report.experiment,
        "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "runtime_seconds": round(report.runtime, 3),
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if report.tables:
        tdir = out / "tables"
        tdir.mkdir(exist_ok=True)
        for name, rows in report.tables.items():
            (tdir / f"{name}.csv").write_text(_header(digest) + rows_to_csv(rows), encoding="utf-8")
    if report.plotdata:
        pdir = out / "plotdata"
        pdir.mkdir(exist_ok=True)
        for name, pts in report.plotdata.items():
            lines = [_header(digest), f"# epsilon {name}\n"]
            lines += [f"{float(x)!r} {float(y)!r}\n" for x, y in pts]
            (pdir / f"{name}.dat").write_text("".join(lines), encoding="utf-8")


def _summary(report: ExperimentReport, out=None):
    out = out or sys.stdout
    out.write(f"experiment {report.experiment}: {'PASS' if report.passed else 'FAIL'}\n")
    if report.gate is not None:
        out.write(f"  gate: {'pass' if report.gate['passed'] else 'FAIL'} ({len(report.gate['checks'])} identities)\n")
    for v in report.verdicts:
        tag = "pass" if v.passed else ("FAIL" if v.asserted else "info")
        val = "" if v.value is None else f" value={v.value:.6g}"
        tol = "" if v.tolerance is None else f" tol={v.tolerance:.6g}"
        out.write(f"  [{tag}] {v.criterion} {v.name}{val}{tol}\n")
    if report.failure:
        out.write(f"  failure: {report.failure}\n")


def _gate_only(args, cfg) -> int:
    if cfg is None:
        gates = [run_gate(e, 3 if e == "n3_remark" else 2) for e in EXPERIMENTS]
        digest = "gate-only"
        snapshot = {"gate": "all experiments"}
    else:
        gates = [run_gate(cfg.experiment, cfg.grid.n, cfg.seed, cfg.tolerances.gate)]
        digest = cfg.digest()
        snapshot = cfg.snapshot()
    passed = all(g["passed"] for g in gates)
    body = {"experiment": "gate", "config": snapshot, "gates": gates, "passed": passed, "config_hash": digest, "conventions": CONVENTIONS_VERSION}
    out = Path(args.out or (cfg.output if cfg and cfg.output else "envlab-out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(body), encoding="utf-8")
    if args.json:
        sys.stdout.write(canonical_json(body))
    else:
        for g in gates:
            worst = max(c["error"] for c in g["checks"])
            sys.stdout.write(f"gate {g['experiment']} n={g['n']}: {'pass' if g['passed'] else 'FAIL'} (max rel error {worst:.2e})\n")
    return EXIT_OK if passed else EXIT_VERDICT


def _run(args) -> int:
    cfg = None
    if args.config:
        cfg = load_config(args.config)
    elif not args.gate:
        raise ConfigError("run needs --config PATH (or --gate for the identity gates alone)")
    threads = resolve_threads(args.threads)
    if args.gate:
        return _gate_only(args, cfg)
    out = Path(args.out or cfg.output or "envlab-out")
    digest = cfg.digest()
    try:
        report = run_config(cfg, threads=threads)
    except (MASolverError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        report = ExperimentReport(cfg.experiment, cfg.snapshot())
        report.failure = {"stage": "run", "error": str(exc), "type": type(exc).__name__}
        write_outputs(report, out, digest, threads)
        sys.stderr.write(f"envlab: solver error: {exc}\n")
        return EXIT_ERROR
    write_outputs(report, out, digest, threads)
    if args.json:
        body = report.to_dict()
        sys.stdout.write(canonical_json(body))
    else:
        _summary(report)
    if report.failure and report.failure.get("stage") != "gate":
        return EXIT_ERROR
    return EXIT_OK if report.passed else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envlab", description="Envelope and Monge-Ampere experiments on flat complex tori.")
    p.add_argument("--version", action="version", version=f"envlab {__version__} ({CONVENTIONS_VERSION})")
    sub = p.add_subparsers(dest="command")
    pl = sub.add_parser("list", help="print the experiment catalog")
    pl.add_argument("--json", action="store_true", help="machine-readable catalog")
    pr = sub.add_parser("run", help="run one experiment from a config file")
    pr.add_argument("--config", metavar="PATH", help="YAML experiment config")
    pr.add_argument("--out", metavar="DIR", help="output directory")
    pr.add_argument("--threads", type=int, default=None, metavar="K", help="row-level parallelism (default: $ENVLAB_THREADS or 1)")
    pr.add_argument("--gate", action="store_true", help="run the constant-coefficient identity gate only")
    pr.add_argument("--json", action="store_true", help="print the report as JSON")
    pr.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command is None:
        _print_catalog(False)
        return EXIT_OK
    if args.command == "list":
        _print_catalog(args.json)
        return EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        sys.stderr.write(f"envlab: config error:\n{exc}\n")
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"envlab: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
