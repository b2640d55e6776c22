"""Experiment runners and the registry used by the command-line interface."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .report import CRITERIA, ExperimentReport, Verdict, canonical_json, geometric_schedule, loglog_slope


@dataclass(frozen=True)
class ExperimentInfo:
    id: str
    description: str
    required: tuple
    optional: tuple


EXPERIMENTS = {
    "morse_gap": ExperimentInfo(
        "morse_gap",
        "infimum of envelope-corrected Morse integrals against int alpha^n; Stokes step for closed metrics",
        ("grid", "class"),
        ("metric", "probes", "epsilon", "tolerances", "options.stencil_r", "options.refine"),
    ),
    "eps_scaling": ExperimentInfo(
        "eps_scaling",
        "log-log growth of sup|u_eps| and mean|u_eps| as eps decreases",
        ("grid", "class"),
        ("metric", "probes", "epsilon", "tolerances", "options.stencil_r"),
    ),
    "ijk_table": ExperimentInfo(
        "ijk_table",
        "I(j,k) tables, integration-by-parts recursion, base case, slopes and the Stokes expansion",
        ("grid", "class", "options.delta"),
        ("metric", "probes", "epsilon", "tolerances", "options.hessian_mode"),
    ),
    "n3_remark": ExperimentInfo(
        "n3_remark",
        "n=3 four-term expansion with a closed metric and the eps^2 term",
        ("grid", "class", "metric"),
        ("epsilon", "tolerances", "options.hessian_mode"),
    ),
    "htilde_scaling": ExperimentInfo(
        "htilde_scaling",
        "smooth comparison potentials by the exponential or constant MA route and the envelope sandwich",
        ("grid", "class"),
        ("metric", "probes", "epsilon", "tolerances", "options.route"),
    ),
    "prop_bd": ExperimentInfo(
        "prop_bd",
        "MA constant C_eps against int alpha^n with the restricted-integral chain",
        ("grid", "class"),
        ("metric", "epsilon", "tolerances", "options.volume_form"),
    ),
}


def catalog() -> list:
    return [
        {"id": e.id, "description": e.description, "required_keys": list(e.required), "optional_keys": list(e.optional)}
        for e in EXPERIMENTS.values()
    ]


def run_config(cfg, threads: int = 1, gate: bool = True) -> ExperimentReport:
    """Run the experiment described by a :class:`~envlab.config.RunConfig`.

    The constant-coefficient gate runs first; if it fails the nontrivial run
    is skipped and the report carries the failure.
    """
    from ..config import modes_to_field
    from ..torus import make_hermitian_metric

    start = time.perf_counter()
    exp = cfg.experiment
    snapshot = cfg.snapshot()
    tol = cfg.tolerances
    gate_result = None
    if gate:
        gate_result = run_gate(exp, cfg.grid.n, cfg.seed, tol.gate)
        if not gate_result["passed"]:
            report = ExperimentReport(exp, snapshot, gate=gate_result)
            report.failure = {"stage": "gate", "error": "constant-coefficient identity gate failed"}
            report.runtime = time.perf_counter() - start
            return report

    grid = cfg.make_grid()
    spec = cfg.class_spec(grid)
    omega = make_hermitian_metric(grid, cfg.metric.recipe(grid))
    probes = cfg.probe_fields(grid)
    schedule = cfg.epsilon.schedule()
    opts = cfg.options
    common = {"tolerances": tol, "threads": threads, "config": snapshot}
    first = probes[0] if probes else None

    if exp == "morse_gap":
        refined = None
        if opts.refine:
            def refined():
                c2 = cfg.with_grid(2 * cfg.grid.N)
                g2 = c2.make_grid()
                return c2.class_spec(g2), make_hermitian_metric(g2, c2.metric.recipe(g2)), c2.probe_fields(g2)

        report = run_morse_gap(spec, omega, probes, schedule, stencil_r=opts.stencil_r, refined=refined, **common)
    elif exp == "eps_scaling":
        report = run_eps_scaling(spec, omega, first, schedule, stencil_r=opts.stencil_r, **common)
    elif exp == "ijk_table":
        report = run_ijk_table(spec, omega, first, schedule, opts.delta, hessian_mode=opts.hessian_mode, stencil_r=opts.stencil_r, **common)
    elif exp == "n3_remark":
        report = run_n3_remark(spec, omega, schedule, metric_kind=cfg.metric.kind, hessian_mode=opts.hessian_mode, stencil_r=opts.stencil_r, **common)
    elif exp == "htilde_scaling":
        report = run_htilde_scaling(spec, omega, first, schedule, opts.route, stencil_r=opts.stencil_r, **common)
    elif exp == "prop_bd":
        vf = modes_to_field(grid, opts.volume_form) if opts.volume_form else None
        report = run_prop_bd(spec, omega, schedule, vf, **common)
    else:  # pragma: no cover - guarded by config validation
        raise ValueError(f"unknown experiment {exp!r}")
    report.gate = gate_result
    report.runtime = time.perf_counter() - start
    return report


from .gate import run_gate  # noqa: E402
from .ijk import run_ijk_table, run_n3_remark  # noqa: E402
from .ma_runs import run_htilde_scaling, run_prop_bd  # noqa: E402
from .morse import run_eps_scaling, run_morse_gap  # noqa: E402

__all__ = [
    "run_eps_scaling",
    "run_gate",
    "run_htilde_scaling",
    "run_ijk_table",
    "run_morse_gap",
    "run_n3_remark",
    "run_prop_bd",
    "CRITERIA",
    "EXPERIMENTS",
    "ExperimentReport",
    "Verdict",
    "canonical_json",
    "catalog",
    "geometric_schedule",
    "loglog_slope",
    "run_config",
]
