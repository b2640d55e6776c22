"""The I(j,k) recursion, the Stokes expansion and the n=3 expansion."""
from __future__ import annotations

from math import comb

import numpy as np

from .._reduce import grid_mean
from ..config import Tolerances
from ..exterior import Form
from ..forms import i_ddbar, integrate_top, mixed_integral_table, wedge_integral
from ..torus import ClassSpec, FormField, make_class_form, make_hermitian_metric
from ._common import envelope_row, hessian_form, map_ordered, zero_field
from .report import ExperimentReport, Verdict, loglog_slope


def stokes_expansion(table, eps: float, first_k: int = 0) -> float:
    """``sum_{k=first_k}^{n-1} sum_{s=0}^{k} (-1)^s C(k,s) eps^{s+1} I(n-s-1, 0)``.

    With ``first_k = 0`` this equals ``int alpha_eps^n - int (alpha_eps - eps omega)^n``
    identically; ``first_k = 1`` drops the leading ``eps * I(n-1, 0)`` term.
    """
    n = table.n
    total = 0.0
    for k in range(first_k, n):
        for s in range(k + 1):
            total += (-1) ** s * comb(k, s) * eps ** (s + 1) * table[n - s - 1, 0]
    return total


def _pairing_density(alpha_eps, alpha, omega, j, k, mode):
    """Density of ``alpha^k ^ i ddbar(alpha_eps^{j-1} ^ omega^{n-j-k})``."""
    n, N = alpha.grid.n, alpha.grid.N
    one = Form.function(n, N, np.ones((1,) * (2 * n)))
    T = one.wedge(Form.from_matrix(alpha_eps.data, N).power(j - 1)).wedge(Form.from_matrix(omega.data, N).power(n - j - k))
    dT = T.i_ddbar(mode)
    top = Form.from_matrix(alpha.data, N).power(k).wedge(dT)
    return np.real(top.top_density())


def _ijk_rows(spec, omega, u, schedule, mode, stencil_r, threads):
    grid = spec.grid
    n = grid.n
    alpha = make_class_form(grid, spec)
    beta = alpha + i_ddbar(u, "spectral")

    def work(eps):
        row, res, _ = envelope_row(beta, omega, eps, stencil_r)
        w = u + res.u_eps
        alpha_eps = beta + omega * eps + hessian_form(res.u_eps, mode)
        table = mixed_integral_table(alpha_eps, alpha, omega, eps)
        ibp = []
        for j in range(1, n + 1):
            for k in range(0, n + 1 - j):
                lhs = table[j, k] - table[j - 1, k + 1] - eps * table[j - 1, k]
                dens = _pairing_density(alpha_eps, alpha, omega, j, k, mode)
                rhs = grid_mean(np.broadcast_to(w.data, np.broadcast_shapes(w.data.shape, np.shape(dens))) * dens)
                entry = {"epsilon": eps, "j": j, "k": k, "lhs": lhs, "rhs": rhs}
                if j == 1:
                    C0 = float(np.max(np.abs(_pairing_density(alpha_eps, alpha, omega, 1, k, mode))))
                    bound = table[0, k + 1] + eps * table[0, k] + C0 * w.l1_norm()
                    entry.update({"C0": C0, "base_bound": bound, "base_margin": bound - table[1, k]})
                ibp.append(entry)
        gamma = alpha_eps - omega * eps
        top_eps = table[n, 0]
        top_alpha = table[0, n]
        correction = integrate_top(gamma) - top_alpha
        expansion = stokes_expansion(table, eps, 0)
        literal = stokes_expansion(table, eps, 1)
        lhs = top_eps - top_alpha
        scale = max(abs(top_eps), abs(top_alpha))
        row.update(
            {
                "stokes_lhs": lhs,
                "stokes_sum": expansion,
                "stokes_correction": correction,
                "stokes_residual": abs(lhs - expansion - correction) / scale,
                "stokes_residual_literal": abs(lhs - literal - correction) / scale,
            }
        )
        return row, table, ibp

    return map_ordered(work, schedule, threads)


def run_ijk_table(
    spec: ClassSpec,
    omega: FormField,
    probe,
    schedule: list,
    delta: float,
    *,
    tolerances: Tolerances | None = None,
    hessian_mode: str = "spectral",
    stencil_r: int = 1,
    threads: int = 1,
    config: dict | None = None,
) -> ExperimentReport:
    """Tables ``I(j,k)`` along the schedule with the recursion checks.

    ``alpha_eps = beta + eps*omega + i ddbar u_eps`` uses ``hessian_mode``
    for the envelope; spectral mode makes the integration-by-parts identity
    exact on the grid.  A flat-metric control run checks the Stokes
    expansion when ``omega`` is not flat.
    """
    tol = tolerances or Tolerances()
    grid = spec.grid
    n = grid.n
    if n not in (2, 3):
        raise ValueError("ijk_table needs n in {2, 3}")
    if delta is None or not delta > 0:
        raise ValueError("ijk_table needs a positive delta (options.delta)")
    u = zero_field(grid) if probe is None else probe
    out = _ijk_rows(spec, omega, u, schedule, hessian_mode, stencil_r, threads)
    rows = [r for r, _, _ in out]
    report = ExperimentReport("ijk_table", config or {}, rows=rows)
    report.tables["rows"] = rows
    report.tables["ijk"] = [e for _, t, _ in out for e in t.rows()]
    ibp = [e for _, _, entries in out for e in entries]
    report.tables["integration_by_parts"] = ibp

    worst = min(r["contact_mass_fraction"] for r in rows)
    report.add(Verdict("C6", "contact_mass_fraction", worst >= tol.contact_fraction, worst, tol.contact_fraction))

    base = [e for e in ibp if e["j"] == 1]
    margin = min(e["base_margin"] for e in base)
    scale = max(abs(e["base_bound"]) for e in base)
    report.add(Verdict("C10", "base_case", margin >= -1e-12 * scale, margin, 1e-12 * scale, detail="I(1,k) <= I(0,k+1) + eps I(0,k) + C0 ||u_eps + u||_1"))
    ibp_res = max(abs(e["lhs"] - e["rhs"]) for e in ibp) / max(1.0, max(abs(r["beta_eps_top"]) for r in rows))
    report.fits["ibp_residual"] = ibp_res
    report.add(
        Verdict(
            "C10",
            "integration_by_parts_identity",
            ibp_res <= tol.identity_rel,
            ibp_res,
            tol.identity_rel,
            asserted=hessian_mode == "spectral",
            detail=f"hessian mode {hessian_mode}",
        )
    )
    inv = [1 / e for e in schedule]
    for j in range(1, n + 1):
        vals = [t[j, 0] for _, t, _ in out]
        slope = loglog_slope(inv, vals)
        report.fits[f"slope_I({j},0)"] = slope
        report.plotdata[f"I{j}0"] = list(zip(schedule, vals))
        limit = (j - 1) * delta + tol.slack
        report.add(Verdict("C10", f"slope_I({j},0)", slope <= limit, slope, limit))
    res = max(r["stokes_residual"] for r in rows)
    report.add(Verdict("C10", "stokes_expansion", res <= tol.identity_rel, res, tol.identity_rel, detail="expansion summed from k=0"))
    lit = max(r["stokes_residual_literal"] for r in rows)
    report.add(
        Verdict(
            "C10",
            "stokes_expansion_from_k1",
            lit <= tol.identity_rel,
            lit,
            tol.identity_rel,
            asserted=False,
            detail="variant summed from k=1; misses eps*I(n-1,0)",
        )
    )
    if not omega.is_constant:
        flat = make_hermitian_metric(grid, "flat")
        ctrl = _ijk_rows(spec, flat, u, schedule, hessian_mode, stencil_r, threads)
        cres = max(r["stokes_residual"] for r, _, _ in ctrl)
        report.tables["control_rows"] = [r for r, _, _ in ctrl]
        report.add(Verdict("C10", "stokes_expansion_constant_omega", cres <= tol.identity_rel, cres, tol.identity_rel))
    else:
        report.add(Verdict("C10", "stokes_expansion_constant_omega", res <= tol.identity_rel, res, tol.identity_rel))
    return report


def four_term_expansion(alpha_eps: FormField, omega: FormField, eps: float) -> dict:
    """``int alpha_eps^3`` split as in the n=3 argument.

    ``t0 = int (alpha_eps - eps omega)^3``, ``t1 = 3 eps int alpha_eps^2 ^ omega``,
    ``t2 = -3 eps^2 int alpha_eps ^ omega^2``, ``t3 = eps^3 int omega^3``.
    """
    if alpha_eps.grid.n != 3:
        raise ValueError("the four-term expansion is for n = 3")
    gamma = alpha_eps - omega * eps
    t0 = integrate_top(gamma)
    t1 = 3 * eps * wedge_integral([(alpha_eps, 2), (omega, 1)])
    t2 = -3 * eps**2 * wedge_integral([(alpha_eps, 1), (omega, 2)])
    t3 = eps**3 * integrate_top(omega)
    total = integrate_top(alpha_eps)
    return {"total": total, "t0": t0, "t1": t1, "t2": t2, "t3": t3, "residual": abs(total - (t0 + t1 + t2 + t3)) / max(abs(total), 1e-300)}


def run_n3_remark(
    spec: ClassSpec,
    omega: FormField,
    schedule: list,
    *,
    metric_kind: str = "gauduchon",
    tolerances: Tolerances | None = None,
    hessian_mode: str = "spectral",
    stencil_r: int = 1,
    threads: int = 1,
    config: dict | None = None,
) -> ExperimentReport:
    """Four-term expansion of ``int (beta + eps omega + i ddbar u_eps)^3`` (zero probe)."""
    tol = tolerances or Tolerances()
    grid = spec.grid
    if grid.n != 3:
        raise ValueError("n3_remark needs n = 3")
    if metric_kind not in ("gauduchon", "flat") or not omega.is_closed:
        raise ValueError("n3_remark needs a gauduchon (or flat) metric with i ddbar omega = 0")
    alpha = make_class_form(grid, spec)
    vol = spec.volume()

    def work(eps):
        row, res, _ = envelope_row(alpha, omega, eps, stencil_r)
        alpha_eps = alpha + omega * eps + hessian_form(res.u_eps, hessian_mode)
        exp = four_term_expansion(alpha_eps, omega, eps)
        t2_replaced = -3 * eps**2 * wedge_integral([(alpha + omega * eps, 1), (omega, 2)])
        row.update({f"expansion_{k}": v for k, v in exp.items()})
        row["t2_stokes"] = t2_replaced
        row["t2_replacement_error"] = abs(exp["t2"] - t2_replaced)
        row["lower_bound"] = vol + exp["t2"]
        row["lower_bound_margin"] = exp["total"] - (vol + exp["t2"])
        return row

    rows = map_ordered(work, schedule, threads)
    report = ExperimentReport("n3_remark", config or {}, rows=rows)
    report.tables["rows"] = rows
    report.plotdata["eps2_term"] = [(r["epsilon"], abs(r["expansion_t2"])) for r in rows]

    const = ClassSpec(spec.A, zero_field(grid))
    ctrl_alpha = make_class_form(grid, const) + make_hermitian_metric(grid, "flat") * schedule[0]
    ctrl = four_term_expansion(ctrl_alpha, make_hermitian_metric(grid, "flat"), schedule[0])
    report.add(Verdict("C11", "expansion_constant_data", ctrl["residual"] <= tol.identity_const, ctrl["residual"], tol.identity_const))
    res = max(r["expansion_residual"] for r in rows)
    report.add(Verdict("C11", "expansion_identity", res <= tol.identity_const, res, tol.identity_const))
    scale = max(abs(r["expansion_total"]) for r in rows)
    rep = max(r["t2_replacement_error"] for r in rows) / scale
    report.add(
        Verdict("C11", "eps2_term_stokes_replacement", rep <= tol.identity_rel, rep, tol.identity_rel, asserted=hessian_mode == "spectral")
    )
    margin = min(r["lower_bound_margin"] for r in rows)
    report.add(Verdict("C11", "lower_bound", margin >= -tol.identity_rel * scale, margin, 0.0, detail="int alpha_eps^3 >= int alpha^3 - 3 eps^2 int alpha_eps ^ omega^2"))
    slope = loglog_slope(schedule, [abs(r["expansion_t2"]) for r in rows])
    report.fits["eps2_term_slope"] = slope
    report.add(Verdict("C11", "eps2_term_slope", slope >= tol.eps2_slope, slope, tol.eps2_slope))
    worst = min(r["contact_mass_fraction"] for r in rows)
    report.add(Verdict("C6", "contact_mass_fraction", worst >= tol.contact_fraction, worst, tol.contact_fraction))
    return report
