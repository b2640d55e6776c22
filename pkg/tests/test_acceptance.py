"""Acceptance suite: one test per criterion C1..C14.

Each test records a one-line pass/fail summary that is printed at the end of
the session (see ``conftest.py``), and then asserts.
"""
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np

from envlab import (
    ClassSpec,
    FormField,
    balayage_check,
    envelope,
    envelope_via_exponential,
    field_from_fourier,
    integrate_top,
    make_class_form,
    make_grid,
    mixed_disc,
)
from envlab.cli import main as cli_main
from envlab.config import load_config
from envlab.experiments import run_config
from envlab.torus import real_trig_modes
from helpers import class_form, cos_class, cos_form
from oracles import polarization, psor_obstacle_1d

CONFIGS = Path(__file__).parents[1] / "configs"
RNG = np.random.default_rng(20240611)


@lru_cache(maxsize=None)
def run(name):
    return run_config(load_config(CONFIGS / f"{name}.yaml"))


def verdicts(report, criterion):
    return [v for v in report.verdicts if v.criterion == criterion and v.asserted]


def random_hermitian(n, psd=False):
    B = RNG.standard_normal((n, n)) + 1j * RNG.standard_normal((n, n))
    return B @ B.conj().T if psd else (B + B.conj().T) / 2


def test_c1_normalization_gate(acceptance):
    worst = 0.0
    for n in (1, 2, 3):
        g = make_grid(n, 8)
        for _ in range(100):
            A = random_hermitian(n, psd=True)
            expect = 2**n * factorial(n) * np.linalg.det(A).real
            got = integrate_top(FormField.constant(g, A))
            worst = max(worst, abs(got - expect) / max(1.0, abs(expect)))
    ok = worst <= 1e-12
    acceptance("C1", "normalization gate", ok, f"max rel error {worst:.2e} <= 1e-12 over 300 PSD matrices")
    assert ok


def test_c2_mixed_discriminant_oracle(acceptance):
    worst = 0.0
    for n in (2, 3):
        for _ in range(100):
            mats = [random_hermitian(n) for _ in range(n)]
            scale = max(1.0, max(np.abs(m).max() for m in mats) ** n)
            worst = max(worst, abs(mixed_disc(mats).real - polarization(mats)) / scale)
    ok = worst <= 1e-12
    acceptance("C2", "mixed-discriminant oracle", ok, f"max scaled error {worst:.2e} <= 1e-12 over 200 tuples")
    assert ok


def test_c3_discrete_stokes(acceptance):
    g = make_grid(2, 32)
    A = np.array([[1.0, 0.3 - 0.2j], [0.3 + 0.2j, 0.8]])
    modes = (
        real_trig_modes((1, 0, 1, 0), cos=0.3)
        + real_trig_modes((0, 1, 0, 2), sin=0.2)
        + real_trig_modes((2, 0, 0, 1), cos=0.1, sin=0.15)
        + real_trig_modes((0, 3, 1, 0), cos=0.05)
    )
    spec = ClassSpec(A, field_from_fourier(g, modes))
    vol = 8 * np.linalg.det(A).real
    err = abs(integrate_top(make_class_form(g, spec)) - vol) / vol
    ok = err <= 1e-10
    acceptance("C3", "discrete Stokes (n=2, N=32, spectral)", ok, f"rel error {err:.2e} <= 1e-10")
    assert ok


def test_c4_envelope_vs_obstacle_oracle(acceptance):
    M = 4096
    xf = np.arange(M) / M
    ref, _ = psor_obstacle_1d(1.05 + 2 * np.cos(2 * np.pi * xf))
    Ns = (128, 256, 512)
    errs = []
    for N in Ns:
        res = envelope(cos_form(N))
        assert res.converged
        errs.append(float(np.max(np.abs(res.u_eps.data.ravel() - ref[:: M // N]))))
    scaled = [e * N**2 for e, N in zip(errs, Ns)]
    slope = -np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    ok = max(scaled) <= 5.0 and slope >= 1.8
    acceptance("C4", "envelope vs 1-d obstacle oracle", ok, f"err*N^2 = {', '.join(f'{s:.3f}' for s in scaled)} <= 5, decay order {slope:.2f}")
    assert ok


def test_c5_obstacle_vs_exponential(acceptance):
    spec = cos_class(2, 64, 0.4)
    g = spec.grid
    beta = class_form(spec) + FormField.constant(g, np.eye(2) / 16)
    u = envelope(beta).u_eps
    v = envelope_via_exponential(beta, [0.2, 0.1, 0.05, 0.02], h=-spec.f)
    diff = float(np.max(np.abs(g.expand(v.data) - g.expand(u.data))))
    bound = 0.05 * u.sup_norm() + 10 * g.h**2
    ok = diff <= bound
    acceptance("C5", "obstacle vs exponential envelope (n=2, N=64)", ok, f"sup diff {diff:.4f} <= {bound:.4f}")
    assert ok


RUNS = [
    "morse_gap_flat",
    "morse_gap_generic",
    "morse_gap_gauduchon",
    "eps_scaling",
    "ijk_table_n3",
    "n3_remark",
    "htilde_cherrier",
    "htilde_tw",
]


def test_c6_contact_set_concentration(acceptance):
    worst = 1.0
    for name in RUNS:
        for row in run(name).rows:
            if "contact_mass_fraction" in row and row.get("converged", True):
                worst = min(worst, row["contact_mass_fraction"])
    extra = [envelope(cos_form(64)), envelope(class_form(cos_class(2, 32, 0.4)) + FormField.constant(make_grid(2, 32), np.eye(2) / 16))]
    worst = min([worst] + [r.contact_mass_fraction for r in extra])
    ok = worst >= 0.98 and all(v.passed for name in RUNS for v in verdicts(run(name), "C6"))
    acceptance("C6", "contact-set concentration", ok, f"min fraction {worst:.4f} >= 0.98 over every converged envelope")
    assert ok


def _gap_table(report):
    vol = report.tables["gap"][0]["volume"]
    out = []
    for eps in sorted({r["epsilon"] for r in report.rows}, reverse=True):
        rows = [r for r in report.rows if r["epsilon"] == eps]
        best = min(min(r["morse_probe"], r["morse_envelope"]) for r in rows)
        out.append(abs(best - vol) / vol)
    return out


def test_c7_morse_gap_semipositive(acceptance):
    details, ok = [], True
    for name in ("morse_gap_flat", "morse_gap_generic"):
        rep = run(name)
        gaps = _gap_table(rep)
        tail = gaps[-4:]
        mono = all(b <= a for a, b in zip(tail, tail[1:]))
        this = gaps[-1] <= 0.02 and mono and all(v.passed for v in verdicts(rep, "C7"))
        ok = ok and this
        details.append(f"{name.split('_')[-1]} gap {gaps[-1]:.4f} (tail {'decreasing' if mono else 'NOT decreasing'})")
    acceptance("C7", "Morse gap, semipositive class (N=64, eps to 1/64)", ok, "; ".join(details) + " <= 0.02")
    assert ok


def test_c8_stokes_step_gauduchon(acceptance):
    rep = run("morse_gap_gauduchon")
    errs = [abs(r["ma_total"] - r["beta_eps_top"]) / r["beta_eps_top"] for r in rep.rows if r["probe"] == 0]
    refined = [r["rel_error_refined"] for r in rep.tables["stokes_refined"]]
    ratio = max(errs) / max(refined)
    ok = max(errs) <= 0.02 and ratio >= 2.0
    acceptance("C8", "Stokes step, Gauduchon metric", ok, f"max rel error {max(errs):.2e} <= 0.02 at N=64, halving ratio N->2N {ratio:.3f} (needs >= 2)")
    assert ok


def test_c9_semipositive_norm_bound(acceptance):
    rep = run("eps_scaling")
    inv = [1 / r["epsilon"] for r in rep.rows]
    slope = np.polyfit(np.log(inv), np.log([r["sup_norm"] for r in rep.rows]), 1)[0]
    l1 = [r["l1_norm"] for r in rep.rows]
    extra = [v for name in ("htilde_cherrier", "htilde_tw") for v in verdicts(run(name), "C9")]
    ok = abs(slope) <= 0.05 and all(v.passed for v in verdicts(rep, "C9") + extra)
    acceptance("C9", "semipositive envelope norm bound", ok, f"sup-norm slope {slope:+.4f} (|.| <= 0.05), mean|u| in [{min(l1):.3f}, {max(l1):.3f}]")
    assert ok


def test_c10_ijk_machinery(acceptance):
    rep = run("ijk_table_n3")
    delta = rep.config["options"]["delta"]
    slopes = {j: rep.fits[f"slope_I({j},0)"] for j in (1, 2, 3)}
    slope_ok = all(s <= (j - 1) * delta + 0.2 for j, s in slopes.items())
    ok = slope_ok and all(v.passed for v in verdicts(rep, "C10"))
    names = ", ".join(f"{v.name}" for v in verdicts(rep, "C10") if not v.passed) or "none"
    acceptance("C10", "I(j,k) machinery (n=3, N=8)", ok, f"slopes {', '.join(f'{s:+.3f}' for s in slopes.values())}; failing checks: {names}")
    assert ok


def test_c11_n3_gauduchon_expansion(acceptance):
    rep = run("n3_remark")
    slope = rep.fits["eps2_term_slope"]
    resid = max(r["expansion_residual"] for r in rep.rows)
    ok = slope >= 1.9 and all(v.passed for v in verdicts(rep, "C11"))
    acceptance("C11", "n=3 Gauduchon expansion", ok, f"eps^2-term slope {slope:.3f} >= 1.9, expansion residual {resid:.1e}")
    assert ok


def test_c12_lower_bound_for_ma_constant(acceptance):
    details, ok = [], True
    for name in ("prop_bd_flat", "prop_bd_generic"):
        rep = run(name)
        margin = min(r["C"] / r["volume"] - 0.99 for r in rep.rows)
        this = margin >= 0 and all(v.passed for v in verdicts(rep, "C12"))
        ok = ok and this
        details.append(f"{name.split('_')[-1]} min C/vol - 0.99 = {margin:.4f}")
    acceptance("C12", "lower bound for the MA constant (N=32)", ok, "; ".join(details))
    assert ok


def test_c13_balayage(acceptance):
    beta = cos_form(64)
    rep = balayage_check(beta, envelope(beta), [0.5, 0.5], 0.08)
    h2 = beta.grid.h**2
    ok = rep["inf_diff"] >= -1e-9 and rep["sup_abs_diff"] <= 10 * h2
    acceptance("C13", "balayage on a non-contact ball", ok, f"inf(psi - u) {rep['inf_diff']:.1e} >= -1e-9, sup|psi - u| {rep['sup_abs_diff']:.1e} <= {10 * h2:.1e}")
    assert ok


def test_c14_determinism_across_threads(acceptance, tmp_path):
    cfg = CONFIGS / "morse_gap_flat.yaml"
    codes = [cli_main(["run", "--config", str(cfg), "--out", str(tmp_path / f"t{k}"), "--threads", str(k)]) for k in (1, 8)]
    same = (tmp_path / "t1" / "report.json").read_bytes() == (tmp_path / "t8" / "report.json").read_bytes()
    ok = same and codes == [0, 0]
    acceptance("C14", "determinism across thread counts", ok, f"report.json {'identical' if same else 'DIFFERS'} for --threads 1 and 8")
    assert ok
