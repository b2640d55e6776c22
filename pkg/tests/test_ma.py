from math import factorial, log

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from envlab import (
    FormField,
    MAProblem,
    MASolverError,
    ScalarField,
    continuation_solve,
    field_from_fourier,
    i_ddbar,
    integrate_top,
    make_grid,
    solve_ma,
)
from envlab.forms import top_density
from envlab.torus import real_trig_modes


def flat(g):
    return FormField.constant(g, np.eye(g.n))


def manufactured(g, lam, C):
    """rho such that phi* = 0.1 cos(2 pi x1) solves the equation with constant C."""
    phi = field_from_fourier(g, real_trig_modes([1] + [0] * (2 * g.n - 1), cos=0.1))
    chi = flat(g)
    dens = top_density(chi + i_ddbar(phi))
    log_rho = ScalarField(g, np.log(dens) - lam * phi.data - log(C))
    return chi, phi, log_rho


@pytest.mark.parametrize("n", [1, 2, 3])
def test_flat_unknown_constant(n):
    g = make_grid(n, 8)
    sol = solve_ma(MAProblem(flat(g), ScalarField.constant(g), 0.0, None))
    assert sol.phi.sup_norm() < 1e-13
    assert sol.C == pytest.approx(2**n * factorial(n), rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_manufactured_solution_fixed_constant(n):
    g = make_grid(n, 16)
    chi, phi, log_rho = manufactured(g, 1.0, 2.0)
    sol = solve_ma(MAProblem(chi, log_rho, 1.0, 2.0), tol=1e-12)
    assert np.max(np.abs(sol.phi.data - phi.data)) < 1e-9


def test_manufactured_solution_unknown_constant():
    g = make_grid(2, 16)
    chi, phi, log_rho = manufactured(g, 0.0, 3.0)
    sol = solve_ma(MAProblem(chi, log_rho), tol=1e-12)
    assert np.max(np.abs(sol.phi.data - phi.data)) < 1e-9
    assert sol.C == pytest.approx(3.0, rel=1e-9)
    assert abs(sol.phi.mean()) < 1e-14


def test_manufactured_solution_finite_difference_is_second_order():
    errs = []
    for N in (16, 32):
        g = make_grid(1, N)
        chi, phi, log_rho = manufactured(g, 1.0, 1.0)
        sol = solve_ma(MAProblem(chi, log_rho, 1.0, 1.0, mode="finite_difference"), tol=1e-12)
        errs.append(np.max(np.abs(sol.phi.data - phi.data)))
    assert np.log2(errs[0] / errs[1]) >= 1.9


@given(st.floats(0.01, 100.0))
def test_scaling_of_density_scales_constant(s):
    g = make_grid(2, 8)
    chi, _, log_rho = manufactured(g, 0.0, 1.0)
    a = solve_ma(MAProblem(chi, log_rho), tol=1e-12)
    b = solve_ma(MAProblem(chi, log_rho + log(s)), tol=1e-12)
    assert b.C * s == pytest.approx(a.C, rel=1e-9)
    assert np.max(np.abs(a.phi.data - b.phi.data)) < 1e-9


def test_constant_times_mass_is_class_integral():
    g = make_grid(2, 16)
    f = field_from_fourier(g, real_trig_modes((1, 0, 0, 1), cos=0.02) + real_trig_modes((0, 0, 1, 0), sin=0.03))
    chi = FormField.constant(g, [[1.0, 0.2], [0.2, 0.8]]) + i_ddbar(f)
    log_rho = field_from_fourier(g, real_trig_modes((0, 1, 0, 0), cos=0.3))
    sol = solve_ma(MAProblem(chi, log_rho), tol=1e-12)
    assert sol.unresolved < 1e-9
    mass = float(np.mean(np.exp(g.expand(log_rho.data))))
    assert sol.C * mass == pytest.approx(integrate_top(chi), rel=1e-10)


def test_rms_residual_decreases_every_step():
    g = make_grid(2, 16)
    log_rho = field_from_fourier(g, real_trig_modes((1, 0, 1, 0), cos=1.0) + real_trig_modes((0, 1, 0, 0), sin=0.5))
    sol = solve_ma(MAProblem(flat(g), log_rho), tol=1e-12)
    rms = [row["rms"] for row in sol.history]
    assert sol.newton_iters >= 4
    assert all(b < a for a, b in zip(rms, rms[1:]))
    assert sol.history_csv().splitlines()[0] == "iteration,residual,rms,step,margin"


def test_nyquist_remainder_decays_with_resolution():
    out = []
    for N in (8, 16):
        g = make_grid(2, N)
        log_rho = field_from_fourier(g, real_trig_modes((1, 0, 1, 0), cos=1.0))
        sol = solve_ma(MAProblem(flat(g), log_rho), tol=1e-12)
        assert sol.final_residual < 1e-12
        out.append(sol.unresolved)
    assert out[0] > 1e-4
    assert out[1] < 1e-3 * out[0]


def test_finite_difference_has_no_unresolved_part():
    g = make_grid(1, 16)
    chi, _, log_rho = manufactured(g, 0.0, 1.0)
    sol = solve_ma(MAProblem(chi, log_rho * 2.0, mode="finite_difference"), tol=1e-12)
    assert sol.unresolved == 0.0
    assert sol.to_dict()["unresolved_residual"] == 0.0


def test_problem_validation():
    g = make_grid(1, 8)
    z = ScalarField.constant(g)
    with pytest.raises(ValueError, match="ill-posed"):
        MAProblem(flat(g), z, 0.0, 1.0)
    with pytest.raises(ValueError, match="lam = 0"):
        MAProblem(flat(g), z, 1.0, None)
    with pytest.raises(ValueError, match="positive"):
        MAProblem(FormField.constant(g, [[-1.0]]), z)
    with pytest.raises(ValueError):
        MAProblem.from_rho(flat(g), ScalarField(g, np.zeros((8, 1))))


def test_continuation_flat_family():
    g = make_grid(2, 8)
    A = np.array([[1.0, 0.3j], [-0.3j, 0.5]])
    res = continuation_solve(lambda e: MAProblem(FormField.constant(g, A + e * np.eye(2)), ScalarField.constant(g)), [0.5, 0.2, 0.1])
    assert res.complete
    assert len(res.solutions) == 3
    for e, sol in zip(res.parameters, res.solutions):
        assert sol.C == pytest.approx(8 * np.linalg.det(A + e * np.eye(2)).real, rel=1e-12)


def test_continuation_infeasible_step_returns_prefix():
    g = make_grid(2, 8)
    A = np.diag([1.0, -0.15])
    res = continuation_solve(lambda e: MAProblem(FormField.constant(g, A + e * np.eye(2)), ScalarField.constant(g)), [0.5, 0.2, 0.1, 0.05])
    assert not res.complete
    assert res.parameters == [0.5, 0.2]
    assert res.failure["index"] == 2
    assert res.failure["parameter"] == 0.1


def test_continuation_rejects_nonmonotone_schedule():
    g = make_grid(1, 8)
    with pytest.raises(ValueError, match="monotone"):
        continuation_solve(lambda e: MAProblem(flat(g), ScalarField.constant(g)), [0.5, 0.1, 0.2])


def test_newton_failure_carries_diagnostics():
    g = make_grid(1, 16)
    chi, _, log_rho = manufactured(g, 1.0, 1.0)
    with pytest.raises(MASolverError) as info:
        solve_ma(MAProblem(chi, log_rho * 40.0, 1.0, 1.0), max_newton=1, tol=1e-14)
    assert np.isfinite(info.value.residual)
    assert info.value.history
