from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from envlab import (
    FormField,
    ScalarField,
    balayage_check,
    envelope,
    envelope_via_exponential,
    i_ddbar,
    ma_measure,
    make_grid,
    make_stencil,
)
from envlab.envelope import euler_map, second_difference_bound, shifted_envelope, stencil_lambda_min
from helpers import class_form, cos_class, cos_form
from oracles import psor_obstacle_1d


@pytest.mark.parametrize("n,r,count", [(1, 1, 2), (1, 2, 6), (2, 1, 20)])
def test_stencil_sizes(n, r, count):
    s = make_stencil(n, r)
    assert len(s) == count
    # no two directions differ by a unit
    keys = {tuple(np.round(np.array(v) * u, 12)) for v in s.directions for u in (1, 1j, -1, -1j)}
    assert len(keys) == 4 * count


def test_stencil_rejects_bad_radius():
    with pytest.raises(ValueError):
        make_stencil(2, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_positive_form_has_zero_envelope(n):
    g = make_grid(n, 8)
    rng = np.random.default_rng(n)
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    res = envelope(FormField.constant(g, B @ B.conj().T + 0.1 * np.eye(n)))
    assert res.converged
    assert res.u_eps.sup_norm() == 0.0
    assert res.contact_mask.all()


def test_one_dimensional_envelope_matches_psor():
    N, M = 64, 1024
    xf = np.arange(M) / M
    ref, _ = psor_obstacle_1d(1.05 + 2 * np.cos(2 * np.pi * xf))
    res = envelope(cos_form(N))
    assert res.converged
    err = np.max(np.abs(res.u_eps.data.ravel() - ref[:: M // N]))
    assert err <= 5 / N**2


def test_contact_set_carries_the_mass():
    for beta in (cos_form(64), class_form(cos_class(2, 32, 0.4)) + FormField.constant(make_grid(2, 32), np.eye(2) / 16)):
        res = envelope(beta)
        assert res.converged
        assert res.u_eps.sup_norm() > 0
        assert res.contact_mass_fraction >= 0.98
        off = np.broadcast_to(res.ma_density.data, res.contact_mask.shape)[~res.contact_mask]
        assert off.size == 0 or off.mean() <= 0.02 * res.ma_mass() * res.contact_mask.size / max(off.size, 1)


def test_ma_measure_examples():
    g = make_grid(2, 8)
    A = np.array([[2.0, 0.5j], [-0.5j, 1.0]])
    dens = ma_measure(FormField.constant(g, A), ScalarField.constant(g))
    assert np.allclose(dens.data, 8 * np.linalg.det(A).real)
    assert np.all(ma_measure(FormField.constant(g, -np.eye(2)), ScalarField.constant(g)).data == 0.0)


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_envelope_monotone_in_eps(e1, e2):
    lo, hi = sorted((e1, e2))
    u_lo = envelope(cos_form(32, lo)).u_eps.data
    u_hi = envelope(cos_form(32, hi)).u_eps.data
    assert np.all(u_lo <= 0.0)
    assert np.all(u_hi >= u_lo - 1e-12)


@given(st.integers(0, 1), st.integers(1, 31))
def test_envelope_commutes_with_translation(axis, steps):
    g = make_grid(1, 32)
    x = g.coordinate(0)
    data = np.broadcast_to((1.05 + 2 * np.cos(2 * np.pi * x) + 0.5 * np.sin(4 * np.pi * x))[..., None, None], (32, 1, 1, 1))
    beta = FormField(g, data)
    u = envelope(beta).u_eps
    moved = FormField(g, np.roll(beta.data, steps, axis=axis))
    assert np.max(np.abs(envelope(moved).u_eps.data - u.shifted(axis, steps).data)) < 1e-10


@given(arrays(np.float64, (16, 16), elements=st.floats(-1, 0)), arrays(np.float64, (16, 16), elements=st.floats(0, 1)))
def test_euler_map_is_order_preserving(u, gap):
    g = make_grid(1, 16)
    beta = FormField(g, (1.05 + 2 * np.cos(2 * np.pi * g.coordinate(0)))[..., None, None])
    lo = ScalarField(g, u)
    hi = ScalarField(g, u + gap)
    assert np.all(euler_map(beta, lo).data <= euler_map(beta, hi).data + 1e-12)


def test_fixed_point_of_euler_map():
    beta = cos_form(32)
    res = envelope(beta)
    assert np.max(np.abs(euler_map(beta, res.u_eps).data - res.u_eps.data)) < 1e-8
    lam = stencil_lambda_min(beta, res.u_eps).data
    off = ~res.contact_mask
    assert np.all(lam[off] > -1e-6)


def test_second_differences_stay_bounded():
    bounds = [second_difference_bound(envelope(cos_form(N)).u_eps) for N in (32, 64, 128)]
    assert max(bounds) <= 1.5 * min(bounds)


def test_comparison_lower_bound_semipositive():
    spec = cos_class(2, 32, 0.4)
    alpha = class_form(spec)
    v = spec.semipositive_witness()
    for eps in (0.25, 1 / 16):
        u = envelope(alpha + FormField.constant(spec.grid, eps * np.eye(2))).u_eps
        lower = v - v.max()
        assert np.all(u.data - np.broadcast_to(lower.data, u.data.shape) >= -1e-9)


def test_shifted_formulation_agrees():
    spec = cos_class(1, 64, 0.1)
    g = spec.grid
    alpha = class_form(spec)
    eps = 0.05
    u = ScalarField(g, 0.02 * np.cos(4 * np.pi * g.coordinate(0)))
    beta_eps = alpha + i_ddbar(u) + FormField.constant(g, [[eps]])
    direct = envelope(beta_eps).u_eps
    h = spec.semipositive_witness()
    positive = alpha + i_ddbar(h) + FormField.constant(g, [[eps]])
    via = shifted_envelope(positive, u, h)
    assert np.max(np.abs(via.data - direct.data)) <= 10 * g.h**2


def test_non_converged_is_flagged():
    res = envelope(cos_form(32), method="euler", max_iter=3)
    assert not res.converged
    assert res.iterations == 3
    assert res.residual > 0


def test_policy_and_euler_agree():
    beta = cos_form(32)
    a = envelope(beta).u_eps.data
    b = envelope(beta, method="euler", tol=1e-13).u_eps.data
    assert np.max(np.abs(a - b)) < 1e-9


def test_balayage_on_noncontact_ball():
    beta = cos_form(64)
    res = envelope(beta)
    rep = balayage_check(beta, res, [0.5, 0.5], 0.08)
    assert rep["psi_ge_u"] and rep["psi_eq_u"]
    assert rep["inf_diff"] >= -1e-9


def test_balayage_rejects_contact_ball():
    g = make_grid(1, 16)
    beta = FormField.constant(g, [[1.0]])
    with pytest.raises(ValueError, match="non-contact"):
        balayage_check(beta, envelope(beta), [0.5, 0.5], 0.2)


def test_exponential_route_constant_form_is_constant():
    g = make_grid(2, 8)
    beta = FormField.constant(g, 0.7 * np.eye(2))
    u = envelope_via_exponential(beta, [0.2, 0.1])
    assert np.ptp(g.expand(u.data)) < 1e-10


def test_exponential_route_positive_form_goes_to_zero():
    g = make_grid(1, 16)
    x = g.coordinate(0)
    beta = FormField(g, (2 + np.cos(2 * np.pi * x))[..., None, None])
    sols = envelope_via_exponential(beta, [0.2, 0.1, 0.05, 0.02], return_all=True)
    norms = [s.sup_norm() for s in sols]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 0.1


def test_exponential_route_approaches_envelope():
    beta = cos_form(64)
    target = envelope(beta).u_eps
    h = ScalarField(beta.grid, (2 / np.pi**2) * np.cos(2 * np.pi * beta.grid.coordinate(0)))
    sols = envelope_via_exponential(beta, [0.2, 0.1, 0.05, 0.02], h=h, mode="spectral", return_all=True)
    dist = [np.max(np.abs(s.data - target.data)) for s in sols]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_exponential_route_rejects_bad_schedule():
    with pytest.raises(ValueError):
        envelope_via_exponential(cos_form(16), [0.1, 0.2])


def test_top_density_factor():
    g = make_grid(3, 8)
    dens = ma_measure(FormField.constant(g, np.eye(3)), ScalarField.constant(g))
    assert np.allclose(dens.data, 2**3 * factorial(3))
