"""Quasi-psh envelopes by a monotone wide-stencil obstacle scheme.

The discrete envelope of a form ``beta`` under obstacle ``g`` is the fixed
point of the explicit Euler map

    u <- min(g, u + tau * lam(u)),   tau = h^2 / 4,

where ``lam(u)(x)`` is the minimum over stencil directions ``v`` of

    [beta(x)(v, vbar) + (d2_v u + d2_{iv} u)(x) / 4] / |v|^2

and ``d2_w`` is the periodic second difference quotient along the real
vector of ``w`` with step ``h``.  The fixed point is found by policy
iteration on ``max(u - g, max_v(-lam_v(u))) = 0`` and certified by the Euler
residual.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _diff
from ._reduce import grid_mean
from .forms import default_eta
from .torus import FormField, Grid, ScalarField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StencilSet:
    """Complex directions ``v`` with integer real and imaginary parts in [-r, r].

    Directions are kept up to multiplication by the units {1, i, -1, -i}.
    """

    n: int
    r: int
    directions: tuple

    @property
    def norms2(self) -> np.ndarray:
        return np.array([sum(abs(c) ** 2 for c in v) for v in self.directions])

    def real_shift(self, v) -> np.ndarray:
        return np.array([x for c in v for x in (int(round(c.real)), int(round(c.imag)))])

    def shifts(self):
        """Pairs of integer shift vectors for ``v`` and ``i v``."""
        out = []
        for v in self.directions:
            out.append((self.real_shift(v), self.real_shift([1j * c for c in v])))
        return out

    def __len__(self):
        return len(self.directions)


def make_stencil(n: int, r: int = 1) -> StencilSet:
    if r < 1:
        raise ValueError("stencil radius must be >= 1")
    comps = [complex(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)]
    seen = set()
    dirs = []
    for v in itertools.product(comps, repeat=n):
        if all(c == 0 for c in v):
            continue
        orbit = [tuple(u * c for c in v) for u in (1, 1j, -1, -1j)]
        key = max(tuple(x for c in o for x in (c.real, c.imag)) for o in orbit)
        if key in seen:
            continue
        seen.add(key)
        dirs.append(tuple(complex(key[2 * j], key[2 * j + 1]) for j in range(n)))
    dirs.sort(key=lambda v: (sum(abs(c) ** 2 for c in v), tuple(-x for c in v for x in (c.real, c.imag))))
    return StencilSet(n=n, r=r, directions=tuple(dirs))


@dataclass
class EnvelopeResult:
    u_eps: ScalarField
    iterations: int
    residual: float
    converged: bool
    contact_mask: np.ndarray
    ma_density: ScalarField
    eta: float
    method: str = "policy"
    min_eig: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def contact_mass_fraction(self) -> float:
        dens = np.broadcast_to(self.ma_density.data, np.broadcast_shapes(self.ma_density.data.shape, self.contact_mask.shape))
        mask = np.broadcast_to(self.contact_mask, dens.shape)
        total = grid_mean(dens)
        if total <= 0:
            return 1.0
        return grid_mean(np.where(mask, dens, 0.0)) / total

    def ma_mass(self) -> float:
        return self.ma_density.mean()

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "eta": self.eta,
            "method": self.method,
            "sup_u": self.u_eps.max(),
            "sup_norm": self.u_eps.sup_norm(),
            "l1_norm": self.u_eps.l1_norm(),
            "ma_mass": self.ma_mass(),
            "contact_fraction": float(np.mean(self.contact_mask)),
            "contact_mass_fraction": self.contact_mass_fraction,
            "min_eig": self.min_eig,
            **self.info,
        }


class _Operator:
    """Directional second-difference operator on a compact shape."""

    def __init__(self, beta: FormField, stencil: StencilSet, shape):
        grid = beta.grid
        self.grid = grid
        self.shape = tuple(shape)
        h = grid.h
        active = [a for a, s in enumerate(self.shape) if s > 1]
        self.active = active
        self.tau = h * h / 4
        self.dirs = []
        self.floor = None  # directions along which nothing varies contribute beta(v, vbar) only
        null_min = np.inf
        B = beta.data
        for v, (w, w2), nv in zip(stencil.directions, stencil.shifts(), stencil.norms2):
            vv = np.asarray(v)
            bv = np.real(np.einsum("...jk,j,k->...", B, vv, vv.conj())) / nv
            bv = np.broadcast_to(bv, self.shape)
            pw = tuple(int(w[a]) for a in active)
            pw2 = tuple(int(w2[a]) for a in active)
            if not any(pw) and not any(pw2):
                null_min = min(null_min, float(np.min(bv)))
                self.floor = bv.copy() if self.floor is None else np.minimum(self.floor, bv)
                continue
            self.dirs.append((np.ascontiguousarray(bv), pw, pw2, 1.0 / (4 * h * h * nv)))
        if null_min < -1e-12:
            raise ValueError(
                "form is negative along a direction in which all data is invariant; the envelope is -infinity"
            )

    def _roll(self, u, s, sign):
        if not any(s):
            return u
        return np.roll(u, tuple(-sign * x for x in s), axis=tuple(self.active))

    def lam_each(self, u):
        for bv, w, w2, c in self.dirs:
            nb = self._roll(u, w, 1) + self._roll(u, w, -1) + self._roll(u, w2, 1) + self._roll(u, w2, -1)
            yield bv + c * (nb - 4 * u)

    def lam_min(self, u):
        out = None
        arg = None
        for d, val in enumerate(self.lam_each(u)):
            if out is None:
                out = val.copy()
                arg = np.zeros(self.shape, dtype=np.int64)
            else:
                better = val < out
                out = np.where(better, val, out)
                arg = np.where(better, d, arg)
        if self.floor is not None:
            out = self.floor.copy() if out is None else np.minimum(out, self.floor)
            if arg is None:
                arg = np.zeros(self.shape, dtype=np.int64)
        return out, arg


def _euler_step(op, u, g, fixed):
    lam, _ = op.lam_min(u)
    new = u + op.tau * lam
    if g is not None:
        new = np.minimum(g, new)
    if fixed is not None:
        mask, vals = fixed
        new = np.where(mask, vals, new)
    return new


def _assemble(op, control, g, fixed):
    P = int(np.prod(op.shape))
    idx = np.arange(P).reshape(op.shape)
    rows, cols, vals = [], [], []
    rhs = np.zeros(P)
    flat_ctrl = control.ravel()
    ident = flat_ctrl < 0
    id_rows = np.flatnonzero(ident)
    rows.append(id_rows)
    cols.append(id_rows)
    vals.append(np.ones(id_rows.size))
    if g is not None:
        ob = flat_ctrl == -1
        rhs[ob] = np.broadcast_to(g, op.shape).ravel()[ob]
    if fixed is not None:
        mask, fv = fixed
        fm = np.broadcast_to(mask, op.shape).ravel()
        rhs[fm] = np.broadcast_to(fv, op.shape).ravel()[fm]
    for d, (bv, w, w2, c) in enumerate(op.dirs):
        sel = flat_ctrl == d
        if not sel.any():
            continue
        r = np.flatnonzero(sel)
        rows.append(r)
        cols.append(r)
        vals.append(np.full(r.size, 4.0))
        for s, sign in ((w, 1), (w, -1), (w2, 1), (w2, -1)):
            nb = op._roll(idx, s, sign).ravel()[sel]
            rows.append(r)
            cols.append(nb)
            vals.append(-np.ones(r.size))
        rhs[r] = bv.ravel()[r] / c
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(P, P)
    )
    return A, rhs


def _linear_solve(A, rhs, x0):
    P = A.shape[0]
    if P <= 60000:
        x = spla.spsolve(A.tocsc(), rhs)
    else:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.bicgstab(A, rhs, x0=x0, rtol=1e-13, atol=0.0, M=M, maxiter=2000)
        if info != 0:
            raise np.linalg.LinAlgError(f"bicgstab did not converge (info={info})")
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular policy matrix")
    return x


def _policy_iteration(op, g, fixed, u0, max_policy):
    u = u0.copy()
    control = None
    for it in range(1, max_policy + 1):
        best = np.full(op.shape, -np.inf)
        arg = np.full(op.shape, -2, dtype=np.int64)
        prev_val = np.full(op.shape, -np.inf)
        if g is not None:
            best = u - g
            arg[:] = -1
            if control is not None:
                prev_val = np.where(control == -1, best, prev_val)
        for d, lam in enumerate(op.lam_each(u)):
            better = -lam > best
            best = np.where(better, -lam, best)
            arg = np.where(better, d, arg)
            if control is not None:
                prev_val = np.where(control == d, -lam, prev_val)
        if control is not None:
            # keep the previous choice on (near) ties so the policy cannot cycle
            ttol = 1e-12 * (1 + np.abs(best))
            arg = np.where(best <= prev_val + ttol, control, arg)
        if fixed is not None:
            arg = np.where(fixed[0], -2, arg)
        if control is not None and np.array_equal(arg, control):
            return u, it - 1, True
        control = arg
        A, rhs = _assemble(op, control, g, fixed)
        try:
            new = _linear_solve(A, rhs, u.ravel()).reshape(op.shape)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            log.debug("policy iteration hit a singular policy (%s); falling back to Euler", exc)
            return u, it, False
        # policies can keep flipping on round-off ties once the values settle
        settled = np.max(np.abs(new - u)) <= 1e-14 * (1.0 + np.max(np.abs(new)))
        u = new
        if settled:
            return u, it, True
    return u, max_policy, False


def _solve(op, g, fixed, tol, max_iter, method, max_policy=200):
    u = np.zeros(op.shape) if g is None else np.broadcast_to(g, op.shape)
    if fixed is not None:
        u = np.where(fixed[0], fixed[1], u)
    u = np.array(u, dtype=float)
    iterations = 0
    if method == "policy":
        u, iterations, ok = _policy_iteration(op, g, fixed, u, max_policy)
    elif method != "euler":
        raise ValueError(f"unknown method {method!r}")
    residual = np.inf
    while iterations < max_iter:
        new = _euler_step(op, u, g, fixed)
        residual = float(np.max(np.abs(new - u)))
        u = new
        iterations += 1
        if residual < tol:
            break
    return u, iterations, residual


def ma_measure(beta_eps: FormField, u: ScalarField) -> ScalarField:
    """Monge-Ampere density ``2^n n! prod max(lambda_j, 0)`` of ``beta_eps + i ddbar u``.

    The Hessian is the assembled centered finite-difference one.
    """
    grid = beta_eps.grid
    n = grid.n
    M = beta_eps.data + _diff.hessian(u.data, grid.N, "finite_difference")
    lam = np.linalg.eigvalsh(M)
    dens = 2**n * factorial(n) * np.prod(np.maximum(lam, 0.0), axis=-1)
    return ScalarField(grid, dens)


def _default_tol(beta):
    return 1e-8 * (1 + beta.sup_norm())


def obstacle_envelope(
    beta: FormField,
    obstacle: ScalarField | None = None,
    stencil: StencilSet | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    method: str = "policy",
    eta: float | None = None,
) -> EnvelopeResult:
    """Largest discrete ``beta``-psh function lying below ``obstacle`` (0 by default)."""
    grid = beta.grid
    stencil = stencil or make_stencil(grid.n, 1)
    if stencil.n != grid.n:
        raise ValueError("stencil dimension does not match the grid")
    tol = _default_tol(beta) if tol is None else tol
    max_iter = 200 * grid.N**2 if max_iter is None else max_iter
    gdata = np.zeros((1,) * grid.ndim) if obstacle is None else obstacle.data
    shape = np.broadcast_shapes(beta.data.shape[:-2], gdata.shape)
    op = _Operator(beta, stencil, shape)
    g = np.broadcast_to(gdata, shape)
    u, iters, residual = _solve(op, g, None, tol, max_iter if method == "euler" else max(max_iter, 1), method)
    u_field = ScalarField(grid, u)
    eta = default_eta(grid) if eta is None else eta
    contact = u >= g - eta
    dens = ma_measure(beta, u_field)
    M = beta.data + _diff.hessian(u, grid.N, "finite_difference")
    min_eig = float(np.min(np.linalg.eigvalsh(M)[..., 0]))
    return EnvelopeResult(
        u_eps=u_field,
        iterations=iters,
        residual=residual,
        converged=bool(residual < tol),
        contact_mask=contact,
        ma_density=dens,
        eta=eta,
        method=method,
        min_eig=min_eig,
        info={"tol": tol, "stencil_r": stencil.r, "directions": len(stencil)},
    )


def envelope(
    beta_eps: FormField,
    stencil: StencilSet | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    method: str = "policy",
    eta: float | None = None,
) -> EnvelopeResult:
    """``u_eps = sup{phi in PSH(X, beta_eps), phi <= 0}`` on the grid.

    ``method="policy"`` (default) runs policy iteration and then Euler
    sweeps until the Euler residual drops below ``tol``; ``method="euler"``
    runs the explicit map alone from ``u = 0``.  A result that exhausts
    ``max_iter`` is returned with ``converged=False``.
    """
    return obstacle_envelope(beta_eps, None, stencil, tol, max_iter, method, eta)


def shifted_envelope(
    positive_form: FormField,
    u: ScalarField,
    h: ScalarField,
    stencil: StencilSet | None = None,
    **kwargs,
) -> ScalarField:
    """``-u + h + sup{phi in PSH(X, positive_form), phi <= u - h}``.

    With ``positive_form = alpha + eps*omega + i ddbar h`` this equals the
    envelope of ``beta + eps*omega`` for ``beta = alpha + i ddbar u``.
    """
    res = obstacle_envelope(positive_form, u - h, stencil, **kwargs)
    return res.u_eps - u + h


def euler_map(beta: FormField, u: ScalarField, stencil: StencilSet | None = None, obstacle: ScalarField | None = None) -> ScalarField:
    """One application of the Euler map (exposed for monotonicity checks)."""
    grid = beta.grid
    stencil = stencil or make_stencil(grid.n, 1)
    gdata = np.zeros((1,) * grid.ndim) if obstacle is None else obstacle.data
    shape = np.broadcast_shapes(beta.data.shape[:-2], gdata.shape, u.data.shape)
    op = _Operator(beta, stencil, shape)
    return ScalarField(grid, _euler_step(op, np.broadcast_to(u.data, shape).astype(float), np.broadcast_to(gdata, shape), None))


def stencil_lambda_min(beta: FormField, u: ScalarField, stencil: StencilSet | None = None) -> ScalarField:
    grid = beta.grid
    stencil = stencil or make_stencil(grid.n, 1)
    shape = np.broadcast_shapes(beta.data.shape[:-2], u.data.shape)
    op = _Operator(beta, stencil, shape)
    lam, _ = op.lam_min(np.broadcast_to(u.data, shape).astype(float))
    return ScalarField(grid, lam)


def second_difference_bound(u: ScalarField, stencil: StencilSet | None = None) -> float:
    """max over points and stencil directions of |d2_v u| (a discrete C^{1,1} proxy)."""
    grid = u.grid
    stencil = stencil or make_stencil(grid.n, 1)
    best = 0.0
    for w, w2 in stencil.shifts():
        for s in (w, w2):
            axes = tuple(a for a in range(grid.ndim) if s[a] and u.data.shape[a] > 1)
            if not axes:
                continue
            sh = tuple(int(s[a]) for a in axes)
            plus = np.roll(u.data, tuple(-x for x in sh), axis=axes)
            minus = np.roll(u.data, sh, axis=axes)
            d2 = (plus - 2 * u.data + minus) / grid.h**2
            best = max(best, float(np.max(np.abs(d2))))
    return best


def envelope_via_exponential(
    beta_eps: FormField,
    delta_schedule,
    h: ScalarField | None = None,
    mode: str = "finite_difference",
    tol: float = 1e-7,
    return_all: bool = False,
    substep_ratio: float = 0.8,
    c: float | None = None,
):
    """Envelope oracle through ``(beta_eps + i ddbar u)^n = c exp(u/delta) dV``.

    Any fixed ``c > 0`` gives the same limit as ``delta -> 0``.  On the
    contact set ``u_delta`` sits near ``delta * log(density / c)``, so the
    default ``c`` is the geometric mean of the top density of ``beta_eps``
    over ``{beta_eps >= 0}``, which centers that offset.

    Each ``delta`` is solved by Newton's method in the variable
    ``phi = u - h`` where ``h`` makes ``beta_eps + i ddbar h`` positive
    definite.  Between scheduled values the continuation takes geometric
    substeps of ratio at least ``substep_ratio`` and warm-starts from a
    linear extrapolation of the two previous solutions.  Returns the iterate
    at the last scheduled ``delta`` (or one per scheduled value with
    ``return_all``).
    """
    from .ma import MAProblem, MASolverError, solve_ma

    grid = beta_eps.grid
    deltas = [float(d) for d in delta_schedule]
    if not deltas or any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta schedule must be strictly decreasing positives")
    h = ScalarField.constant(grid, 0.0) if h is None else h
    chi = beta_eps + FormField(grid, _diff.hessian(h.data, grid.N, mode), is_closed=True, spectral=mode == "spectral")
    chi.require_positive("beta_eps + i ddbar h")
    targets = set(deltas)
    path = [deltas[0]]
    for d in deltas[1:]:
        steps = max(1, int(np.ceil(np.log(d / path[-1]) / np.log(substep_ratio))))
        start = path[-1]
        path.extend(start * (d / start) ** (np.arange(1, steps + 1) / steps))
        path[-1] = d
    C = _morse_geometric_density(beta_eps) if c is None else float(c)
    if not C > 0:
        raise ValueError("normalizing constant c must be positive")
    prev = []
    out = []
    for d in path:
        problem = MAProblem(chi=chi, log_rho=h * (1.0 / d), lam=1.0 / d, C=C, mode=mode)
        guesses = []
        if len(prev) == 2:
            (d0, p0), (d1, p1) = prev
            guesses.append(p1 + (p1 - p0) * ((d - d1) / (d1 - d0)))
        if prev:
            guesses.append(prev[-1][1])
        guesses.append(None)
        sol = None
        for guess in guesses:
            try:
                sol = solve_ma(problem, phi0=guess, tol=tol)
                break
            except MASolverError as exc:
                err = exc
        if sol is None:
            raise MASolverError(f"exponential envelope failed at delta={d}: {err}", delta=d) from err
        prev = (prev + [(d, sol.phi)])[-2:]
        if d in targets:
            out.append(sol.phi + h)
    return out if return_all else out[-1]


def _morse_geometric_density(beta_eps: FormField) -> float:
    n = beta_eps.grid.n
    lam = beta_eps.eigenvalues
    dens = 2**n * factorial(n) * np.prod(lam, axis=-1)
    keep = (lam[..., 0] >= 0) & (dens > 0)
    if not keep.any():
        return float(2**n * factorial(n))
    return float(np.exp(np.mean(np.log(dens[keep]))))


def balayage_check(
    beta_eps: FormField,
    result: EnvelopeResult,
    center,
    radius: float,
    stencil: StencilSet | None = None,
    tol: float = 1e-9,
    tol_eq: float | None = None,
) -> dict:
    """Solve the homogeneous Dirichlet problem on a coordinate ball inside
    the non-contact set and compare with the envelope.

    Fields are expanded to the full grid, so this is meant for small grids.
    Raises ``ValueError`` if the closed ball meets ``{u_eps >= -eta}``.
    """
    grid = beta_eps.grid
    stencil = stencil or make_stencil(grid.n, 1)
    tol_eq = 10 * grid.h**2 if tol_eq is None else tol_eq
    center = np.asarray(center, dtype=float)
    if center.shape != (grid.ndim,):
        raise ValueError(f"center must have {grid.ndim} coordinates")
    dist2 = 0.0
    for a in range(grid.ndim):
        dx = np.abs(grid.coordinate(a) - center[a])
        dx = np.minimum(dx, 1 - dx)
        dist2 = dist2 + dx**2
    ball = np.broadcast_to(dist2 <= radius**2, grid.shape)
    if not ball.any():
        raise ValueError("ball contains no grid points")
    u = np.array(grid.expand(result.u_eps.data), dtype=float)
    if np.any(u[ball] >= -result.eta):
        raise ValueError("ball is not contained in the non-contact set {u_eps < -eta}")
    op = _Operator(beta_eps, stencil, grid.shape)
    fixed = (~ball, u)
    psi, iters, residual = _solve(op, None, fixed, 1e-13, 10 * grid.N**2, "policy")
    diff = (psi - u)[ball]
    return {
        "points": int(ball.sum()),
        "iterations": iters,
        "residual": residual,
        "sup_diff": float(np.max(diff)),
        "inf_diff": float(np.min(diff)),
        "sup_abs_diff": float(np.max(np.abs(diff))),
        "psi_ge_u": bool(np.min(diff) >= -tol),
        "psi_eq_u": bool(np.max(np.abs(diff)) <= tol_eq),
        "tol": tol,
        "tol_eq": tol_eq,
    }
