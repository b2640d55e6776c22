"""Damped Newton solver for complex Monge-Ampere equations on the torus.

Solves ``(chi + i ddbar phi)^n = C exp(lam * phi) rho dV`` in the
log-determinant form

    R(phi, C) = log det(chi + H phi) + log(2^n n!) - log C - lam*phi - log rho = 0,

where ``H phi`` is the complex Hessian.  With ``C`` unknown (``lam = 0``)
``log C`` is an extra unknown and ``mean(phi) = 0`` closes the system.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from math import factorial, log

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _diff
from ._reduce import grid_mean
from .torus import FormField, ScalarField

log_ = logging.getLogger(__name__)


class MASolverError(RuntimeError):
    """Newton failure; carries the last positivity margin and residual."""

    def __init__(self, message, margin=float("nan"), residual=float("nan"), delta=None, history=None):
        super().__init__(message)
        self.margin = margin
        self.residual = residual
        self.delta = delta
        self.history = history or []


@dataclass
class MAProblem:
    """``(chi + i ddbar phi)^n = C exp(lam phi) rho dV``.

    ``C=None`` means the constant is unknown (then ``lam`` must be 0 and the
    solution is normalized by ``mean(phi) = 0``).  ``rho`` is stored as
    ``log_rho``; use :meth:`from_rho` to pass a density.
    """

    chi: FormField
    log_rho: ScalarField
    lam: float = 0.0
    C: float | None = None
    mode: str = "spectral"

    def __post_init__(self):
        _diff.check_mode(self.mode)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.C is None and self.lam != 0:
            raise ValueError("an unknown constant requires lam = 0")
        if self.C is not None and self.lam == 0:
            raise ValueError("a fixed constant with lam = 0 is ill-posed; leave C unknown")
        if self.C is not None and not self.C > 0:
            raise ValueError("C must be positive")
        if self.log_rho.grid != self.chi.grid:
            raise ValueError("rho and chi live on different grids")
        if not np.all(np.isfinite(self.log_rho.data)):
            raise ValueError("rho must be positive and finite")
        self.chi.require_positive("background form chi")

    @classmethod
    def from_rho(cls, chi, rho: ScalarField, lam=0.0, C=None, mode="spectral"):
        if not np.all(rho.data > 0):
            raise ValueError("rho must be positive everywhere")
        return cls(chi, ScalarField(rho.grid, np.log(rho.data)), lam, C, mode)

    @property
    def unknown_constant(self) -> bool:
        return self.C is None


@dataclass
class MASolution:
    phi: ScalarField
    C: float
    newton_iters: int
    final_residual: float
    positivity_margin: float
    history: list = field(default_factory=list)
    unresolved: float = 0.0

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "newton_iters": self.newton_iters,
            "final_residual": self.final_residual,
            "positivity_margin": self.positivity_margin,
            "unresolved_residual": self.unresolved,
            "phi_sup": self.phi.sup_norm(),
            "phi_mean": self.phi.mean(),
            "history": self.history,
        }

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual", "rms", "step", "margin"])
        for row in self.history:
            w.writerow([row["iteration"], repr(row["residual"]), repr(row["rms"]), repr(row["step"]), repr(row["margin"])])
        return buf.getvalue()


# largest compact grid for which the finite-difference Jacobian is factorized directly
_DIRECT_LIMIT = 40000


class _State:
    def __init__(self, problem: MAProblem, shape):
        self.p = problem
        self.shape = shape
        self.grid = problem.chi.grid
        self.chi = np.broadcast_to(problem.chi.data, shape + problem.chi.data.shape[-2:])
        self.log_rho = np.broadcast_to(problem.log_rho.data, shape)
        n = self.grid.n
        self.log_norm = log(2**n * factorial(n))
        self.sym = _diff.hessian_symbol(shape, self.grid.N, problem.mode)
        self.P = int(np.prod(shape))
        self.direct = problem.mode == "finite_difference" and self.P <= _DIRECT_LIMIT
        self.hmats = _diff.fd_hessian_matrices(shape, self.grid.N) if self.direct else None

    def hess(self, v):
        return _diff.hessian(v, self.grid.N, self.p.mode)

    def evaluate(self, phi, logC):
        M = self.chi + self.hess(phi)
        lam = np.linalg.eigvalsh(M)
        margin = float(np.min(lam[..., 0]))
        if not margin > 0:
            return margin, None, None
        logdet = np.sum(np.log(lam), axis=-1)
        R = logdet + self.log_norm - logC - self.p.lam * phi - self.log_rho
        if self.p.mode == "spectral":
            R = _diff.drop_nyquist(R, self.grid.N)
        return margin, R, M

    def unresolved(self, phi, logC):
        """Sup of the residual part carried by Nyquist modes."""
        M = self.chi + self.hess(phi)
        R = np.sum(np.log(np.linalg.eigvalsh(M)), axis=-1) + self.log_norm - logC - self.p.lam * phi - self.log_rho
        if self.p.mode != "spectral":
            return 0.0
        return float(np.max(np.abs(R - _diff.drop_nyquist(R, self.grid.N))))


def _newton_step(st: _State, M, R, rtol):
    shape = st.shape
    P = int(np.prod(shape))
    Minv = np.linalg.inv(M)
    # rows are scaled by 1/tr(M^-1) so the frozen-coefficient preconditioner
    # stays meaningful when M is nearly degenerate somewhere
    w = np.real(np.trace(Minv, axis1=-2, axis2=-1)) + st.p.lam
    a = Minv / w[..., None, None]
    lam_w = st.p.lam / w
    inv_w = 1.0 / w
    n = M.shape[-1]
    abar = np.array([[grid_mean(a[..., j, k].real) + 1j * grid_mean(a[..., j, k].imag) for k in range(n)] for j in range(n)])
    symbol = np.real(np.einsum("kj,...jk->...", abar, st.sym)) - grid_mean(lam_w)
    zero = np.abs(symbol) < 1e-12 * max(1.0, float(np.max(np.abs(symbol))))
    inv_symbol = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, symbol))
    unknown = st.p.unknown_constant
    mean_inv_w = grid_mean(np.broadcast_to(inv_w, shape))

    def L(v):
        Hv = st.hess(v)
        return np.real(np.einsum("...kj,...jk->...", a, Hv)) - lam_w * v

    def prec_field(r):
        return np.fft.ifftn(inv_symbol * np.fft.fftn(r)).real

    if unknown:
        def matvec(x):
            v = x[:P].reshape(shape)
            top = L(v) - x[P] * inv_w
            return np.concatenate([top.ravel(), [grid_mean(v)]])

        def precvec(y):
            r = y[:P].reshape(shape)
            dc = -grid_mean(r) / mean_inv_w
            v = prec_field(r + dc * inv_w) + y[P]
            return np.concatenate([v.ravel(), [dc]])

        size = P + 1
        rhs = np.concatenate([(-R * inv_w).ravel(), [0.0]])
    else:
        def matvec(x):
            return L(x.reshape(shape)).ravel()

        def precvec(y):
            return prec_field(y.reshape(shape)).ravel()

        size = P
        rhs = (-R * inv_w).ravel()
    if st.direct:
        x = _direct_solve(st, a, lam_w, inv_w, rhs, unknown)
        if unknown:
            return x[:P].reshape(shape), float(x[P])
        return x.reshape(shape), 0.0
    if st.p.mode == "spectral":
        # Jacobian of the residual taken modulo Nyquist modes: unscaled rows,
        # projected, with the row scaling moved into the preconditioner
        N = st.grid.N
        w_full = np.broadcast_to(w, shape)
        inv_full = np.broadcast_to(inv_w, shape)
        scaled_matvec, scaled_precvec = matvec, precvec

        def matvec(x):
            y = scaled_matvec(x)
            y[:P] = _diff.drop_nyquist(y[:P].reshape(shape) * w_full, N).ravel()
            return y

        def precvec(y):
            z = np.array(y, dtype=float)
            z[:P] = (z[:P].reshape(shape) * inv_full).ravel()
            return scaled_precvec(z)

        rhs = np.concatenate([-R.ravel(), [0.0]]) if unknown else -R.ravel()
    A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    Mp = spla.LinearOperator((size, size), matvec=precvec, dtype=float)
    x, info = spla.gmres(A, rhs, rtol=rtol, atol=0.0, restart=60, maxiter=40, M=Mp)
    log_.debug("gmres info=%s rel=%.3e", info, np.linalg.norm(A.matvec(x) - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if info < 0 or not np.all(np.isfinite(x)):
        raise MASolverError("linearized system could not be solved")
    v = x[:P].reshape(shape)
    if st.p.mode == "spectral":
        v = _diff.drop_nyquist(v, st.grid.N)
    return v, (float(x[P]) if unknown else 0.0)


def _direct_solve(st, a, lam_w, inv_w, rhs, unknown):
    P = st.P
    n = a.shape[-1]
    J = None
    for j in range(n):
        for k in range(n):
            coef = np.broadcast_to(a[..., k, j], st.shape).ravel()
            term = sp.diags(coef) @ st.hmats[j][k]
            J = term if J is None else J + term
    J = sp.csr_matrix(J.real) - sp.diags(np.broadcast_to(lam_w, st.shape).ravel())
    if unknown:
        col = -np.broadcast_to(inv_w, st.shape).ravel()[:, None]
        row = np.full((1, P), 1.0 / P)
        J = sp.bmat([[J, sp.csr_matrix(col)], [sp.csr_matrix(row), None]], format="csc")
    x = spla.spsolve(sp.csc_matrix(J), rhs)
    if not np.all(np.isfinite(x)):
        raise MASolverError("singular linearization")
    return x


def _roundoff_floor(M, phi, N, margin):
    # log det cannot be resolved below the rounding error of the smallest
    # eigenvalue of chi + i ddbar phi (second differences amplify by N^2)
    scale = 1.0 + float(np.max(np.abs(M))) + N * N * float(np.max(np.abs(phi)))
    return min(1e-3, 1e2 * np.finfo(float).eps * scale / margin)


def _rms(R):
    return float(np.sqrt(grid_mean(R * R)))


def solve_ma(
    problem: MAProblem,
    phi0: ScalarField | None = None,
    tol: float = 1e-10,
    max_newton: int = 60,
    max_halvings: int = 30,
) -> MASolution:
    """Damped Newton iteration.

    Each step is halved (at most ``max_halvings`` times) until the new
    potential keeps ``chi + i ddbar phi`` positive definite and the
    root-mean-square residual decreases.  Convergence is declared on the
    sup of the residual, against ``tol`` or the rounding floor
    of ``log det M``, ``1e2 * eps * (1 + |M| + N^2 |phi|) / margin`` capped
    at 1e-3, if that is larger (only relevant for nearly degenerate ``M``).

    In spectral mode the residual is taken modulo Nyquist modes, which the
    Hessian cannot reach; their sup at the final iterate is reported as
    ``unresolved`` and decays spectrally with ``N`` for smooth data.
    Raises :class:`MASolverError` otherwise.
    """
    grid = problem.chi.grid
    shapes = [problem.chi.data.shape[:-2], problem.log_rho.data.shape]
    if phi0 is not None:
        if phi0.grid != grid:
            raise ValueError("initial guess lives on a different grid")
        shapes.append(phi0.data.shape)
    shape = np.broadcast_shapes(*shapes)
    st = _State(problem, shape)
    phi = np.zeros(shape) if phi0 is None else np.array(np.broadcast_to(phi0.data, shape), dtype=float)
    if problem.unknown_constant:
        phi = phi - grid_mean(phi)
    margin, R, M = st.evaluate(phi, 0.0)
    if R is None:
        raise MASolverError("initial guess is not admissible", margin=margin)
    if problem.unknown_constant:
        logC = grid_mean(R)
    else:
        logC = log(problem.C)
    margin, R, M = st.evaluate(phi, logC)
    res = float(np.max(np.abs(R)))
    history = [{"iteration": 0, "residual": res, "rms": _rms(R), "step": 0.0, "margin": margin}]
    it = 0
    while res >= max(tol, _roundoff_floor(M, phi, grid.N, margin)):
        if it >= max_newton:
            raise MASolverError(f"no convergence in {max_newton} Newton steps", margin, res, history=history)
        it += 1
        v, dc = _newton_step(st, M, R, rtol=max(1e-13, min(1e-3, 0.1 * res)))
        merit = _rms(R)
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = phi + t * v
            tm, tR, tM = st.evaluate(trial, logC + t * dc)
            if tR is not None and _rms(tR) < merit:
                tres = float(np.max(np.abs(tR)))
                break
            t *= 0.5
        else:
            raise MASolverError("damping could not restore positivity and residual decrease", margin, res, history=history)
        phi, logC, margin, R, M, res = trial, logC + t * dc, tm, tR, tM, tres
        if problem.unknown_constant:
            phi = phi - grid_mean(phi)
        history.append({"iteration": it, "residual": res, "rms": _rms(R), "step": t, "margin": margin})
    return MASolution(ScalarField(grid, phi), float(np.exp(logC)), it, res, margin, history, st.unresolved(phi, logC))


@dataclass
class ContinuationResult:
    solutions: list
    parameters: list
    failure: dict | None = None

    @property
    def complete(self) -> bool:
        return self.failure is None


def continuation_solve(family, schedule, tol: float = 1e-10, **kwargs) -> ContinuationResult:
    """Solve ``family(t)`` along a monotone schedule with warm starts.

    ``family`` maps a parameter to an :class:`MAProblem`.  A failed warm
    start is retried cold; a failure at step ``k`` returns the solved prefix
    and a failure record instead of raising.
    """
    sched = [float(t) for t in schedule]
    if len(sched) > 1:
        diffs = np.diff(sched)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("schedule must be strictly monotone")
    sols, done = [], []
    prev = None
    for k, t in enumerate(sched):
        try:
            problem = family(t)
            try:
                sol = solve_ma(problem, phi0=prev, tol=tol, **kwargs)
            except MASolverError:
                if prev is None:
                    raise
                sol = solve_ma(problem, phi0=None, tol=tol, **kwargs)
        except (MASolverError, ValueError) as exc:
            failure = {"index": k, "parameter": t, "error": str(exc), "type": type(exc).__name__}
            failure["margin"] = getattr(exc, "margin", None)
            return ContinuationResult(sols, done, failure)
        sols.append(sol)
        done.append(t)
        prev = sol.phi
    return ContinuationResult(sols, done, None)
