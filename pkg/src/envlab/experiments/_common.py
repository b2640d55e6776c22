"""Shared helpers for the experiment runners."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import _diff
from .._reduce import grid_mean
from ..envelope import EnvelopeResult, envelope, make_stencil
from ..forms import default_eta, i_ddbar, integrate_top, morse_integral, top_density
from ..torus import ClassSpec, FormField, ScalarField


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else ``ENVLAB_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("ENVLAB_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return int(threads)


def map_ordered(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def hessian_form(u: ScalarField, mode: str) -> FormField:
    return FormField(u.grid, _diff.hessian(u.data, u.grid.N, mode), is_closed=True, spectral=mode == "spectral")


def zero_field(grid) -> ScalarField:
    return ScalarField.constant(grid, 0.0)


def competitor(spec: ClassSpec, u: ScalarField) -> ScalarField | None:
    """``v - u - sup(v - u)`` for the semipositive witness ``v`` (None if not semipositive)."""
    if not spec.is_semipositive:
        return None
    w = spec.semipositive_witness() - u
    return w - w.max()


def positive_shift(spec: ClassSpec, alpha: FormField, omega: FormField, eps: float) -> ScalarField:
    """A potential ``h`` with ``alpha + eps*omega + i ddbar h > 0``.

    Uses the semipositive witness when available, else ``h = 0``; raises
    ``ValueError`` when neither works.
    """
    grid = alpha.grid
    candidates = []
    if spec.is_semipositive:
        candidates.append(spec.semipositive_witness())
    candidates.append(zero_field(grid))
    for h in candidates:
        chi = alpha + omega * eps + i_ddbar(h, "spectral")
        if chi.is_positive_definite:
            return h
    raise ValueError(f"no positive representative of alpha + eps*omega found at eps={eps}")


def envelope_row(beta: FormField, omega: FormField, eps: float, stencil_r: int = 1) -> tuple[dict, EnvelopeResult, FormField]:
    """Envelope of ``beta + eps*omega`` and the quantities of the contact-set chain."""
    grid = beta.grid
    be = beta + omega * eps
    res = envelope(be, make_stencil(grid.n, stencil_r))
    Hfd = hessian_form(res.u_eps, "finite_difference")
    dens = top_density(be)
    dens, mask = np.broadcast_arrays(dens, res.contact_mask)
    row = {
        "epsilon": eps,
        "converged": res.converged,
        "iterations": res.iterations,
        "residual": res.residual,
        "sup_norm": res.u_eps.sup_norm(),
        "sup_u": res.u_eps.max(),
        "l1_norm": res.u_eps.l1_norm(),
        "ma_total": res.ma_mass(),
        "ma_signed": integrate_top(be + Hfd),
        "beta_eps_top": integrate_top(be),
        "contact_integral": grid_mean(np.where(mask, dens, 0.0)),
        "morse_beta_eps": morse_integral(be, default_eta(grid)),
        "contact_mass_fraction": res.contact_mass_fraction,
        "contact_fraction": float(np.mean(res.contact_mask)),
        "min_eig_fd": res.min_eig,
    }
    return row, res, Hfd
