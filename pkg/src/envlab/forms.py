"""Form calculus on the torus: i ddbar, eigenvalue fields, mixed
discriminants, wedge and Morse-type integrals, torsion constants."""
from __future__ import annotations

import csv
import io
import itertools
from collections import Counter
from dataclasses import dataclass, field
from math import factorial, inf

import numpy as np

from . import _diff
from ._reduce import grid_mean
from .exterior import Form, rank_one_form
from .torus import FormField, Grid, ScalarField


def default_eta(grid: Grid) -> float:
    """Contact/inclusion threshold absorbing O(h^2) noise in eigenvalues."""
    return max(10 * grid.h**2, 1e-6)


def i_ddbar(u: ScalarField, mode: str = "spectral") -> FormField:
    """Matrix field of ``d^2 u / dz_j dzbar_k``.

    ``finite_difference`` uses centered second differences (compact on the
    diagonal, products of centered first differences off it).
    """
    H = _diff.hessian(u.data, u.grid.N, mode)
    return FormField(u.grid, H, is_closed=True, spectral=(mode == "spectral"))


def _as_data(F):
    return F.data if isinstance(F, FormField) else np.asarray(F, dtype=complex)


def generalized_eigenvalues(F, relative_to=None) -> np.ndarray:
    """Pointwise eigenvalues of ``F`` against ``relative_to`` (ascending)."""
    A = _as_data(F)
    if relative_to is None:
        return np.linalg.eigvalsh(A)
    G = _as_data(relative_to)
    A, G = np.broadcast_arrays(A, G)
    L = np.linalg.cholesky(G)
    Linv = np.linalg.inv(L)
    M = Linv @ A @ np.conj(np.swapaxes(Linv, -1, -2))
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    return np.linalg.eigvalsh(M)


def eigen_min(F: FormField, relative_to: FormField | None = None) -> ScalarField:
    """Smallest generalized eigenvalue of ``F`` relative to ``relative_to`` (flat by default)."""
    if relative_to is not None and not relative_to.is_positive_definite:
        raise ValueError("reference form must be positive definite")
    lam = generalized_eigenvalues(F, relative_to)[..., 0]
    return ScalarField(F.grid, lam)


def mixed_disc(matrices):
    """Mixed discriminant of n Hermitian n x n matrices (or stacks of them).

    Normalized so that ``mixed_disc([A] * n) == det A``.  Evaluated by the
    column-assignment formula ``(1/n!) sum_sigma det[A_sigma(1) e_1 | ... ]``
    with repeated arguments grouped.
    """
    mats = [np.asarray(m, dtype=complex) for m in matrices]
    if not mats:
        raise ValueError("need at least one matrix")
    n = mats[0].shape[-1]
    if len(mats) != n:
        raise ValueError(f"mixed discriminant of {n}x{n} matrices needs exactly {n} arguments, got {len(mats)}")
    if any(m.shape[-2:] != (n, n) for m in mats):
        raise ValueError("all arguments must be n x n")
    # power-of-two scaling is exact; it keeps LU pivots away from the
    # subnormal range where the complex determinant's phase becomes NaN
    exps = {}
    for i, m in enumerate(mats):
        e = _pow2_exponent(m)
        exps[i] = e
        mats[i] = np.ldexp(m.real, -e) + 1j * np.ldexp(m.imag, -e)
    mats = np.broadcast_arrays(*mats)
    # identical objects are grouped so that e.g. (A, A, B) needs 3 dets, not 6
    labels = []
    reps = []
    for m in matrices:
        for lab, r in enumerate(reps):
            if r is m:
                labels.append(lab)
                break
        else:
            reps.append(m)
            labels.append(len(reps) - 1)
    first = {lab: labels.index(lab) for lab in set(labels)}
    counts = Counter(itertools.permutations(labels))
    total = 0.0
    for assign, mult in sorted(counts.items()):
        cols = [mats[first[lab]][..., :, c] for c, lab in enumerate(assign)]
        total = total + mult * np.linalg.det(np.stack(cols, axis=-1))
    val = np.ldexp(np.real(total) / factorial(n), sum(exps.values()))
    return float(val) if np.ndim(val) == 0 else val


def _pow2_exponent(m) -> int:
    """Exponent ``e`` with ``max|m| * 2**-e`` in ``[0.5, 1)`` (0 for a zero matrix)."""
    peak = float(np.max(np.abs(m))) if np.size(m) else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return 0
    return int(np.frexp(peak)[1])


def _det(m):
    """Determinant of a (stack of) complex matrices, safe for tiny entries."""
    m = np.asarray(m)
    e = _pow2_exponent(m)
    scaled = np.ldexp(m.real, -e) + 1j * np.ldexp(m.imag, -e) if np.iscomplexobj(m) else np.ldexp(m, -e)
    return np.ldexp(np.real(np.linalg.det(scaled)), m.shape[-1] * e)


def wedge_density(factors) -> np.ndarray:
    """Pointwise density of ``F_1^{p_1} ^ ... ^ F_m^{p_m}`` (powers summing to n)."""
    factors = list(factors)
    if not factors:
        raise ValueError("no factors")
    n = None
    mats = []
    for F, p in factors:
        data = _as_data(F)
        n = data.shape[-1]
        if p < 0:
            raise ValueError("negative power")
        mats.extend([data] * int(p))
    if len(mats) != n:
        raise ValueError(f"powers sum to {len(mats)}, expected n={n}")
    scale = 2**n * factorial(n)
    if len({id(m) for m in mats}) == 1:
        return scale * _det(mats[0])
    return scale * np.asarray(mixed_disc(mats))


def wedge_integral(factors) -> float:
    """``int_X F_1^{p_1} ^ ... ^ F_m^{p_m}`` as a deterministic grid mean."""
    return grid_mean(wedge_density(factors))


def top_density(F: FormField) -> np.ndarray:
    return wedge_density([(F, F.grid.n)])


def integrate_top(F: FormField) -> float:
    return wedge_integral([(F, F.grid.n)])


def morse_integral(F: FormField, eta: float = 0.0, relative_to: FormField | None = None) -> float:
    """``int_{X(F, 0)} F^n`` with ``X(F, 0) = {eigen_min(F) >= -eta}``.

    Included points contribute their actual (unclipped) density.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    dens = top_density(F)
    if eta == inf:
        return grid_mean(dens)
    lam = generalized_eigenvalues(F, relative_to)[..., 0]
    dens, lam = np.broadcast_arrays(dens, lam)
    return grid_mean(np.where(lam >= -eta, dens, 0.0))


@dataclass
class MixedIntegralTable:
    """``I(j, k) = int alpha_eps^j ^ alpha^k ^ omega^{n-j-k}`` for one epsilon."""

    epsilon: float
    n: int
    entries: dict = field(default_factory=dict)

    def __getitem__(self, jk):
        j, k = jk
        if j < 0 or k < 0:
            return 0.0  # negative exterior powers vanish
        return self.entries[(j, k)]

    def rows(self):
        return [{"epsilon": self.epsilon, "j": j, "k": k, "value": v} for (j, k), v in sorted(self.entries.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["epsilon", "j", "k", "value"], lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({**r, "epsilon": repr(r["epsilon"]), "value": repr(r["value"])})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "n": self.n, "entries": self.rows()}


def mixed_integral_table(alpha_eps: FormField, alpha: FormField, omega: FormField, epsilon: float) -> MixedIntegralTable:
    n = alpha.grid.n
    table = MixedIntegralTable(epsilon=float(epsilon), n=n)
    for j in range(n + 1):
        for k in range(n + 1 - j):
            table.entries[(j, k)] = wedge_integral([(alpha_eps, j), (alpha, k), (omega, n - j - k)])
    return table


@dataclass
class TorsionBounds:
    """Sampled estimate of the constant bounding the torsion terms of ``omega``."""

    M_hat: float
    per_inequality: dict
    samples: int
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"M_hat": self.M_hat, "per_inequality": self.per_inequality, "samples": self.samples}


def torsion_forms(omega: FormField) -> dict:
    """The (p,p)-forms bounded by multiples of omega^p: name -> (form, p)."""
    n, N = omega.grid.n, omega.grid.N
    w = Form.from_matrix(omega.data, N)
    out = {}
    for k in range(1, n):
        out[f"i_ddbar_omega^{k}"] = (w.power(k).i_ddbar("spectral"), k + 1)
    if n >= 3:
        out["i_d_omega^dbar_omega"] = (w.d("spectral").wedge(w.dbar("spectral")) * 1j, 3)
    return out


def estimate_M(omega: FormField, samples: int = 16, seed: int = 0) -> TorsionBounds:
    """Smallest M with ``-M omega^p <= T <= M omega^p`` on sampled tests.

    For top-degree T the comparison is of densities.  Lower-degree
    ``(p, p)``-forms are wedged with ``n - p`` random constant rank-one
    positive (1,1)-forms per sample; the inequality is linear in M, so the
    smallest passing M is the worst ratio ``|T ^ G| / (omega^p ^ G)``.
    The sample stream is prefix-stable, so M_hat never decreases with more
    samples.
    """
    if not omega.spectral:
        raise ValueError("estimate_M needs omega with trigonometric-polynomial entries (spectral mode)")
    if not omega.is_positive_definite:
        raise ValueError("omega must be positive definite")
    n, N = omega.grid.n, omega.grid.N
    rng = np.random.default_rng(seed)
    w = Form.from_matrix(omega.data, N)
    forms = torsion_forms(omega)
    per = {name: 0.0 for name in forms}
    history = []
    draws = [rng.standard_normal((n, 2)) for _ in range(samples * max(n - 1, 1))]
    xis = [d[:, 0] + 1j * d[:, 1] for d in draws]
    for s in range(samples):
        for name, (T, p) in forms.items():
            extra = n - p
            if extra == 0:
                if s > 0:
                    continue
                num = T.top_density()
                den = w.power(p).top_density()
            else:
                G = None
                for e in range(extra):
                    g = rank_one_form(xis[s * (n - 1) + e], n, N)
                    G = g if G is None else G.wedge(g)
                num = T.wedge(G).top_density()
                den = w.power(p).wedge(G).top_density()
            ratio = float(np.max(np.abs(np.real(num)) / np.real(den)))
            per[name] = max(per[name], ratio)
        history.append(max(per.values(), default=0.0))
    M = max(per.values(), default=0.0)
    return TorsionBounds(M_hat=M, per_inequality=per, samples=samples, history=history)
