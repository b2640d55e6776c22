"""Small exterior algebra of (p, q)-forms with grid-valued coefficients.

A form is a dict mapping ``(I, J)`` (sorted index tuples of ``dz`` and
``dzbar`` factors) to coefficient arrays, meaning
``sum c_{IJ} dz_I ^ dzbar_J``.  Only what the torsion and
integration-by-parts checks need is implemented: wedge, d, dbar and the
conversion of top-degree coefficients to densities.
"""
from __future__ import annotations

from math import factorial

import numpy as np

from . import _diff


def _sort_sign(idx):
    idx = list(idx)
    sign = 1
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            if idx[a] > idx[b]:
                sign = -sign
    return sign, tuple(sorted(idx))


class Form:
    def __init__(self, n: int, N: int, terms=None):
        self.n = n
        self.N = N
        self.terms = {} if terms is None else dict(terms)

    @classmethod
    def from_matrix(cls, data, N: int) -> "Form":
        """(1,1)-form ``i sum A_jk dz_j ^ dzbar_k`` from a matrix field."""
        data = np.asarray(data, dtype=complex)
        n = data.shape[-1]
        terms = {((j,), (k,)): 1j * data[..., j, k] for j in range(n) for k in range(n)}
        return cls(n, N, terms)

    @classmethod
    def function(cls, n: int, N: int, values) -> "Form":
        return cls(n, N, {((), ()): np.asarray(values, dtype=complex)})

    def _new(self, terms):
        return Form(self.n, self.N, terms)

    def __add__(self, other):
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out[key] + c if key in out else c
        return self._new(out)

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, s):
        return self._new({key: s * c for key, c in self.terms.items()})

    __rmul__ = __mul__

    def wedge(self, other: "Form") -> "Form":
        out = {}
        for (I1, J1), c1 in self.terms.items():
            for (I2, J2), c2 in other.terms.items():
                if set(I1) & set(I2) or set(J1) & set(J2):
                    continue
                # dz_I1 dzb_J1 dz_I2 dzb_J2 -> dz_I1 dz_I2 dzb_J1 dzb_J2
                sign = -1 if (len(J1) * len(I2)) % 2 else 1
                sI, I = _sort_sign(I1 + I2)
                sJ, J = _sort_sign(J1 + J2)
                val = (sign * sI * sJ) * (c1 * c2)
                out[(I, J)] = out[(I, J)] + val if (I, J) in out else val
        return self._new(out)

    def power(self, k: int) -> "Form":
        result = Form.function(self.n, self.N, 1.0)
        for _ in range(k):
            result = result.wedge(self)
        return result

    def d(self, mode: str = "spectral") -> "Form":
        """Holomorphic differential: sum_j d_j c dz_j ^ (...)."""
        out = {}
        for (I, J), c in self.terms.items():
            for j in range(self.n):
                if j in I:
                    continue
                s, I2 = _sort_sign((j,) + I)
                val = s * _diff.partial(np.broadcast_to(c, np.shape(c)), self.N, j, False, mode)
                key = (I2, J)
                out[key] = out[key] + val if key in out else val
        return self._new(out)

    def dbar(self, mode: str = "spectral") -> "Form":
        """Antiholomorphic differential: sum_j dbar_j c dzbar_j ^ (...)."""
        out = {}
        for (I, J), c in self.terms.items():
            for j in range(self.n):
                if j in J:
                    continue
                s, J2 = _sort_sign((j,) + J)
                s *= -1 if len(I) % 2 else 1
                val = s * _diff.partial(np.broadcast_to(c, np.shape(c)), self.N, j, True, mode)
                key = (I, J2)
                out[key] = out[key] + val if key in out else val
        return self._new(out)

    def i_ddbar(self, mode: str = "spectral") -> "Form":
        return self.dbar(mode).d(mode) * 1j

    def coefficient_sup(self) -> float:
        return max((float(np.max(np.abs(c))) for c in self.terms.values()), default=0.0)

    def top_density(self):
        """Density against Lebesgue measure of the (n, n) component."""
        n = self.n
        full = tuple(range(n))
        c = self.terms.get((full, full), 0.0)
        kappa = (1j**n) * (-1) ** (n * (n - 1) // 2)
        return np.asarray(c * (2**n) / kappa)


def wedge_density_bruteforce(matrices, N: int = 8):
    """Top density of the wedge of (1,1)-forms via the exterior algebra.

    Used as an oracle for the mixed-discriminant path.
    """
    forms = [Form.from_matrix(np.asarray(m, complex), N) for m in matrices]
    out = forms[0]
    for f in forms[1:]:
        out = out.wedge(f)
    return out.top_density()


def rank_one_form(xi, n: int, N: int) -> Form:
    xi = np.asarray(xi, dtype=complex)
    return Form.from_matrix(np.outer(xi, xi.conj()), N)


def top_density_factor(n: int) -> float:
    return float(2**n * factorial(n))
