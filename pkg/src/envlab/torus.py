"""Discretized flat complex tori, scalar fields and (1,1)-form fields.

Conventions (fixed once, used everywhere):

* real coordinates ``(x_1, y_1, ..., x_n, y_n)`` on ``[0, 1)^{2n}``,
  ``z_j = x_j + i y_j``, all axes periodic;
* ``d/dz = (d/dx - i d/dy)/2``; the matrix of ``i ddbar u`` has entries
  ``d^2 u / dz_j dzbar_k``;
* ``i dz_j ^ dzbar_j = 2 dx_j ^ dy_j`` so the top power of a form with
  matrix ``A`` has density ``2^n n! det A`` against Lebesgue measure;
* integrals of top forms are grid means (the torus has volume 1).

Field arrays are stored on a compact shape: an axis along which the data is
constant is kept with length 1.  ``ScalarField.values`` expands to the full
``N^{2n}`` grid in lexicographic order when needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _diff

CONVENTIONS_VERSION = "envlab-conventions/1"


class PositivityError(ValueError):
    """A form that must be positive definite is not.

    Carries the grid multi-index of the worst point and the eigenvalue there.
    """

    def __init__(self, message, point, eigenvalue):
        super().__init__(f"{message}: min eigenvalue {eigenvalue:.6g} at grid index {point}")
        self.point = tuple(int(i) for i in point)
        self.eigenvalue = float(eigenvalue)


@dataclass(frozen=True)
class Grid:
    """Periodic grid on the fundamental domain of the flat torus C^n / Z^{2n}."""

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"complex dimension n={self.n} out of range (1, 2 or 3)")
        if not isinstance(self.N, (int, np.integer)) or self.N < 8 or self.N % 2:
            raise ValueError(f"resolution N={self.N} must be an even integer >= 8")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.ndim

    @property
    def size(self) -> int:
        return self.N ** self.ndim

    def coordinate(self, axis: int) -> np.ndarray:
        """Coordinate values along ``axis``, shaped for broadcasting."""
        view = [1] * self.ndim
        view[axis] = self.N
        return (np.arange(self.N) * self.h).reshape(view)

    def compact_shape(self, axes: Iterable[int]) -> tuple:
        axes = set(axes)
        return tuple(self.N if a in axes else 1 for a in range(self.ndim))

    def check_compact(self, shape) -> tuple:
        shape = tuple(shape)
        if len(shape) != self.ndim or any(s not in (1, self.N) for s in shape):
            raise ValueError(f"array shape {shape} is not compatible with grid {self.shape}")
        return shape

    def expand(self, data) -> np.ndarray:
        """Broadcast compact data to the full grid shape (read-only view)."""
        data = np.asarray(data)
        return np.broadcast_to(data, self.shape + data.shape[self.ndim:])

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N}


def make_grid(n: int, N: int) -> Grid:
    """Build the periodic grid with ``N`` points per real axis in dimension ``n``."""
    return Grid(int(n), int(N))


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real function on the grid.

    ``modes`` is the finite Fourier description when the field is a known
    trigonometric polynomial (``None`` for raw sampled data).
    """

    grid: Grid
    data: np.ndarray
    modes: tuple | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 0:
            data = data.reshape((1,) * self.grid.ndim)
        self.grid.check_compact(data.shape)
        if not np.all(np.isfinite(data)):
            raise ValueError("scalar field has non-finite values")
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def constant(cls, grid: Grid, c: float = 0.0) -> "ScalarField":
        modes = ((tuple([0] * grid.ndim), complex(c)),) if c else ()
        return cls(grid, np.full((1,) * grid.ndim, float(c)), modes)

    @classmethod
    def from_values(cls, grid: Grid, values) -> "ScalarField":
        """Wrap raw samples (full lexicographic vector, full array or compact array)."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            if values.size != grid.size:
                raise ValueError(f"expected {grid.size} values, got {values.size}")
            values = values.reshape(grid.shape)
        return cls(grid, values)

    @property
    def values(self) -> np.ndarray:
        """Full lexicographic value vector of length ``N^{2n}``."""
        return np.array(self.grid.expand(self.data)).ravel()

    @property
    def degree(self) -> int | None:
        if self.modes is None:
            return None
        return max((max(abs(k) for k in kv) for kv, _ in self.modes), default=0)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.data)))

    def max(self) -> float:
        return float(np.max(self.data))

    def min(self) -> float:
        return float(np.min(self.data))

    def l1_norm(self) -> float:
        from ._reduce import grid_mean

        return grid_mean(np.abs(self.data))

    def mean(self) -> float:
        from ._reduce import grid_mean

        return grid_mean(self.data)

    def _combine(self, other, op, modes):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return ScalarField(self.grid, op(self.data, other.data), modes)
        return ScalarField(self.grid, op(self.data, float(other)), None)

    def __add__(self, other):
        modes = None
        if isinstance(other, ScalarField) and self.modes is not None and other.modes is not None:
            modes = self.modes + other.modes
        return self._combine(other, np.add, modes)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        modes = None if self.modes is None else tuple((k, -a) for k, a in self.modes)
        return ScalarField(self.grid, -self.data, modes)

    def __mul__(self, s):
        if isinstance(s, ScalarField):
            return self._combine(s, np.multiply, None)
        s = float(s)
        modes = None if self.modes is None else tuple((k, s * a) for k, a in self.modes)
        return ScalarField(self.grid, self.data * s, modes)

    __rmul__ = __mul__

    def shifted(self, axis: int, steps: int = 1) -> "ScalarField":
        """Translate by ``steps`` grid cells along ``axis`` (periodic)."""
        return ScalarField(self.grid, np.roll(self.data, steps, axis=axis) if self.data.shape[axis] > 1 else self.data)

    def fourier_coefficients(self) -> np.ndarray:
        """Normalized DFT coefficients on the compact shape."""
        return np.fft.fftn(self.data) / self.data.size

    def to_dict(self) -> dict:
        out = {"schema": "envlab.field/1", "kind": "scalar", "grid": self.grid.to_dict()}
        if self.modes is not None:
            out["encoding"] = "fourier"
            out["modes"] = [{"k": list(map(int, k)), "re": float(a.real), "im": float(a.imag)} for k, a in self.modes]
        else:
            out["encoding"] = "values"
            out["shape"] = list(self.data.shape)
            out["values"] = [float(x) for x in self.data.ravel()]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarField":
        grid = make_grid(**d["grid"])
        if d.get("encoding") == "fourier":
            return field_from_fourier(grid, [(m["k"], complex(m["re"], m.get("im", 0.0))) for m in d["modes"]])
        values = np.asarray(d["values"], dtype=float)
        shape = tuple(d.get("shape", grid.shape))
        return cls(grid, values.reshape(shape))


def real_trig_modes(k: Sequence[int], cos: float = 0.0, sin: float = 0.0):
    """Conjugate mode pair for ``cos*cos(2 pi k.x) + sin*sin(2 pi k.x)``."""
    k = tuple(int(x) for x in k)
    kneg = tuple(-x for x in k)
    if all(x == 0 for x in k):
        return [(k, complex(cos))]
    a = complex(cos, -sin) / 2
    return [(k, a), (kneg, a.conjugate())]


def field_from_fourier(grid: Grid, modes) -> ScalarField:
    """Evaluate the real trigonometric polynomial ``sum a_k exp(2 pi i k.x)``.

    Raises ``ValueError`` on aliasing (``|k_a| >= N/2``), on frequency vectors of
    the wrong length, and when the amplitudes do not produce a real field.
    """
    clean = []
    for k, a in modes:
        k = tuple(int(x) for x in k)
        if len(k) != grid.ndim:
            raise ValueError(f"frequency vector {k} has length {len(k)}, expected {grid.ndim}")
        if any(2 * abs(x) >= grid.N for x in k):
            raise ValueError(f"frequency {k} aliases on a grid with N={grid.N} (need |k| < N/2)")
        clean.append((k, complex(a)))
    axes = sorted({ax for k, _ in clean for ax, x in enumerate(k) if x != 0})
    shape = grid.compact_shape(axes)
    acc = np.zeros(shape, dtype=complex)
    coords = [grid.coordinate(ax) if ax in axes else 0.0 for ax in range(grid.ndim)]
    for k, a in clean:
        phase = sum(2 * np.pi * kx * coords[ax] for ax, kx in enumerate(k) if kx)
        acc = acc + a * np.exp(1j * phase)
    scale = 1.0 + sum(abs(a) for _, a in clean)
    if clean and np.max(np.abs(acc.imag)) > 1e-12 * scale:
        raise ValueError("Fourier amplitudes do not come in conjugate pairs: field is not real")
    return ScalarField(grid, acc.real, tuple(clean))


class FormField:
    """Field of Hermitian n x n matrices representing a real (1,1)-form.

    ``data`` has the compact grid shape followed by ``(n, n)``.  Matrices are
    symmetrized on construction.
    """

    def __init__(self, grid: Grid, data, *, is_closed: bool = False, spectral: bool = True):
        data = np.asarray(data, dtype=complex)
        n = grid.n
        if data.shape == (n, n):
            data = data.reshape((1,) * grid.ndim + (n, n))
        if data.shape[-2:] != (n, n):
            raise ValueError(f"form data must end in ({n}, {n}), got {data.shape}")
        grid.check_compact(data.shape[:-2])
        data = 0.5 * (data + np.conj(np.swapaxes(data, -1, -2)))
        if not np.all(np.isfinite(data)):
            raise ValueError("form field has non-finite entries")
        self.grid = grid
        self.data = _readonly(data)
        self.is_closed = bool(is_closed)
        self.spectral = bool(spectral)

    @classmethod
    def constant(cls, grid: Grid, A) -> "FormField":
        return cls(grid, np.asarray(A, dtype=complex), is_closed=True)

    @property
    def is_constant(self) -> bool:
        return all(s == 1 for s in self.data.shape[:-2])

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.data)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(self.eigenvalues[..., 0]))

    @cached_property
    def is_positive_definite(self) -> bool:
        return self.min_eigenvalue > 0

    def require_positive(self, what: str = "form"):
        lam = self.eigenvalues[..., 0]
        if not np.min(lam) > 0:
            idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
            full = tuple(i if s > 1 else 0 for i, s in zip(idx, lam.shape))
            raise PositivityError(f"{what} is not positive definite", full, float(np.min(lam)))
        return self

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    def matrices(self) -> np.ndarray:
        """Full ``(N^{2n}, n, n)`` array in lexicographic point order."""
        n = self.grid.n
        return np.array(self.grid.expand(self.data)).reshape(-1, n, n)

    def _binary(self, other, sign):
        if not isinstance(other, FormField):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("forms live on different grids")
        return FormField(
            self.grid,
            self.data + sign * other.data,
            is_closed=self.is_closed and other.is_closed,
            spectral=self.spectral and other.spectral,
        )

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __mul__(self, s):
        s = float(s)
        return FormField(self.grid, self.data * s, is_closed=self.is_closed, spectral=self.spectral)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_dict(self) -> dict:
        return {
            "schema": "envlab.field/1",
            "kind": "form",
            "grid": self.grid.to_dict(),
            "encoding": "matrices",
            "shape": list(self.data.shape),
            "re": self.data.real.ravel().tolist(),
            "im": self.data.imag.ravel().tolist(),
            "is_closed": self.is_closed,
            "spectral": self.spectral,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FormField":
        grid = make_grid(**d["grid"])
        shape = tuple(d["shape"])
        data = (np.asarray(d["re"], float) + 1j * np.asarray(d["im"], float)).reshape(shape)
        return cls(grid, data, is_closed=d.get("is_closed", False), spectral=d.get("spectral", True))


@dataclass(frozen=True, eq=False)
class ClassSpec:
    """Representative ``alpha = A + i ddbar f`` of a Bott-Chern class."""

    A: np.ndarray
    f: ScalarField

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        n = self.f.grid.n
        if A.shape != (n, n):
            raise ValueError(f"class matrix must be {n}x{n}, got {A.shape}")
        if np.max(np.abs(A - A.conj().T)) > 1e-12:
            raise ValueError("class matrix is not Hermitian")
        object.__setattr__(self, "A", _readonly(0.5 * (A + A.conj().T)))

    @property
    def grid(self) -> Grid:
        return self.f.grid

    @property
    def is_semipositive(self) -> bool:
        """True when ``A >= 0``, so ``v = -f`` makes ``alpha + i ddbar v = A >= 0``."""
        return bool(np.min(np.linalg.eigvalsh(self.A)) >= -1e-14)

    def semipositive_witness(self) -> ScalarField:
        if not self.is_semipositive:
            raise ValueError("class matrix is not positive semidefinite")
        return -self.f

    def volume(self) -> float:
        """``int alpha^n = 2^n n! det A`` (independent of f)."""
        from math import factorial

        n = self.grid.n
        return float(2**n * factorial(n) * np.linalg.det(self.A).real)


def make_class_form(grid: Grid, spec: ClassSpec) -> FormField:
    """``alpha = A + i ddbar f`` with the Hessian taken spectrally."""
    if spec.grid != grid:
        raise ValueError("class spec lives on a different grid")
    H = _diff.hessian(spec.f.data, grid.N, "spectral")
    return FormField(grid, spec.A + H, is_closed=True)


@dataclass(frozen=True)
class FlatMetric:
    pass


@dataclass(frozen=True, eq=False)
class GauduchonMetric:
    """``omega = I + i ddbar rho`` (closed, so in particular pluriclosed and Gauduchon)."""

    rho: ScalarField


@dataclass(frozen=True)
class GenericTerm:
    """Perturbation ``coeff * trig(2 pi k.x)`` in entry ``(j, l)``, mirrored Hermitian."""

    entry: tuple
    k: tuple
    coeff: complex
    kind: str = "cos"


@dataclass(frozen=True)
class GenericMetric:
    terms: tuple
    amplitude: float = 1.0


def make_hermitian_metric(grid: Grid, recipe="flat") -> FormField:
    """Build a Hermitian metric from a recipe and verify positivity.

    Raises ``PositivityError`` naming the worst point when the result is not
    positive definite.
    """
    n = grid.n
    if recipe == "flat" or isinstance(recipe, FlatMetric):
        return FormField.constant(grid, np.eye(n))
    if isinstance(recipe, GauduchonMetric):
        if recipe.rho.grid != grid:
            raise ValueError("rho lives on a different grid")
        H = _diff.hessian(recipe.rho.data, grid.N, "spectral")
        return FormField(grid, np.eye(n) + H, is_closed=True).require_positive("gauduchon metric")
    if isinstance(recipe, GenericMetric):
        axes = sorted({a for t in recipe.terms for a, x in enumerate(t.k) if x})
        shape = grid.compact_shape(axes)
        P = np.zeros(shape + (n, n), dtype=complex)
        for t in recipe.terms:
            j, l = (int(x) for x in t.entry)
            if len(t.k) != grid.ndim or any(2 * abs(x) >= grid.N for x in t.k):
                raise ValueError(f"bad perturbation frequency {t.k}")
            phase = sum(2 * np.pi * int(kx) * grid.coordinate(a) for a, kx in enumerate(t.k) if kx)
            trig = np.cos(phase) if t.kind == "cos" else np.sin(phase)
            c = complex(t.coeff)
            if j == l:
                if abs(c.imag) > 0:
                    raise ValueError("diagonal perturbation coefficients must be real")
                P[..., j, j] += c.real * trig
            else:
                P[..., j, l] += c * trig
                P[..., l, j] += c.conjugate() * trig
        closed = recipe.amplitude == 0 or not recipe.terms
        omega = FormField(grid, np.eye(n) + recipe.amplitude * P, is_closed=closed)
        return omega.require_positive("generic metric")
    raise ValueError(f"unknown metric recipe {recipe!r}")
