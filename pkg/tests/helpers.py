"""Shared test data."""
import numpy as np

from envlab import ClassSpec, FormField, field_from_fourier, make_class_form, make_grid
from envlab.torus import real_trig_modes


def cos_form(N: int, eps: float = 0.05) -> FormField:
    """n = 1 form with density 1 + eps + 2 cos(2 pi x1)."""
    g = make_grid(1, N)
    x = g.coordinate(0)
    return FormField(g, ((1 + eps) + 2 * np.cos(2 * np.pi * x))[..., None, None])


def cos_class(n: int, N: int, a: float, A=None) -> ClassSpec:
    """A + i ddbar f with f = a * sum_j cos(2 pi x_j)."""
    g = make_grid(n, N)
    modes = []
    for j in range(n):
        k = [0] * (2 * n)
        k[2 * j] = 1
        modes += real_trig_modes(k, cos=a)
    return ClassSpec(np.eye(n) if A is None else np.asarray(A), field_from_fourier(g, modes))


def class_form(spec: ClassSpec) -> FormField:
    return make_class_form(spec.grid, spec)
