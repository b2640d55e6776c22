"""Numerical laboratory for quasi-psh envelopes, Monge-Ampere measures and
Morse-type integrals of (1,1)-classes on flat complex tori."""
from .envelope import (
    EnvelopeResult,
    StencilSet,
    balayage_check,
    envelope,
    envelope_via_exponential,
    ma_measure,
    make_stencil,
)
from .forms import (
    MixedIntegralTable,
    TorsionBounds,
    eigen_min,
    estimate_M,
    i_ddbar,
    integrate_top,
    mixed_disc,
    mixed_integral_table,
    morse_integral,
    wedge_integral,
)
from .ma import MAProblem, MASolution, MASolverError, continuation_solve, solve_ma
from .torus import (
    CONVENTIONS_VERSION,
    ClassSpec,
    FlatMetric,
    FormField,
    GauduchonMetric,
    GenericMetric,
    GenericTerm,
    Grid,
    PositivityError,
    ScalarField,
    field_from_fourier,
    make_class_form,
    make_grid,
    make_hermitian_metric,
)

__version__ = "0.1.0"
