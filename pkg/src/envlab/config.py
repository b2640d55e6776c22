"""Strict experiment configuration (YAML).

Every field is specified by finite data; scalar fields are lists of real
Fourier modes.  Unknown keys are rejected and errors name the offending key
path together with its line in the file.

Schema
------
.. code-block:: yaml

    experiment: morse_gap            # see ``envlab list``
    grid: {n: 2, N: 64}
    class:
      A: [[1, 0], [0, 1]]            # entries real or [re, im]
      f:                             # f = sum cos*cos(2 pi k.x) + sin*sin(2 pi k.x)
        - {k: [1, 0, 0, 0], cos: 0.15}
    metric:
      kind: flat                     # flat | gauduchon | generic
      rho: []                        # gauduchon: modes of rho
      amplitude: 1.0                 # generic
      terms:                         # generic: coeff * trig(2 pi k.x) in entry (j, l)
        - {entry: [0, 1], k: [1, 0, 1, 0], re: 0.5, im: 0.5, kind: sin}
    probes: [[], [{k: [0, 0, 1, 0], sin: 0.05}]]
    epsilon: {eps0: 0.5, count: 6}   # or {values: [...]}
    tolerances: {...}
    options: {...}
    seed: 0

A mode is ``{k, cos, sin}`` (real trigonometric pair) or ``{k, re, im}``
(one complex exponential; the caller supplies the conjugate partner).
"""
from __future__ import annotations

import hashlib
import json
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .torus import (
    ClassSpec,
    GauduchonMetric,
    GenericMetric,
    GenericTerm,
    Grid,
    ScalarField,
    field_from_fourier,
    make_grid,
    real_trig_modes,
)


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class Mode(_Strict):
    k: list[int]
    cos: float | None = None
    sin: float | None = None
    re: float | None = None
    im: float | None = None

    @model_validator(mode="after")
    def _one_encoding(self):
        trig = self.cos is not None or self.sin is not None
        expo = self.re is not None or self.im is not None
        if trig and expo:
            raise ValueError("a mode uses either {cos, sin} or {re, im}, not both")
        if not trig and not expo:
            raise ValueError("a mode needs cos/sin or re/im amplitudes")
        return self

    def pairs(self):
        if self.re is not None or self.im is not None:
            return [(tuple(self.k), complex(self.re or 0.0, self.im or 0.0))]
        return real_trig_modes(self.k, self.cos or 0.0, self.sin or 0.0)


def modes_to_field(grid: Grid, modes) -> ScalarField:
    pairs = [p for m in modes for p in m.pairs()]
    return field_from_fourier(grid, pairs)


class GridConfig(_Strict):
    n: int
    N: int

    @model_validator(mode="after")
    def _valid(self):
        try:
            make_grid(self.n, self.N)
        except ValueError as exc:
            raise ValueError(f"grid invariant violated: {exc}") from None
        return self


class ClassConfig(_Strict):
    A: list[list[float | tuple[float, float]]]
    f: list[Mode] = Field(default_factory=list)

    def matrix(self) -> np.ndarray:
        return np.array([[complex(*x) if isinstance(x, tuple) else complex(x) for x in row] for row in self.A])


class TermConfig(_Strict):
    entry: tuple[int, int]
    k: list[int]
    re: float
    im: float = 0.0
    kind: Literal["cos", "sin"] = "cos"


class MetricConfig(_Strict):
    kind: Literal["flat", "gauduchon", "generic"] = "flat"
    rho: list[Mode] = Field(default_factory=list)
    amplitude: float = 1.0
    terms: list[TermConfig] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind != "gauduchon" and self.rho:
            raise ValueError("rho is only used by the gauduchon recipe")
        if self.kind != "generic" and self.terms:
            raise ValueError("terms are only used by the generic recipe")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        return self

    def recipe(self, grid: Grid):
        if self.kind == "flat":
            return "flat"
        if self.kind == "gauduchon":
            return GauduchonMetric(modes_to_field(grid, self.rho))
        terms = tuple(GenericTerm(tuple(t.entry), tuple(t.k), complex(t.re, t.im), t.kind) for t in self.terms)
        return GenericMetric(terms, self.amplitude)


class EpsilonConfig(_Strict):
    eps0: float = 0.5
    count: int = 6
    values: list[float] | None = None

    @field_validator("eps0")
    @classmethod
    def _pos(cls, v):
        if not v > 0:
            raise ValueError("eps0 must be positive")
        return v

    @field_validator("count")
    @classmethod
    def _count(cls, v):
        if v < 1:
            raise ValueError("count must be at least 1")
        return v

    @model_validator(mode="after")
    def _monotone(self):
        if self.values is not None:
            v = self.values
            if not v or any(x <= 0 for x in v) or any(b >= a for a, b in zip(v, v[1:])):
                raise ValueError("epsilon values must be strictly decreasing positives")
        return self

    def schedule(self) -> list:
        if self.values is not None:
            return [float(x) for x in self.values]
        return [self.eps0 * 2.0**-k for k in range(self.count)]


class Tolerances(_Strict):
    gate: float = 1e-12
    morse_gap: float = 0.02
    monotone_tail: int = 4
    contact_fraction: float = 0.98
    stokes_rel: float = 0.02
    halving_factor: float = 2.0
    slope_abs: float = 0.05
    slack: float = 0.2
    identity_rel: float = 1e-8
    identity_const: float = 1e-10
    eps2_slope: float = 1.9
    bound_rel: float = 0.01
    chain_rel: float = 1e-6
    sandwich: float = 1e-6
    cherrier_slack: float = 1e-6
    ma_tol: float = 1e-10


class Options(_Strict):
    stencil_r: int = 1
    hessian_mode: Literal["spectral", "finite_difference"] = "spectral"
    refine: bool = False
    delta: float | None = None
    route: Literal["cherrier", "tw"] = "cherrier"
    volume_form: list[Mode] = Field(default_factory=list)

    @field_validator("stencil_r")
    @classmethod
    def _r(cls, v):
        if v not in (1, 2):
            raise ValueError("stencil_r must be 1 or 2")
        return v


class RunConfig(_Strict):
    experiment: str
    grid: GridConfig
    class_: ClassConfig = Field(alias="class")
    metric: MetricConfig = Field(default_factory=MetricConfig)
    probes: list[list[Mode]] = Field(default_factory=list)
    epsilon: EpsilonConfig = Field(default_factory=EpsilonConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    options: Options = Field(default_factory=Options)
    seed: int = 0
    output: str | None = None

    @field_validator("experiment")
    @classmethod
    def _known(cls, v):
        from .experiments import EXPERIMENTS

        if v not in EXPERIMENTS:
            raise ValueError(f"unknown experiment id {v!r}; valid ids: {', '.join(EXPERIMENTS)}")
        return v

    @model_validator(mode="after")
    def _shapes(self):
        n = self.grid.n
        A = self.class_.matrix()
        if A.shape != (n, n):
            raise ValueError(f"class.A must be {n}x{n}")
        if np.max(np.abs(A - A.conj().T)) > 1e-12:
            raise ValueError("class.A must be Hermitian")
        for m in [*self.class_.f, *self.metric.rho, *(m for p in self.probes for m in p), *self.options.volume_form]:
            if len(m.k) != 2 * n:
                raise ValueError(f"mode frequency {m.k} must have {2 * n} entries")
            if any(2 * abs(x) >= self.grid.N for x in m.k):
                raise ValueError(f"mode frequency {m.k} aliases at N={self.grid.N}")
        for t in self.metric.terms:
            if len(t.k) != 2 * n or any(not 0 <= e < n for e in t.entry):
                raise ValueError(f"metric term {t.entry}/{t.k} does not fit n={n}")
        return self

    # --- builders -------------------------------------------------------
    def make_grid(self) -> Grid:
        return make_grid(self.grid.n, self.grid.N)

    def class_spec(self, grid: Grid | None = None) -> ClassSpec:
        grid = grid or self.make_grid()
        return ClassSpec(self.class_.matrix(), modes_to_field(grid, self.class_.f))

    def probe_fields(self, grid: Grid | None = None) -> list:
        grid = grid or self.make_grid()
        return [modes_to_field(grid, p) for p in self.probes]

    def snapshot(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude={"output"})

    def digest(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_grid(self, N: int) -> "RunConfig":
        return self.model_copy(update={"grid": GridConfig(n=self.grid.n, N=N)})


# --- loading -------------------------------------------------------------

def _key_lines(node, path=(), out=None):
    """Map key paths in a YAML node tree to 1-based line numbers."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _key_lines(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _key_lines(v, p, out)
    return out


def _format_errors(exc: ValidationError, lines: dict, source: str) -> str:
    msgs = []
    for err in exc.errors():
        loc = tuple("class" if x == "class_" else x for x in err["loc"])
        loc = tuple(x for x in loc if not (isinstance(x, str) and ("[" in x or x in ("float", "tuple[float, float]"))))
        line = None
        for cut in range(len(loc), -1, -1):
            if loc[:cut] in lines:
                line = lines[loc[:cut]]
                break
        where = ".".join(str(x) for x in loc) or "<root>"
        at = f"{source}:{line}: " if line else f"{source}: "
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        msgs.append(f"{at}{where}: {msg}")
    return "\n".join(msgs)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _key_lines(node) if node is not None else {}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, lines, source)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
