"""Experiment reports, verdicts and least-squares fits."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

# Named acceptance criteria.  Every verdict refers to one of these ids.
CRITERIA = {
    "C1": "normalization gate",
    "C2": "mixed-discriminant oracle",
    "C3": "discrete Stokes class independence",
    "C4": "envelope vs 1-d obstacle oracle",
    "C5": "obstacle vs exponential envelope",
    "C6": "contact-set concentration of MA mass",
    "C7": "Morse gap, semipositive class",
    "C8": "Stokes step, Gauduchon metric",
    "C9": "semipositive envelope norm bound",
    "C10": "I(j,k) machinery",
    "C11": "n=3 Gauduchon expansion",
    "C12": "lower bound for the MA constant",
    "C13": "balayage on a non-contact ball",
    "C14": "determinism across thread counts",
}


@dataclass
class Verdict:
    criterion: str
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    asserted: bool = True
    detail: str = ""

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown acceptance criterion {self.criterion!r}")
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "criterion_name": CRITERIA[self.criterion],
            "name": self.name,
            "passed": self.passed,
            "asserted": self.asserted,
            "value": self.value,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class ExperimentReport:
    """Structured record of one experiment run.

    ``runtime`` is kept out of :meth:`to_dict` so the canonical JSON depends
    only on the configuration.
    """

    experiment: str
    config: dict
    rows: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    plotdata: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    gate: dict | None = None
    failure: dict | None = None
    runtime: float = 0.0

    def add(self, *verdicts: Verdict):
        self.verdicts.extend(verdicts)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.asserted) and self.failure is None

    @property
    def failed_verdicts(self) -> list:
        return [v for v in self.verdicts if v.asserted and not v.passed]

    def to_dict(self) -> dict:
        return jsonable(
            {
                "experiment": self.experiment,
                "config": self.config,
                "gate": self.gate,
                "rows": self.rows,
                "fits": self.fits,
                "verdicts": [v.to_dict() for v in self.verdicts],
                "notes": self.notes,
                "failure": self.failure,
                "passed": self.passed,
            }
        )

    def table_csv(self, name: str) -> str:
        return rows_to_csv(self.tables[name])


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0].keys())
    for r in rows[1:]:
        fields.extend(k for k in r if k not in fields)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_value(r.get(k)) for k in fields})
    return buf.getvalue()


def _csv_value(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return x


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``.

    Returns NaN when fewer than two usable (positive) points remain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def geometric_schedule(eps0: float = 0.5, count: int = 6) -> list:
    return [eps0 * 2.0**-k for k in range(count)]
