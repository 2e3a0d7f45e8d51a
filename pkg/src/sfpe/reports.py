"""Report containers and the shared CSV writer."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def format_cell(value):
    """Render a cell with a fixed float format so output is byte-stable."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.ndarray):
        return " ".join(format_cell(v) for v in value.ravel().tolist())
    return str(value)


def to_csv(columns, rows, comment=None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class ResidualReport:
    """Per-probe residual vectors with their standard errors.

    ``residuals``, ``stderrs`` and ``tolerance`` are ``(n_probes, k)``; a
    probe passes when every component satisfies
    ``|residual| <= tolerance + 3 * stderr``.
    """

    probes: tuple
    residuals: np.ndarray
    stderrs: np.ndarray
    tolerance: np.ndarray
    label: str = "residual"

    def __post_init__(self):
        res = np.atleast_2d(np.asarray(self.residuals, float))
        se = np.broadcast_to(np.asarray(self.stderrs, float), res.shape)
        tol = np.broadcast_to(np.asarray(self.tolerance, float), res.shape)
        if len(self.probes) != res.shape[0]:
            raise ValueError("one residual row per probe is required")
        object.__setattr__(self, "residuals", res)
        object.__setattr__(self, "stderrs", se)
        object.__setattr__(self, "tolerance", tol)

    @property
    def passed(self):
        return np.all(np.abs(self.residuals) <= self.tolerance + 3.0 * self.stderrs, axis=1)

    @property
    def all_passed(self):
        return bool(np.all(self.passed))

    @property
    def norms(self):
        return np.linalg.norm(self.residuals, axis=1)

    CSV_COLUMNS = ("check", "probe", "t", "x", "component", "residual", "stderr",
                   "tolerance", "pass")

    def csv_rows(self):
        passed = self.passed
        for i, (t, x) in enumerate(self.probes):
            ok = bool(passed[i])
            for j in range(self.residuals.shape[1]):
                yield (self.label, i, float(t), np.asarray(x, float), j,
                       self.residuals[i, j], self.stderrs[i, j], self.tolerance[i, j], ok)
