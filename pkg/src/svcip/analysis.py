"""Error norms, divergence diagnostics and convergence tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .assembly import Discretization
from .fem import evaluate, quadrature
from .mms import ManufacturedSolution

CSV_HEADER = ("scheme", "N", "h", "err_u_L2_max", "err_p_L2_final", "div_max", "slope")


def _error_rule(disc: Discretization, degree: int | None):
    rule = quadrature(degree or 2 * disc.k + 4)
    pts = disc.geom.to_physical(rule.points)
    w = np.abs(disc.geom.det)[:, None] * rule.weights[None, :]
    ref = np.broadcast_to(rule.points, pts.shape)
    return pts, w, ref


def _field_at(disc, which, coeffs, ref, order=0):
    dofmap = disc.velocity if which == "velocity" else disc.pressure
    cells = np.arange(disc.mesh.n_cells)
    return evaluate(dofmap, coeffs, disc.geom, cells, ref, order)


def l2_error(disc: Discretization, coeffs: np.ndarray, exact, t: float = 0.0,
             which: str = "velocity", degree: int | None = None) -> float:
    """L2 distance between a discrete field and ``exact``.

    ``exact`` is a :class:`ManufacturedSolution` or a callable ``(x, y, t)``.
    Pressure errors are computed after removing both means.
    """
    if which not in ("velocity", "pressure"):
        raise ValueError(f"unknown field {which!r}")
    pts, w, ref = _error_rule(disc, degree)
    x, y = pts[..., 0], pts[..., 1]
    if isinstance(exact, ManufacturedSolution):
        fn = exact.velocity if which == "velocity" else exact.pressure
    else:
        fn = exact
    discrete = _field_at(disc, which, coeffs, ref)[0]
    if which == "velocity":
        ex = np.moveaxis(np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), (2,) + x.shape),
                         0, -1)
        diff = discrete - ex
        return float(np.sqrt(np.sum(w[..., None] * diff**2)))
    ex = np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), x.shape)
    dp = discrete[..., 0]
    area = w.sum()
    diff = (dp - np.sum(w * dp) / area) - (ex - np.sum(w * ex) / area)
    return float(np.sqrt(np.sum(w * diff**2)))


def h1_seminorm(disc: Discretization, u: np.ndarray, degree: int | None = None) -> float:
    _, w, ref = _error_rule(disc, degree)
    grad = _field_at(disc, "velocity", u, ref, 1)[1]
    return float(np.sqrt(np.sum(w[..., None, None] * grad**2)))


def h1_norm(disc: Discretization, u: np.ndarray) -> float:
    l2 = l2_error(disc, u, lambda x, y, t: 0.0, which="velocity")
    return float(np.hypot(l2, h1_seminorm(disc, u)))


def divergence_norm(disc: Discretization, u: np.ndarray, degree: int | None = None) -> float:
    """L2 norm of the piecewise divergence of the discrete velocity."""
    _, w, ref = _error_rule(disc, degree)
    grad = _field_at(disc, "velocity", u, ref, 1)[1]
    div = grad[..., 0, 0] + grad[..., 1, 1]
    return float(np.sqrt(np.sum(w * div**2)))


def max_time_error(disc: Discretization, states, exact=None) -> float:
    """Largest L2 velocity error over the sampled states."""
    if not states:
        raise ValueError("empty trajectory")
    exact = exact or ManufacturedSolution()
    return max(l2_error(disc, s.u, exact, s.t) for s in states)


def slope_fit(h, errors) -> float:
    """Least-squares slope of log(error) against log(h) over the three smallest errors."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(h) != len(errors) or len(h) < 3:
        raise ValueError("need at least three (h, error) pairs")
    if np.any(errors <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be positive")
    pick = np.argsort(errors, kind="stable")[:3]
    slope, _ = np.polyfit(np.log(h[pick]), np.log(errors[pick]), 1)
    return float(slope)


@dataclass
class ReportRow:
    N: int
    h: float
    err_u: float
    err_p: float
    div_max: float


@dataclass
class ConvergenceReport:
    scheme: str
    rows: list[ReportRow] = field(default_factory=list)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)
        self.rows.sort(key=lambda r: -r.h)

    @property
    def h(self) -> np.ndarray:
        return np.array([r.h for r in self.rows])

    @property
    def velocity_errors(self) -> np.ndarray:
        return np.array([r.err_u for r in self.rows])

    @property
    def pressure_errors(self) -> np.ndarray:
        return np.array([r.err_p for r in self.rows])

    @property
    def slope(self) -> float | None:
        return slope_fit(self.h, self.velocity_errors) if len(self.rows) >= 3 else None

    @property
    def pressure_slope(self) -> float | None:
        return slope_fit(self.h, self.pressure_errors) if len(self.rows) >= 3 else None

    def csv_rows(self) -> list[tuple]:
        slope = self.slope
        return [(self.scheme, int(r.N), repr(float(r.h)), repr(float(r.err_u)),
                 repr(float(r.err_p)), repr(float(r.div_max)),
                 "" if slope is None else repr(float(slope))) for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            writer.writerows(self.csv_rows())

    @classmethod
    def read_csv(cls, path) -> "ConvergenceReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path} holds no rows")
        report = cls(rows[0]["scheme"])
        for r in rows:
            report.add(ReportRow(int(r["N"]), float(r["h"]), float(r["err_u_L2_max"]),
                                 float(r["err_p_L2_final"]), float(r["div_max"])))
        return report
