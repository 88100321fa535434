"""Closed-form mathematics of the three-state illness-death model.

States: 0 = pre-progression, 1 = progressed, 2 = dead. All transitions have
exponential hazards. The progression hazard is ``lambda01`` (times the
treatment multiplier ``m`` in the treatment arm), pre-progression death
``lambda02``, and post-progression death ``delta * lambda02``.

Everything here is a deterministic function of the transition rates:
survival and hazard curves for overall survival, the time-constant log
hazard ratio for progression-free survival, follow-up durations consistent
with a target event fraction, the event-weighted average log hazard ratio
used as the simulation truth, and calibration of rates from published
median PFS/OS values.

Time unit is months throughout; one month is 30.4375 days.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

DAYS_PER_MONTH = 30.4375

# Switch to the series limit of the progressed-state occupancy when the
# post-progression rate is this close to the total exit rate from state 0.
_DEGENERATE_EPS = 1e-10


class Arm(Enum):
    CONTROL = "control"
    TREATMENT = "treatment"


class CalibrationError(ValueError):
    """Published medians are inconsistent with the multistate model."""


class SolverError(RuntimeError):
    """Root bracketing or bisection failed."""


@dataclass(frozen=True)
class MsmParams:
    """Transition rates for one indication/arm context.

    ``lambda12`` is always derived as ``delta * lambda02``; it is not an
    independent degree of freedom.
    """

    lambda01: float
    lambda02: float
    delta: float
    m: float = 1.0

    def __post_init__(self):
        # lambda01 = 0 (no progression) is a valid degenerate case; death
        # rates must stay strictly positive.
        if self.lambda01 < 0 or self.lambda02 <= 0:
            raise ValueError("need lambda01 >= 0 and lambda02 > 0")
        if self.delta < 1.0:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if self.m <= 0:
            raise ValueError("treatment multiplier m must be > 0")

    @property
    def lambda12(self) -> float:
        return self.delta * self.lambda02

    def progression_rate(self, arm: Arm) -> float:
        """Effective progression hazard in the given arm."""
        return self.lambda01 * self.m if arm is Arm.TREATMENT else self.lambda01


@dataclass(frozen=True)
class CalibrationRow:
    """Control-arm medians for one published study."""

    cancer_type: str
    median_pfs: float
    median_os: float
    lambda02_fixed: float = 0.0102
    publication: str = ""
    line: str = ""

    def __post_init__(self):
        if not (self.median_os > self.median_pfs > 0):
            raise ValueError("need median_os > median_pfs > 0")


@dataclass(frozen=True)
class EstimandSpec:
    """Discretization used for the event-weighted average log hazard ratio."""

    followup: float
    interval_width: float = 1.5  # days
    allocation: float = 0.5  # fraction of patients in the treatment arm

    def __post_init__(self):
        if self.interval_width <= 0 or self.followup <= 0:
            raise ValueError("interval_width and followup must be > 0")
        if not 0 < self.allocation < 1:
            raise ValueError("allocation must be in (0, 1)")


def _rates(p: MsmParams, arm: Arm) -> tuple[float, float, float]:
    return p.progression_rate(arm), p.lambda02, p.lambda12


def _survival(a: float, b: float, c: float, t):
    """P(alive at t) = P00(t) + P01(t) for exit rates a+b and c."""
    t = np.asarray(t, dtype=float)
    x = (a + b) * t
    gap = c - a - b
    if abs(gap) < _DEGENERATE_EPS:
        p01 = a * t * np.exp(-x)
    else:
        # a*(exp(-(a+b)t) - exp(-ct)) / gap, written via expm1 so the
        # cancellation for small gap*t stays accurate
        p01 = a * np.exp(-c * t) * np.expm1(gap * t) / gap
    return np.exp(-x) + p01


def _density(a: float, b: float, c: float, t):
    """Density of the death time, -dS/dt."""
    t = np.asarray(t, dtype=float)
    x = (a + b) * t
    gap = c - a - b
    if abs(gap) < _DEGENERATE_EPS:
        return np.exp(-x) * (b + a * (a + b) * t)
    term = (a + b) * np.exp(-c * t) * np.expm1(gap * t) / gap - np.exp(-c * t)
    return (a + b) * np.exp(-x) + a * term


def os_survival(p: MsmParams, arm: Arm, t):
    """Overall-survival function S(t); accepts scalar or array times."""
    a, b, c = _rates(p, arm)
    out = _survival(a, b, c, t)
    return float(out) if np.isscalar(t) else out


def os_hazard(p: MsmParams, arm: Arm, t):
    """Overall-survival hazard h(t) = f(t)/S(t).

    h(0) = lambda02 and h(t) tends to min(a + lambda02, delta*lambda02)
    as t grows, with a the arm's effective progression rate.
    """
    a, b, c = _rates(p, arm)
    out = _density(a, b, c, t) / _survival(a, b, c, t)
    return float(out) if np.isscalar(t) else out


def lhr_pfs(p: MsmParams) -> float:
    """Log hazard ratio for PFS; time-constant because both PFS hazards are.

    ln((lambda01*m + lambda02) / (lambda01 + lambda02))
    """
    return math.log((p.lambda01 * p.m + p.lambda02) / (p.lambda01 + p.lambda02))


def lhr_os(p: MsmParams, t):
    """Log hazard ratio for OS at time t (treatment vs control)."""
    ht = os_hazard(p, Arm.TREATMENT, t)
    hc = os_hazard(p, Arm.CONTROL, t)
    return float(np.log(ht / hc)) if np.isscalar(t) else np.log(np.asarray(ht) / hc)


def _bisect(f, lo: float, hi: float, *, tol: float, max_steps: int = 200) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise SolverError(f"root not bracketed on [{lo}, {hi}]")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) < tol:
            return mid
        if flo * fmid < 0:
            hi = mid
        else:
            lo, flo = mid, fmid
    raise SolverError(f"bisection did not converge in {max_steps} steps")


def solve_followup(control: MsmParams, event_fraction: float = 0.8) -> float:
    """Follow-up time at which the control arm has seen the given OS event fraction.

    Solves S(tau) = 1 - event_fraction by bisection; S is strictly
    decreasing so the root is unique.
    """
    if not 0 < event_fraction < 1:
        raise ValueError("event_fraction must be in (0, 1)")
    target = 1.0 - event_fraction
    hi = 10.0 * math.log(1.0 / target) / control.lambda02
    f = lambda t: os_survival(control, Arm.CONTROL, t) - target
    return _bisect(f, 1e-12, hi, tol=1e-9)


def true_estimand(p_indication: MsmParams, spec: EstimandSpec) -> float:
    """Event-weighted average of the time-varying LHR OS over follow-up.

    The LHR is evaluated at interval midpoints on a grid of
    ``interval_width`` days and averaged with weights proportional to the
    expected number of OS events in each interval, pooled over arms at the
    given allocation. ``p_indication.m`` should carry the indication-level
    treatment effect.
    """
    width = spec.interval_width / DAYS_PER_MONTH
    edges = np.arange(0.0, spec.followup, width)
    edges = np.append(edges, spec.followup)
    mids = 0.5 * (edges[:-1] + edges[1:])

    s_ctrl = os_survival(p_indication, Arm.CONTROL, edges)
    s_trt = os_survival(p_indication, Arm.TREATMENT, edges)
    alloc = spec.allocation
    weights = (1 - alloc) * (s_ctrl[:-1] - s_ctrl[1:]) + alloc * (s_trt[:-1] - s_trt[1:])
    lhr = lhr_os(p_indication, mids)
    return float(np.sum(weights * lhr) / np.sum(weights))


def calibrate_from_medians(row: CalibrationRow) -> tuple[float, float, float]:
    """Back out (lambda01, lambda12, delta) from control-arm median PFS and OS.

    PFS is exponential with rate lambda01 + lambda02, so
    lambda01 = ln(2)/median_pfs - lambda02. lambda12 is then the unique
    post-progression rate under which median OS matches, found by bisection
    on S(median_os) = 1/2.
    """
    b = row.lambda02_fixed
    lam01 = math.log(2.0) / row.median_pfs - b
    if lam01 <= 0:
        raise CalibrationError(
            f"median_pfs={row.median_pfs} too large for lambda02={b}: lambda01 <= 0"
        )

    def half_life_gap(lam12: float) -> float:
        return _survival(lam01, b, lam12, row.median_os) - 0.5

    try:
        lam12 = _bisect(half_life_gap, 1e-9, 10.0, tol=1e-12)
    except SolverError as exc:
        raise CalibrationError(
            f"no post-progression rate matches median_os={row.median_os}"
        ) from exc
    return lam01, lam12, lam12 / b


def load_calibration_csv(path: str | Path) -> list[CalibrationRow]:
    """Read rows of `cancer_type,publication,line,median_pfs,median_os`."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                CalibrationRow(
                    cancer_type=rec["cancer_type"],
                    median_pfs=float(rec["median_pfs"]),
                    median_os=float(rec["median_os"]),
                    publication=rec.get("publication", ""),
                    line=rec.get("line", ""),
                )
            )
    if not rows:
        raise CalibrationError(f"no calibration rows in {path}")
    return rows


def aggregate_indication_means(
    rows: list[tuple[str, float, float]],
) -> tuple[float, float]:
    """Average (lambda01, delta) over indications, equally weighted.

    Means are taken on the log scale within each indication, then across
    indications, and reported back on the natural scale.
    """
    if not rows:
        raise ValueError("no rows to aggregate")
    by_ind: dict[str, list[tuple[float, float]]] = {}
    for ind, lam01, delta in rows:
        by_ind.setdefault(ind, []).append((lam01, delta))
    log_l01 = [np.mean([math.log(v[0]) for v in vals]) for vals in by_ind.values()]
    log_d = [np.mean([math.log(v[1]) for v in vals]) for vals in by_ind.values()]
    return float(np.exp(np.mean(log_l01))), float(np.exp(np.mean(log_d)))


def surrogacy_sweep(
    base: MsmParams, vary: str, grid, t: float
) -> list[tuple[float, float]]:
    """(LHR PFS, LHR OS at time t) along a one-parameter sweep.

    ``vary`` is one of 'm', 'lambda01', 'lambda02', 'delta'; the other
    parameters are held at their values in ``base``.
    """
    if vary not in ("m", "lambda01", "lambda02", "delta"):
        raise ValueError(f"cannot sweep parameter {vary!r}")
    points = []
    for value in grid:
        kwargs = {
            "lambda01": base.lambda01,
            "lambda02": base.lambda02,
            "delta": base.delta,
            "m": base.m,
        }
        kwargs[vary] = float(value)
        p = MsmParams(**kwargs)
        points.append((lhr_pfs(p), lhr_os(p, t)))
    return points
