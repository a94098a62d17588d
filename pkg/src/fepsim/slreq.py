"""SL-REQ: the fuzzy controller that decides whether a tired forwarder may nap.

A forwarder that runs low on charge (or cannot keep up with arrivals) asks its
uplink neighbors for a sleep grant.  Each uplink evaluates three crisp inputs
about the requester -- comparative load (cl), historical forwarding
performance (ph) and the current communication scenario of the hop (ccs) --
fuzzifies them into four ordinal grades, and composes two rule tables into the
output grade SLPR.  A3 and A4 grant a nap: A4 earns the full nap limit L,
A3 earns L scaled by mid(A3)/mid(A4) = 5/7.

Everything here is a pure function of its arguments; no simulator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence


class FuzzyGrade(IntEnum):
    """Ordinal quartile grade; A4 is best."""

    A1 = 1
    A2 = 2
    A3 = 3
    A4 = 4

    @property
    def mid(self) -> float:
        """Midpoint of the grade's crisp quartile band."""
        return _MIDS[self]


_MIDS = {
    FuzzyGrade.A1: 0.125,
    FuzzyGrade.A2: 0.375,
    FuzzyGrade.A3: 0.625,
    FuzzyGrade.A4: 0.875,
}

GRADES = (FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A3, FuzzyGrade.A4)

# Accepted names for the formula-variant switches.
PH_VARIANTS = ("semantic", "literal")
CCS_VARIANTS = ("semantic", "literal")
SLPR_ORIENTATIONS = ("temp_dominant", "cl_dominant")


@dataclass(frozen=True)
class FormulaVariant:
    """Switches between two readings of the ph/ccs formulas and the SLPR table.

    The "literal" variants keep the raw formula text, where the exponential
    term shrinks as behavior improves and the product can leave [0, 1] (it is
    clamped here); the default "semantic" variants flip the exponent so every
    factor rewards good behavior and the result is bounded by construction.
    ``slpr_orientation`` selects which input indexes the rows of the final
    rule table: ``temp_dominant`` (default) lets a strong temp grade dominate
    the load grade, ``cl_dominant`` the reverse.
    """

    ph: str = "semantic"
    ccs: str = "semantic"
    slpr_orientation: str = "temp_dominant"

    def __post_init__(self) -> None:
        if self.ph not in PH_VARIANTS:
            raise ValueError(f"unknown ph variant {self.ph!r}")
        if self.ccs not in CCS_VARIANTS:
            raise ValueError(f"unknown ccs variant {self.ccs!r}")
        if self.slpr_orientation not in SLPR_ORIENTATIONS:
            raise ValueError(f"unknown slpr orientation {self.slpr_orientation!r}")


@dataclass(frozen=True)
class ClBounds:
    """Range of the comparative-load ratio: (min rate / mean, max rate / mean)."""

    low: float
    high: float

    @property
    def degenerate(self) -> bool:
        return self.low == self.high


@dataclass(frozen=True)
class PhRecord:
    """History of one uplink relation, as counted by the requesting forwarder.

    ``sent`` packets were handed over by the uplink for forwarding,
    ``forwarded`` of those were pushed onward, and ``sleep_requests`` counts
    the sleep shots the forwarder has addressed to this uplink so far.
    """

    sent: int
    forwarded: int
    sleep_requests: int

    def __post_init__(self) -> None:
        if self.sent < 0 or self.forwarded < 0 or self.sleep_requests < 0:
            raise ValueError("PhRecord counters must be nonnegative")
        if self.forwarded > self.sent:
            raise ValueError("forwarded cannot exceed sent")


@dataclass(frozen=True)
class HopSessionView:
    """One live session as seen by the evaluating uplink on its hop.

    ``forwarded`` packets have already crossed the hop, ``remaining`` are
    still due, and ``alt_grades`` holds the performance grades of the cached
    alternative routes that bypass the would-be sleeper.
    """

    forwarded: int
    remaining: int
    alt_grades: tuple[FuzzyGrade, ...] = ()

    def __post_init__(self) -> None:
        if self.forwarded < 0 or self.remaining < 0:
            raise ValueError("session counters must be nonnegative")


@dataclass(frozen=True)
class SleepDecision:
    granted: bool
    duration_ms: float | None = None


@dataclass(frozen=True)
class SlReqTrace:
    """All intermediate values of one controller evaluation."""

    cl: float
    cl_bounds: ClBounds
    ph: float
    ccs: float
    cl_grade: FuzzyGrade
    ph_grade: FuzzyGrade
    ccs_grade: FuzzyGrade
    temp: FuzzyGrade
    slpr: FuzzyGrade
    decision: SleepDecision


_UNIT_SLACK = 1e-12


def fuzzify_unit(x: float) -> FuzzyGrade:
    """Quartile grade of a value in [0, 1]; boundaries go to the upper class."""
    if not math.isfinite(x) or x < -_UNIT_SLACK or x > 1.0 + _UNIT_SLACK:
        raise ValueError(f"fuzzify_unit: {x!r} outside [0, 1]")
    x = min(max(x, 0.0), 1.0)
    if x >= 0.75:
        return FuzzyGrade.A4
    if x >= 0.5:
        return FuzzyGrade.A3
    if x >= 0.25:
        return FuzzyGrade.A2
    return FuzzyGrade.A1


def fuzzify_cl(cl: float, bounds: ClBounds) -> FuzzyGrade:
    """Grade a comparative load against the dynamic quartiles of [low, high].

    Values below the range clamp to A1, above it to A4.  Degenerate bounds
    (every uplink equally loaded, or no measurable load at all) grade as A4:
    the requester is then a maximal contributor by definition.
    """
    if not math.isfinite(cl):
        raise ValueError(f"fuzzify_cl: non-finite input {cl!r}")
    low, high = bounds.low, bounds.high
    if low == high:
        return FuzzyGrade.A4
    t1 = 0.25 * (3.0 * low + high)
    t2 = 0.5 * (low + high)
    t3 = 0.25 * (low + 3.0 * high)
    if cl >= t3:
        return FuzzyGrade.A4
    if cl >= t2:
        return FuzzyGrade.A3
    if cl >= t1:
        return FuzzyGrade.A2
    return FuzzyGrade.A1


def compute_cl(tau_ab: float, uplink_taus: Sequence[float]) -> tuple[float, ClBounds]:
    """Comparative forwarding load of one uplink: its arrival rate over the
    mean rate across all uplinks, plus the (min/mean, max/mean) bounds.

    An all-zero rate vector yields (0.0, bounds(0, 0)); the degenerate bounds
    make ``fuzzify_cl`` grade it A4.
    """
    if not uplink_taus:
        raise ValueError("uplink_taus must be nonempty")
    if any(t < 0 for t in uplink_taus):
        raise ValueError("arrival rates must be nonnegative")
    if tau_ab not in uplink_taus:
        raise ValueError("tau_ab must be one of the uplink rates")
    mean = sum(uplink_taus) / len(uplink_taus)
    if mean == 0.0:
        return 0.0, ClBounds(0.0, 0.0)
    return tau_ab / mean, ClBounds(min(uplink_taus) / mean, max(uplink_taus) / mean)


def compute_ph(rec: PhRecord, variant: str = "semantic") -> float:
    """Historical forwarding performance in [0, 1].

    High means the forwarder transmitted most of what this uplink sent it and
    has rarely begged for sleep.  With no history at all (sent == 0) there is
    no evidence against the forwarder, so the most favorable value 1 is used.
    """
    if variant not in PH_VARIANTS:
        raise ValueError(f"unknown ph variant {variant!r}")
    if rec.sent == 0:
        return 1.0
    ratio = rec.forwarded / rec.sent
    if variant == "semantic":
        return math.exp(ratio - 1.0) / (1.0 + rec.sleep_requests)
    raw = (1.0 - 1.0 / max(rec.sleep_requests, 1)) * math.exp(1.0 - ratio)
    return min(max(raw, 0.0), 1.0)


def compute_f1(forwarded: int, remaining: int) -> float:
    """Fraction of a session's packets already across the hop; 1 if none pend."""
    if forwarded < 0 or remaining < 0:
        raise ValueError("counts must be nonnegative")
    total = forwarded + remaining
    if total == 0:
        return 1.0
    return forwarded / total


def compute_f2(alt_grades: Sequence[FuzzyGrade]) -> float:
    """Mean grade midpoint over the alternative routes; 0 with no alternatives."""
    if not alt_grades:
        return 0.0
    return sum(g.mid for g in alt_grades) / len(alt_grades)


def compute_ccs(views: Sequence[HopSessionView], variant: str = "semantic") -> float:
    """Current communication scenario of the hop, averaged over live sessions.

    High means the hop's sessions are mostly done and good alternative routes
    exist, so a nap costs little.  With no live sessions at all, sleeping
    costs nothing: the degenerate value is 1.
    """
    if variant not in CCS_VARIANTS:
        raise ValueError(f"unknown ccs variant {variant!r}")
    if not views:
        return 1.0
    total = 0.0
    for view in views:
        f1 = compute_f1(view.forwarded, view.remaining)
        f2 = compute_f2(view.alt_grades)
        if variant == "semantic":
            total += f1 * math.exp(f2 - 1.0)
        else:
            total += f1 * math.exp(1.0 - f2)
    value = total / len(views)
    if variant == "semantic":
        return value
    return min(max(value, 0.0), 1.0)


# Rule table combining the ph and ccs grades into temp.  Both inputs carry
# equal weight, so the table is symmetric.  Rows are the ph grade, columns
# the ccs grade, both in A1..A4 order.
_TEMP_TABLE = (
    (FuzzyGrade.A1, FuzzyGrade.A1, FuzzyGrade.A1, FuzzyGrade.A2),
    (FuzzyGrade.A1, FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A2),
    (FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A3, FuzzyGrade.A3),
    (FuzzyGrade.A2, FuzzyGrade.A2, FuzzyGrade.A3, FuzzyGrade.A4),
)

# Rule table combining temp and cl into SLPR.  Under the default
# temp_dominant orientation the rows are indexed by the load grade and the
# columns by temp, so a strong temp can grant against a weak load but not
# vice versa; cl_dominant swaps the roles.
_SLPR_TABLE = (
    (FuzzyGrade.A1, FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A3),
    (FuzzyGrade.A1, FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A3),
    (FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A3, FuzzyGrade.A4),
    (FuzzyGrade.A1, FuzzyGrade.A2, FuzzyGrade.A4, FuzzyGrade.A4),
)


def combine_temp(ph_grade: FuzzyGrade, ccs_grade: FuzzyGrade) -> FuzzyGrade:
    """Combine the behavior grades ph and ccs into the intermediate temp."""
    return _TEMP_TABLE[ph_grade - 1][ccs_grade - 1]


def combine_slpr(
    temp_grade: FuzzyGrade,
    cl_grade: FuzzyGrade,
    orientation: str = "temp_dominant",
) -> FuzzyGrade:
    """Combine temp and the load grade into the output grade SLPR."""
    if orientation == "temp_dominant":
        return _SLPR_TABLE[cl_grade - 1][temp_grade - 1]
    if orientation == "cl_dominant":
        return _SLPR_TABLE[temp_grade - 1][cl_grade - 1]
    raise ValueError(f"unknown slpr orientation {orientation!r}")


def sleep_duration(slpr: FuzzyGrade, nap_limit_ms: float) -> float | None:
    """Nap length for a grade: A4 gets the full limit, A3 gets 5/7 of it,
    lower grades get none."""
    if nap_limit_ms <= 0:
        raise ValueError("nap limit must be positive")
    if slpr is FuzzyGrade.A4:
        return nap_limit_ms
    if slpr is FuzzyGrade.A3:
        return nap_limit_ms * (FuzzyGrade.A3.mid / FuzzyGrade.A4.mid)
    return None


def enable_flags(
    residual_j: float, capacity_j: float, ts_ms: float, tr_ms: float
) -> tuple[int, int]:
    """Arming bits for the controller: (energy-exhaustion, packet-overload).

    The energy bit fires below 40% residual charge; the overload bit fires
    when the smoothed inter-service time exceeds the smoothed inter-arrival
    time, i.e. packets arrive faster than they leave.  With no arrival data
    yet (tr == 0) the node cannot be overloaded.
    """
    if capacity_j <= 0:
        raise ValueError("capacity must be positive")
    if ts_ms < 0 or tr_ms < 0:
        raise ValueError("ts/tr must be nonnegative")
    e = 1 if residual_j / capacity_j < 0.4 else 0
    ol = 1 if tr_ms > 0 and ts_ms / tr_ms > 1.0 else 0
    return e, ol


def evaluate_trace(
    rec: PhRecord,
    views: Sequence[HopSessionView],
    tau_ab: float,
    uplink_taus: Sequence[float],
    nap_limit_ms: float,
    variant: FormulaVariant = FormulaVariant(),
) -> SlReqTrace:
    """Run the full pipeline and keep every intermediate value.

    The caller is expected to have verified the requester side already: an
    enable flag fired and nap budget remains.
    """
    cl, bounds = compute_cl(tau_ab, uplink_taus)
    cl_grade = fuzzify_cl(cl, bounds)
    ph = compute_ph(rec, variant.ph)
    ph_grade = fuzzify_unit(ph)
    ccs = compute_ccs(views, variant.ccs)
    ccs_grade = fuzzify_unit(ccs)
    temp = combine_temp(ph_grade, ccs_grade)
    slpr = combine_slpr(temp, cl_grade, variant.slpr_orientation)
    duration = sleep_duration(slpr, nap_limit_ms)
    decision = SleepDecision(duration is not None, duration)
    return SlReqTrace(cl, bounds, ph, ccs, cl_grade, ph_grade, ccs_grade, temp, slpr, decision)


def evaluate(
    rec: PhRecord,
    views: Sequence[HopSessionView],
    tau_ab: float,
    uplink_taus: Sequence[float],
    nap_limit_ms: float,
    variant: FormulaVariant = FormulaVariant(),
) -> SleepDecision:
    """Grant or deny a sleep request; grants carry the nap duration in ms."""
    return evaluate_trace(rec, views, tau_ab, uplink_taus, nap_limit_ms, variant).decision
