"""Shift confidence intervals by test inversion, and the two selective regimes.

Under the additive model ``Y_i = tau + e_i`` with symmetric errors, the
interval collects every shift ``tau`` that a two-sided test applied to
``Y - tau`` does not reject.  Gamma is fixed at 1 here.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import BadParams, MissingOutcome, SelectionLeak, ZeroVariance
from .plan import Finding
from .stats import StatisticKind, one_sided_pvalues
from .validation import check_diffs, check_level

INVERTIBLE = ("signed_rank", "permutation_t")
REGIMES = ("fcr", "simultaneous")


@dataclass(frozen=True)
class ShiftCI:
    outcome_name: str
    point_estimate: float
    lower: float
    upper: float
    level: float
    statistic: str
    team: str = ""
    regime: str = ""

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    def covers(self, value):
        return self.lower <= value <= self.upper

    @property
    def width(self):
        return self.upper - self.lower


@dataclass(frozen=True)
class CISelection:
    """Outcomes one team picked, using only the part named `selected_on`."""

    team_label: str
    outcomes: tuple
    selected_on: str
    regime: str = "fcr"

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(Finding(*o) for o in self.outcomes))
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")


def hl_estimate(diffs):
    """Hodges-Lehmann shift: median of the Walsh averages ``(Y_i + Y_j) / 2``, ``i <= j``."""
    y = check_diffs(diffs)
    i, j = np.triu_indices(y.size)
    return float(np.median((y[i] + y[j]) / 2.0))


def shift_pvalue(diffs, tau, statistic="signed_rank"):
    """Two-sided p-value for the hypothesis that the shift equals `tau`."""
    y = np.asarray(diffs, dtype=float) - tau
    if not np.any(y):
        return 1.0
    try:
        p_up, p_down = one_sided_pvalues(y, statistic)
    except ZeroVariance:
        return 1.0
    return min(1.0, 2.0 * min(p_up, p_down))


def _bisect(accept, inside, outside, tol):
    while abs(outside - inside) > tol:
        mid = 0.5 * (inside + outside)
        if accept(mid):
            inside = mid
        else:
            outside = mid
    return inside


def invert_ci(diffs, statistic="signed_rank", level=0.95, outcome_name=""):
    """Confidence interval for an additive shift by inverting a two-sided test.

    Bounds are located by bisection on ``[min - range, max + range]`` to a
    tolerance of ``1e-8 * range``; a bound that is still accepted at the edge
    of that bracket is reported at the edge.
    """
    y = check_diffs(diffs, min_size=2)
    level = check_level(level)
    kind = StatisticKind.parse(statistic)
    if kind.kind not in INVERTIBLE:
        raise BadParams(f"CI inversion supports {INVERTIBLE}, got {kind.kind!r}")
    est = hl_estimate(y)
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo
    if span == 0:
        return ShiftCI(outcome_name, lo, lo, lo, level, kind.label)
    alpha = 1.0 - level

    def accept(tau):
        return shift_pvalue(y, tau, kind) >= alpha

    center = est if kind.kind == "signed_rank" else float(y.mean())
    if not accept(center):
        return ShiftCI(outcome_name, est, center, center, level, kind.label)
    tol = 1e-8 * span
    left, right = lo - span, hi + span
    lower = left if accept(left) else _bisect(accept, center, left, tol)
    upper = right if accept(right) else _bisect(accept, center, right, tol)
    return ShiftCI(outcome_name, est, lower, upper, level, kind.label)


def _check_sides(sel_a, sel_b, labels):
    la, lb = labels
    if sel_a.selected_on == lb:
        raise SelectionLeak(f"team {sel_a.team_label} selected on part {lb}, its own CI target")
    if sel_b.selected_on == la:
        raise SelectionLeak(f"team {sel_b.team_label} selected on part {la}, its own CI target")


def _intervals(sel, data, level, statistic, regime):
    out = []
    for f in sel.outcomes:
        if f.outcome not in data:
            raise MissingOutcome(f"outcome {f.outcome!r} missing from CI data")
        ci = invert_ci(data[f.outcome].diffs, statistic, level, f.outcome)
        out.append(ShiftCI(ci.outcome_name, ci.point_estimate, ci.lower, ci.upper, ci.level,
                           ci.statistic, sel.team_label, regime))
    return out


def fcr_two_team(sel_a, part_b_data, sel_b, part_a_data, alpha=0.05, statistic="signed_rank",
                 labels=("A", "B")):
    """Level ``1 - alpha/2`` intervals on the part not used for selection.

    Because selection and interval data are independent, the false coverage
    rate over all intervals is at most `alpha`.
    """
    check_level(alpha, "alpha")
    _check_sides(sel_a, sel_b, labels)
    level = 1.0 - alpha / 2.0
    return (_intervals(sel_a, part_b_data, level, statistic, "fcr")
            + _intervals(sel_b, part_a_data, level, statistic, "fcr"))


def simultaneous_cis(sel_a, part_b_data, sel_b, part_a_data, alpha=0.05, statistic="signed_rank",
                     labels=("A", "B")):
    """Bonferroni intervals: level ``1 - (alpha/2)/n`` for a team's `n` outcomes.

    All intervals cover simultaneously with probability at least ``1 - alpha``
    (and at least ``1 - alpha/2`` within each part).
    """
    check_level(alpha, "alpha")
    _check_sides(sel_a, sel_b, labels)
    out = []
    for sel, data in ((sel_a, part_b_data), (sel_b, part_a_data)):
        if sel.outcomes:
            level = 1.0 - (alpha / 2.0) / len(sel.outcomes)
            out += _intervals(sel, data, level, statistic, "simultaneous")
    return out


def ci_table_csv(cis):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["team", "outcome", "level", "estimate", "lower", "upper", "regime"])
    for c in cis:
        w.writerow([c.team, c.outcome_name, repr(c.level), repr(c.point_estimate),
                    repr(c.lower), repr(c.upper), c.regime])
    return buf.getvalue()


class ShiftEstimator(BaseEstimator):
    """Hodges-Lehmann point estimate plus an inverted-test interval.

    Attributes
    ----------
    estimate_, lower_, upper_ : float
    interval_ : ShiftCI
    """

    def __init__(self, statistic="signed_rank", level=0.95):
        self.statistic = statistic
        self.level = level

    def fit(self, X, y=None):
        self.interval_ = invert_ci(X, self.statistic, self.level)
        self.estimate_ = self.interval_.point_estimate
        self.lower_, self.upper_ = self.interval_.lower, self.interval_.upper
        return self
