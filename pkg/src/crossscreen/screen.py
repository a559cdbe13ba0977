"""Cross-screening orchestration and reports.

Each plan runs only on data its authors did not explore.  With plan
budgets summing to the total alpha, Bonferroni gives FWER control for the
union of rejections (global-null findings); a finding rejected on two
disjoint parts is a replicable finding.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .exceptions import BudgetExceeded, MissingOutcome, NoOutcomes, OverlapViolation
from .plan import SUM_TOL, Finding, execute_plan
from .stats import StatisticKind, TestSpec, one_sided_pvalues, run_test
from .validation import check_level, check_pvalues


def data_digest(*parts):
    """SHA-256 over the paired differences of one or more data parts."""
    h = hashlib.sha256()
    for data in parts:
        for name in sorted(data):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(data[name].diffs, dtype="<f8").tobytes())
            for g in sorted(data[name].groups):
                h.update(g.encode("utf-8"))
                h.update(data[name].groups[g].tobytes())
    return h.hexdigest()


def _findings(fs):
    return [f.to_dict() for f in sorted(fs)]


@dataclass(frozen=True)
class FindingsReport:
    """Per-part rejections and the derived union / replication summaries.

    `rejections` maps each target part to its rejected findings.  `units`
    maps a part to its replication unit (defaults to the part itself);
    a finding is replicable when rejected in two or more distinct units.
    """

    parts: dict
    rejections: dict
    alpha_total: float
    provenance: dict = field(default_factory=dict)
    units: dict = None
    first_two: tuple = None  # part labels of R1 and R2 for two-plan reports

    @property
    def R1(self):
        return self.rejections[self.first_two[0]] if self.first_two else frozenset()

    @property
    def R2(self):
        return self.rejections[self.first_two[1]] if self.first_two else frozenset()

    def _unit(self, part):
        return part if self.units is None else self.units.get(part, part)

    @property
    def global_findings(self):
        return frozenset().union(*self.rejections.values()) if self.rejections else frozenset()

    @property
    def replication(self):
        """Finding -> sorted part labels rejecting it."""
        out = {}
        for part, fs in self.rejections.items():
            for f in fs:
                out.setdefault(f, []).append(part)
        return {f: sorted(ps) for f, ps in sorted(out.items())}

    @property
    def replicable_findings(self):
        return frozenset(
            f for f, ps in self.replication.items() if len({self._unit(p) for p in ps}) >= 2
        )

    def pairwise_intersections(self):
        labels = sorted(self.rejections)
        return {
            (a, b): self.rejections[a] & self.rejections[b]
            for i, a in enumerate(labels) for b in labels[i + 1:]
            if self._unit(a) != self._unit(b)
        }

    def to_dict(self):
        out = {"parts": self.parts}
        if self.first_two:
            out["R1"] = _findings(self.R1)
            out["R2"] = _findings(self.R2)
        out["rejections"] = {p: _findings(fs) for p, fs in sorted(self.rejections.items())}
        out["global"] = _findings(self.global_findings)
        out["replicable"] = _findings(self.replicable_findings)
        out["replication"] = [
            {**f.to_dict(), "parts": ps} for f, ps in self.replication.items()
        ]
        out["pairwise"] = [
            {"parts": [a, b], "findings": _findings(fs)}
            for (a, b), fs in self.pairwise_intersections().items()
        ]
        out["alpha_total"] = self.alpha_total
        out["provenance"] = self.provenance
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self):
        lines = [f"alpha_total: {self.alpha_total:g}"]
        width = max([len(p) for p in self.rejections] + [4])
        lines.append(f"{'part':<{width}}  rejections")
        for part, fs in sorted(self.rejections.items()):
            lines.append(f"{part:<{width}}  {', '.join(map(str, sorted(fs))) or '-'}")
        lines.append(f"global-null findings: {', '.join(map(str, sorted(self.global_findings))) or 'none'}")
        lines.append(f"replicable findings:  {', '.join(map(str, sorted(self.replicable_findings))) or 'none'}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PlanAssignment:
    explore: frozenset
    target: str
    plan: object

    def __post_init__(self):
        object.__setattr__(self, "explore", frozenset(self.explore))


@dataclass(frozen=True)
class MultiSplitConfig:
    parts: tuple
    assignments: tuple
    total_alpha: float = 0.05
    units: dict = None

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(self, "assignments", tuple(self.assignments))
        for a in self.assignments:
            if a.target in a.explore:
                raise OverlapViolation(f"plan {a.plan.team!r} explores its own target part {a.target!r}")
            unknown = (a.explore | {a.target}) - set(self.parts)
            if unknown:
                raise OverlapViolation(f"plan {a.plan.team!r} references unknown parts {sorted(unknown)}")
        total = sum(a.plan.budget for a in self.assignments)
        if total > self.total_alpha + SUM_TOL:
            raise BudgetExceeded(f"plan budgets sum to {total:g} > total alpha {self.total_alpha:g}")


def run_multi_split(config, data_parts, *, seed=0):
    """Execute each plan on its target part and assemble the report."""
    parts, rejections = {}, {}
    for i, a in enumerate(config.assignments, start=1):
        result = execute_plan(a.plan, data_parts[a.target], seed=seed)
        key = a.target if len(config.assignments) == len(config.parts) else f"{a.target}#{i}"
        entry = result.to_dict()
        entry["target"] = a.target
        entry["explored"] = sorted(a.explore)
        parts[key] = entry
        rejections[a.target] = rejections.get(a.target, frozenset()) | result.rejections
    for p in config.parts:
        rejections.setdefault(p, frozenset())
    provenance = {
        "toolkit_version": __version__,
        "plan_hashes": [a.plan.content_hash() for a in config.assignments],
        "data_digest": data_digest(*(data_parts[p] for p in config.parts)),
        "seed": seed,
    }
    first_two = None
    if len(config.assignments) == 2:
        first_two = (config.assignments[0].target, config.assignments[1].target)
    return FindingsReport(parts, rejections, config.total_alpha, provenance, config.units, first_two)


def run_two_team(plan_a, plan_b, part_a_data, part_b_data, *, alpha_total=0.05,
                 labels=("A", "B"), seed=0):
    """Team A's plan runs on part B and team B's plan on part A.

    ``R1`` holds team A's rejections (on part B) and ``R2`` team B's.
    """
    if plan_a.budget + plan_b.budget > alpha_total + SUM_TOL:
        raise BudgetExceeded(
            f"plan budgets {plan_a.budget:g} + {plan_b.budget:g} exceed alpha {alpha_total:g}"
        )
    la, lb = labels
    config = MultiSplitConfig(
        (la, lb),
        (PlanAssignment({la}, lb, plan_a), PlanAssignment({lb}, la, plan_b)),
        alpha_total,
    )
    return run_multi_split(config, {la: part_a_data, lb: part_b_data}, seed=seed)


def holm_adjust(pvals, alpha):
    """Indices rejected by Holm's step-down procedure (strict ``p < threshold``)."""
    p = check_pvalues(pvals)
    alpha = check_level(alpha, "alpha")
    n = p.size
    rejected = set()
    for k, idx in enumerate(np.argsort(p, kind="stable")):
        if p[idx] < alpha / (n - k):
            rejected.add(int(idx))
        else:
            break
    return rejected


@dataclass(frozen=True)
class AutomatedConfig:
    outcomes: tuple
    screen_statistic: StatisticKind = StatisticKind("signed_rank")
    screen_threshold: float = 0.025
    test_level: float = 0.025
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "screen_statistic", StatisticKind.parse(self.screen_statistic))
        if not 0 <= self.screen_threshold <= 1:
            raise ValueError(f"screen_threshold must lie in [0, 1], got {self.screen_threshold}")
        check_level(self.test_level, "test_level")


def screen_outcomes(data, outcomes, statistic, threshold, gamma=1.0):
    """Outcomes whose smaller one-sided p-value is below `threshold`.

    Returns ``(finding, p)`` tuples, the direction being the smaller side.
    """
    selected = []
    for name in outcomes:
        if name not in data:
            raise MissingOutcome(f"outcome {name!r} missing from screening data")
        p_up, p_down = one_sided_pvalues(data[name].diffs, statistic, gamma)
        direction, p = ("greater", p_up) if p_up <= p_down else ("less", p_down)
        if p < threshold:
            selected.append((Finding(name, direction), p))
    return selected


def _automated_half(config, screen_data, test_data):
    selected = screen_outcomes(
        screen_data, config.outcomes, config.screen_statistic, config.screen_threshold, config.gamma
    )
    pvals = []
    for f, _ in selected:
        if f.outcome not in test_data:
            raise MissingOutcome(f"outcome {f.outcome!r} missing from test data")
        spec = TestSpec(f.outcome, config.screen_statistic, f.direction, config.gamma)
        pvals.append(run_test(test_data[f.outcome], spec).p_upper)
    rejected = holm_adjust(pvals, config.test_level) if pvals else set()
    rows = [
        {**f.to_dict(), "screen_p": sp, "test_p": tp, "rejected": i in rejected}
        for i, ((f, sp), tp) in enumerate(zip(selected, pvals))
    ]
    return rows, frozenset(selected[i][0] for i in rejected)


def run_automated(config, part_i, part_ii, *, labels=("I", "II")):
    """One-team automated cross-screening: screen on one half, Holm on the other."""
    if not config.outcomes:
        raise NoOutcomes("automated cross-screening needs at least one outcome")
    li, lii = labels
    rows_ii, r1 = _automated_half(config, part_i, part_ii)
    rows_i, r2 = _automated_half(config, part_ii, part_i)
    parts = {
        lii: {"screened_on": li, "selected": rows_ii},
        li: {"screened_on": lii, "selected": rows_i},
    }
    provenance = {
        "toolkit_version": __version__,
        "config": {
            "outcomes": list(config.outcomes),
            "screen_statistic": config.screen_statistic.to_dict(),
            "screen_threshold": config.screen_threshold,
            "test_level": config.test_level,
            "gamma": config.gamma,
        },
        "data_digest": data_digest(part_i, part_ii),
    }
    return FindingsReport(parts, {lii: r1, li: r2}, 2 * config.test_level, provenance, None, (lii, li))


def run_holm_full(outcomes, full_data, alpha=0.05, statistic="signed_rank", gamma=1.0):
    """Holm over both one-sided tests of every outcome on the undivided data."""
    statistic = StatisticKind.parse(statistic)
    family, pvals = [], []
    for name in outcomes:
        if name not in full_data:
            raise MissingOutcome(f"outcome {name!r} missing from data")
        p_up, p_down = one_sided_pvalues(full_data[name].diffs, statistic, gamma)
        family += [Finding(name, "greater"), Finding(name, "less")]
        pvals += [p_up, p_down]
    if not family:
        return frozenset()
    return frozenset(family[i] for i in holm_adjust(pvals, alpha))
