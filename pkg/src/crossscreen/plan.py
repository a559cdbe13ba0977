"""Serial-gatekeeping analysis plans.

A plan is an ordered list of stages.  Every test in a stage is run at its
own alpha; the next stage is reached only if all of them reject.  With the
alphas of each stage summing to at most the plan budget, the plan controls
the family-wise error rate at that budget.
"""

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import jsonschema
import numpy as np

from .exceptions import CrossScreenError, MissingOutcome, SchemaViolation, TestFailed
from .stats import SensitivityResult, StatisticKind, TestSpec, run_test

SUM_TOL = 1e-12


class Finding(NamedTuple):
    """A directional claim about one outcome.  Gamma and statistic are ignored."""

    outcome: str
    direction: str

    def to_dict(self):
        return {"outcome": self.outcome, "direction": self.direction}

    def __str__(self):
        return f"{self.outcome} ({self.direction})"


@dataclass(frozen=True)
class PlannedTest:
    spec: TestSpec
    alpha: float

    def to_dict(self):
        return {**self.spec.to_dict(), "alpha": self.alpha}


@dataclass(frozen=True)
class Stage:
    tests: tuple

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))

    @property
    def alpha_sum(self):
        return sum(t.alpha for t in self.tests)


@dataclass(frozen=True)
class Plan:
    team: str
    budget: float
    stages: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not 0 < self.budget < 1:
            raise CrossScreenError(f"plan budget must lie in (0, 1), got {self.budget}")

    @property
    def tests(self):
        return [t for st in self.stages for t in st.tests]

    @property
    def outcomes(self):
        return sorted({t.spec.outcome for t in self.tests})

    def to_dict(self):
        return {
            "team": self.team,
            "budget": self.budget,
            "stages": [{"tests": [t.to_dict() for t in st.tests]} for st in self.stages],
        }

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def fixed_sequence(cls, team, budget, specs):
        """One test per stage, each at the full budget."""
        return cls(team, budget, [Stage([PlannedTest(s, budget)]) for s in specs])

    @classmethod
    def bonferroni(cls, team, budget, specs):
        """A single stage splitting the budget equally."""
        specs = list(specs)
        if not specs:
            return cls(team, budget, ())
        return cls(team, budget, [Stage([PlannedTest(s, budget / len(specs)) for s in specs])])


def load_schema(name):
    text = resources.files("crossscreen").joinpath("schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def _schema_path(error):
    parts = [str(p) for p in error.absolute_path]
    return "/".join(parts) or "<root>"


def plan_from_dict(obj):
    """Validate a decoded plan document and build a :class:`Plan`."""
    validator = jsonschema.Draft202012Validator(load_schema("plan.schema.json"))
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        raise SchemaViolation(_schema_path(errors[0]), errors[0].message)
    stages = []
    for si, st in enumerate(obj["stages"]):
        tests = []
        for ti, t in enumerate(st["tests"]):
            try:
                spec = TestSpec(t["outcome"], StatisticKind.parse(t["statistic"]), t["direction"], t["gamma"])
            except CrossScreenError as exc:
                raise SchemaViolation(f"stages/{si}/tests/{ti}/statistic", str(exc)) from None
            tests.append(PlannedTest(spec, float(t["alpha"])))
        stages.append(Stage(tests))
    return Plan(obj["team"], float(obj["budget"]), stages)


def parse_plan(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation("<root>", f"invalid JSON: {exc}") from None
    return plan_from_dict(obj)


def bundled_plan(name):
    """Load one of the shipped plan files (``team_a_three_stage``, ``team_b_six_step``)."""
    text = resources.files("crossscreen").joinpath("plans").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return plan_from_dict(json.loads(text))


def validate_plan(plan, budget=None):
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    if budget is not None and plan.budget > budget + SUM_TOL:
        problems.append(f"plan budget {plan.budget:g} > allowed {budget:g}")
    for k, st in enumerate(plan.stages, start=1):
        if not st.tests:
            problems.append(f"stage {k} has no tests")
        total = st.alpha_sum
        if total > plan.budget + SUM_TOL:
            problems.append(f"stage {k} sum {total:g} > {plan.budget:g}")
        seen = set()
        for t in st.tests:
            if not t.alpha > 0:
                problems.append(f"stage {k}: alpha {t.alpha:g} for {t.spec.outcome} must be positive")
            if t.spec.gamma < 1:
                problems.append(f"stage {k}: gamma {t.spec.gamma:g} for {t.spec.outcome} is below 1")
            key = (t.spec.outcome, t.spec.direction, t.spec.gamma)
            if key in seen:
                problems.append(f"stage {k}: duplicate test {key}")
            seen.add(key)
    return problems


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    stage: int
    position: int
    spec: TestSpec
    alpha: float
    p_value: float = None
    rejected: bool = False
    result: SensitivityResult = None

    @property
    def tested(self):
        return self.p_value is not None

    def to_dict(self):
        return {
            "stage": self.stage,
            "position": self.position,
            **self.spec.to_dict(),
            "alpha": self.alpha,
            "p_value": self.p_value,
            "rejected": self.rejected,
            "approximate": bool(self.result.approximate) if self.result is not None else False,
        }


@dataclass(frozen=True)
class PlanResult:
    """Per-test outcomes of one plan execution.

    `stopped_at_stage` is the 1-based index of the first stage that was
    not fully rejected, or ``"completed"`` when every stage rejected.
    """

    team: str
    tests: tuple
    stopped_at_stage: object
    plan_hash: str = ""

    @property
    def rejected_tests(self):
        return [t for t in self.tests if t.rejected]

    @property
    def rejections(self):
        return frozenset(Finding(t.spec.outcome, t.spec.direction) for t in self.rejected_tests)

    @property
    def all_stages_tested(self):
        return all(t.tested for t in self.tests)

    def to_dict(self):
        return {
            "team": self.team,
            "plan_hash": self.plan_hash,
            "stopped_at_stage": self.stopped_at_stage,
            "tests": [t.to_dict() for t in self.tests],
            "rejections": [f.to_dict() for f in sorted(self.rejections)],
        }


def _test_seed(seed, stage, position):
    return int(np.random.SeedSequence([int(seed), stage, position]).generate_state(1)[0])


def execute_plan(plan, data, *, evaluator=None, seed=0, draws=10_000):
    """Run a plan on `data` (outcome name -> PairedOutcome), honouring gates.

    A test rejects iff its p-value is strictly below its alpha.  `evaluator`
    replaces the default statistics call; it receives ``(spec, data)`` and
    returns a p-value or a :class:`SensitivityResult`.
    """
    missing = sorted({t.spec.outcome for t in plan.tests} - set(data))
    if missing:
        raise MissingOutcome(f"plan {plan.team!r} references outcomes absent from the data: {missing}")
    outcomes = []
    stopped = "completed"
    for k, st in enumerate(plan.stages, start=1):
        if stopped != "completed":
            outcomes.extend(TestOutcome(k, j, t.spec, t.alpha) for j, t in enumerate(st.tests, start=1))
            continue
        all_rejected = True
        for j, t in enumerate(st.tests, start=1):
            try:
                if evaluator is None:
                    res = run_test(data[t.spec.outcome], t.spec, seed=_test_seed(seed, k, j), draws=draws)
                else:
                    res = evaluator(t.spec, data)
            except CrossScreenError as exc:
                raise TestFailed(k, j, t.spec.outcome, exc) from exc
            if isinstance(res, SensitivityResult):
                p, result = res.p_upper, res
            else:
                p, result = float(res), None
            rejected = p < t.alpha
            all_rejected &= rejected
            outcomes.append(TestOutcome(k, j, t.spec, t.alpha, p, rejected, result))
        if not all_rejected:
            stopped = k
    return PlanResult(plan.team, tuple(outcomes), stopped, plan.content_hash())
