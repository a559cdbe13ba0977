"""Two-team cross-screening for matched observational studies."""

__version__ = "0.1.0"

from .ci import CISelection, ShiftCI, ShiftEstimator, fcr_two_team, hl_estimate, invert_ci, simultaneous_cis
from .core import Dataset, Subject, blind, emit, ingest, random_split, read_csv, split
from .matching import MatchConfig, MatchedPair, RiskSetMatcher, balance, paired_outcomes, risk_set_match
from .plan import Finding, Plan, PlannedTest, Stage, bundled_plan, execute_plan, parse_plan, validate_plan
from .screen import (
    AutomatedConfig,
    FindingsReport,
    MultiSplitConfig,
    PlanAssignment,
    holm_adjust,
    run_automated,
    run_holm_full,
    run_multi_split,
    run_two_team,
)
from .sim import MethodConfig, Scenario, TeamProxy, generate, load_scenario, run_comparison
from .stats import (
    PairedOutcome,
    SensitivityTest,
    StatisticKind,
    TestSpec,
    UStatParams,
    exact_p,
    make_scores,
    rank_sum,
    rank_sum_worst_case,
    run_test,
    ustat_scores,
    worst_case_p,
)

__all__ = [
    "AutomatedConfig", "CISelection", "Dataset", "Finding", "FindingsReport", "MatchConfig",
    "MatchedPair", "MethodConfig", "MultiSplitConfig", "PairedOutcome", "Plan", "PlanAssignment",
    "PlannedTest", "RiskSetMatcher", "Scenario", "SensitivityTest", "ShiftCI", "ShiftEstimator",
    "Stage", "StatisticKind", "Subject", "TeamProxy", "TestSpec", "UStatParams", "balance", "blind",
    "bundled_plan", "emit", "exact_p", "execute_plan", "fcr_two_team", "generate", "hl_estimate",
    "holm_adjust", "ingest", "invert_ci", "load_scenario", "make_scores", "paired_outcomes",
    "parse_plan", "random_split", "rank_sum", "rank_sum_worst_case", "read_csv", "risk_set_match",
    "run_automated", "run_comparison", "run_holm_full", "run_multi_split", "run_test",
    "run_two_team", "simultaneous_cis", "split", "ustat_scores", "validate_plan", "worst_case_p",
]
