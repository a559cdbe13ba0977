"""Monte Carlo comparison of cross-screening designs.

Human exploration cannot be simulated.  Teams are replaced by
:class:`TeamProxy`, a fixed screening rule that turns the explored data into
a plan.  Every pair remembers the subgroup it was drawn from, so any derived
part such as a random half has a known true mean effect and each rejection
can be scored as true or false.
"""

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import largest_remainder
from .exceptions import BadScenario, CrossScreenError, ReplicationFailed
from .plan import Finding, Plan
from .screen import (
    AutomatedConfig,
    MultiSplitConfig,
    PlanAssignment,
    run_automated,
    run_holm_full,
    run_multi_split,
    screen_outcomes,
)
from .stats import SIGNED_RANK, PairedOutcome, StatisticKind, TestSpec

EDA_NOTE = (
    "Teams are rule-based proxies (screen, then build a plan); "
    "human exploratory analysis is not simulated."
)
METHODS = (
    "two_team",
    "automated",
    "holm_full",
    "single_split",
    "multi_split_4",
    "three_team_naive_union",
    "three_team_leave_one_out",
    "split_20_20_60",
)
PLAN_BUILDERS = ("fixed-sequence-by-p", "single-stage-bonferroni-on-selected")


@dataclass(frozen=True)
class Scenario:
    parts: tuple  # ((label, n_pairs), ...)
    outcomes: tuple
    effect_matrix: np.ndarray
    outcome_correlation: float = 0.0
    noise: str = "normal"
    df: float = None
    replications: int = 1000
    seed: int = 0

    def __post_init__(self):
        parts = tuple((str(l), int(n)) for l, n in self.parts)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        eff = np.asarray(self.effect_matrix, dtype=float)
        object.__setattr__(self, "effect_matrix", eff)
        if not parts or not self.outcomes:
            raise BadScenario("scenario needs at least one part and one outcome")
        if len({l for l, _ in parts}) != len(parts):
            raise BadScenario("part labels must be distinct")
        if any(n < 2 for _, n in parts):
            raise BadScenario("every part needs at least 2 pairs")
        if eff.shape != (len(parts), len(self.outcomes)) or not np.all(np.isfinite(eff)):
            raise BadScenario(
                f"effect_matrix must be finite with shape {(len(parts), len(self.outcomes))}, got {eff.shape}"
            )
        if not 0 <= self.outcome_correlation < 1:
            raise BadScenario(f"outcome_correlation must lie in [0, 1), got {self.outcome_correlation}")
        if self.noise not in ("normal", "t"):
            raise BadScenario(f"noise must be 'normal' or 't', got {self.noise!r}")
        if self.noise == "t" and not (self.df is not None and self.df > 0):
            raise BadScenario("t noise needs df > 0")
        if int(self.replications) < 1:
            raise BadScenario("replications must be at least 1")

    @property
    def labels(self):
        return tuple(l for l, _ in self.parts)

    @classmethod
    def from_dict(cls, obj):
        try:
            noise = obj.get("noise", {"kind": "normal"})
            if isinstance(noise, str):
                noise = {"kind": noise}
            return cls(
                parts=[(p["label"], p["pairs"]) for p in obj["parts"]],
                outcomes=obj["outcomes"],
                effect_matrix=obj["effect_matrix"],
                outcome_correlation=obj.get("outcome_correlation", 0.0),
                noise=noise["kind"],
                df=noise.get("df"),
                replications=obj.get("replications", 1000),
                seed=obj.get("seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise BadScenario(f"malformed scenario: {exc}") from None

    def to_dict(self):
        noise = {"kind": self.noise}
        if self.df is not None:
            noise["df"] = self.df
        return {
            "parts": [{"label": l, "pairs": n} for l, n in self.parts],
            "outcomes": list(self.outcomes),
            "effect_matrix": self.effect_matrix.tolist(),
            "outcome_correlation": self.outcome_correlation,
            "noise": noise,
            "replications": self.replications,
            "seed": self.seed,
        }


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return Scenario.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise BadScenario(f"invalid JSON: {exc}") from None


def null_scenario(n_parts=2, n_outcomes=10, pairs=350, replications=5000, seed=0, labels=None):
    labels = labels or [f"P{k + 1}" for k in range(n_parts)]
    return Scenario(
        parts=[(l, pairs) for l in labels],
        outcomes=[f"y{j + 1}" for j in range(n_outcomes)],
        effect_matrix=np.zeros((n_parts, n_outcomes)),
        replications=replications,
        seed=seed,
    )


def _draw(scenario, index):
    """Pooled differences (n_total, J) and the subgroup index of each pair."""
    rng = np.random.default_rng([int(scenario.seed), int(index)])
    rho = scenario.outcome_correlation
    J = len(scenario.outcomes)
    blocks, owner = [], []
    for k, (_, n) in enumerate(scenario.parts):
        common = rng.standard_normal((n, 1))
        own = rng.standard_normal((n, J))
        noise = math.sqrt(rho) * common + math.sqrt(1 - rho) * own
        if scenario.noise == "t":
            df = scenario.df
            noise = noise / np.sqrt(rng.chisquare(df, size=(n, 1)) / df)
            if df > 2:
                noise *= math.sqrt((df - 2) / df)
        blocks.append(scenario.effect_matrix[k] + noise)
        owner.append(np.full(n, k))
    return np.vstack(blocks), np.concatenate(owner)


def _as_outcomes(names, D, idx):
    return {name: PairedOutcome(name, D[idx, j]) for j, name in enumerate(names)}


def generate(scenario, replication_index):
    """Per-part maps outcome -> PairedOutcome; deterministic in (seed, index)."""
    D, owner = _draw(scenario, replication_index)
    return {
        label: _as_outcomes(scenario.outcomes, D, np.flatnonzero(owner == k))
        for k, label in enumerate(scenario.labels)
    }


@dataclass(frozen=True)
class TeamProxy:
    """Screening rule standing in for a team's exploration."""

    screen_statistic: StatisticKind = SIGNED_RANK
    screen_threshold: float = 0.025
    plan_builder: str = "fixed-sequence-by-p"
    max_tests: int = 3
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "screen_statistic", StatisticKind.parse(self.screen_statistic))
        if not 0 < self.screen_threshold <= 1:
            raise BadScenario(f"screen_threshold must lie in (0, 1], got {self.screen_threshold}")
        if self.plan_builder not in PLAN_BUILDERS:
            raise BadScenario(f"plan_builder must be one of {PLAN_BUILDERS}")
        if int(self.max_tests) < 1:
            raise BadScenario("max_tests must be at least 1")

    def build_plan(self, team, budget, explore_data, outcomes):
        picked = screen_outcomes(explore_data, outcomes, self.screen_statistic,
                                 self.screen_threshold, self.gamma)
        picked.sort(key=lambda fp: (fp[1], fp[0]))
        specs = [TestSpec(f.outcome, self.screen_statistic, f.direction, self.gamma)
                 for f, _ in picked[: self.max_tests]]
        if self.plan_builder == "fixed-sequence-by-p":
            return Plan.fixed_sequence(team, budget, specs)
        return Plan.bonferroni(team, budget, specs)


@dataclass(frozen=True)
class MethodConfig:
    name: str
    alpha: float = 0.05
    statistic: StatisticKind = SIGNED_RANK
    gamma: float = 1.0
    explore_fraction: float = 0.5  # single_split only

    def __post_init__(self):
        if self.name not in METHODS:
            raise BadScenario(f"unknown method {self.name!r}; choose from {METHODS}")
        object.__setattr__(self, "statistic", StatisticKind.parse(self.statistic))

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(value)
        return cls(**value)


class _Rep:
    """One replication's pooled data and helpers for carving parts."""

    def __init__(self, scenario, index):
        self.scenario = scenario
        self.index = index
        self.D, self.owner = _draw(scenario, index)
        self.names = scenario.outcomes

    def data(self, idx):
        return _as_outcomes(self.names, self.D, idx)

    def truth(self, idx):
        return self.scenario.effect_matrix[self.owner[idx]].mean(axis=0)

    def group(self, k):
        return np.flatnonzero(self.owner == k)

    def rng(self, method):
        return np.random.default_rng([int(self.scenario.seed), int(self.index), zlib.crc32(method.encode())])


def _random_parts(rng, idx, fractions):
    idx = np.asarray(idx)
    order = rng.permutation(idx.size)
    out, start = [], 0
    for size in largest_remainder(idx.size, fractions):
        out.append(np.sort(idx[order[start:start + size]]))
        start += size
    return out


def _need_parts(rep, k, method):
    if len(rep.scenario.parts) != k:
        raise CrossScreenError(f"{method} needs exactly {k} scenario parts")


def _plans_on(rep, proxies, assignments, alpha_total, parts, units=None):
    """assignments: (team, explore index array, target label, budget)."""
    datas = {label: rep.data(idx) for label, idx in parts.items()}
    plan_assign = []
    for team, explore_idx, target, budget in assignments:
        plan = proxies[team % len(proxies)].build_plan(f"team{team + 1}", budget, rep.data(explore_idx), rep.names)
        explore = {p for p, idx in parts.items() if np.intersect1d(idx, explore_idx).size}
        plan_assign.append(PlanAssignment(explore, target, plan))
    config = MultiSplitConfig(tuple(parts), tuple(plan_assign), alpha_total, units)
    return run_multi_split(config, datas, seed=rep.index)


def _run_method(rep, method, proxies):
    """Returns (rejections by part, truth by part, unit by part)."""
    a = method.alpha
    labels = rep.scenario.labels
    if method.name == "two_team":
        _need_parts(rep, 2, method.name)
        g0, g1 = rep.group(0), rep.group(1)
        parts = {labels[0]: g0, labels[1]: g1}
        report = _plans_on(rep, proxies, [(0, g0, labels[1], a / 2), (1, g1, labels[0], a / 2)], a, parts)
    elif method.name == "automated":
        _need_parts(rep, 2, method.name)
        g0, g1 = rep.group(0), rep.group(1)
        parts = {labels[0]: g0, labels[1]: g1}
        cfg = AutomatedConfig(rep.names, method.statistic, 0.025, a / 2, method.gamma)
        report = run_automated(cfg, rep.data(g0), rep.data(g1), labels=labels[:2])
    elif method.name == "holm_full":
        idx = np.arange(rep.D.shape[0])
        parts = {"pooled": idx}
        rej = run_holm_full(rep.names, rep.data(idx), a, method.statistic, method.gamma)
        return {"pooled": rej}, {"pooled": rep.truth(idx)}, None
    elif method.name == "single_split":
        f = method.explore_fraction
        explore, hold = _random_parts(rep.rng(method.name), np.arange(rep.D.shape[0]), [f, 1 - f])
        parts = {"holdout": hold}
        report = _plans_on(rep, proxies, [(0, explore, "holdout", a)], a, parts)
    elif method.name == "multi_split_4":
        rng = rep.rng(method.name)
        if len(labels) == 4:
            parts = {l: rep.group(k) for k, l in enumerate(labels)}
        else:
            _need_parts(rep, 2, method.name)
            parts = {}
            for k, l in enumerate(labels):
                h1, h2 = _random_parts(rng, rep.group(k), [0.5, 0.5])
                parts[f"{l}/1"], parts[f"{l}/2"] = h1, h2
        assigns = []
        for t, (label, idx) in enumerate(parts.items()):
            others = np.concatenate([v for l, v in parts.items() if l != label])
            assigns.append((t, others, label, a / 4))
        report = _plans_on(rep, proxies, assigns, a, parts)
    elif method.name in ("three_team_naive_union", "three_team_leave_one_out"):
        thirds = _random_parts(rep.rng(method.name), np.arange(rep.D.shape[0]), [1 / 3, 1 / 3, 1 / 3])
        parts = {f"S{k + 1}": idx for k, idx in enumerate(thirds)}
        assigns = []
        for k in range(3):
            if method.name == "three_team_naive_union":
                for j in range(3):
                    if j != k:
                        assigns.append((k, thirds[k], f"S{j + 1}", a / 6))
            else:
                others = np.concatenate([thirds[j] for j in range(3) if j != k])
                assigns.append((k, others, f"S{k + 1}", a / 3))
        report = _plans_on(rep, proxies, assigns, a, parts)
    elif method.name == "split_20_20_60":
        _need_parts(rep, 2, method.name)
        r1, r2, r3 = _random_parts(rep.rng(method.name), np.arange(rep.D.shape[0]), [0.2, 0.2, 0.6])
        parts, units, assigns = {}, {}, []
        for team, (explore, test) in enumerate(((r1, np.concatenate((r2, r3))), (r2, np.concatenate((r1, r3))))):
            for k, l in enumerate(labels):
                label = f"{'AB'[team]}->{l}"
                parts[label] = np.sort(np.intersect1d(test, rep.group(k)))
                units[label] = l
                assigns.append((team, explore, label, a / 4))
        # target parts of the two teams overlap on the shared 60%; units keep them apart
        report = _plans_on(rep, proxies, assigns, a, parts, units)
        rej = {p: report.rejections.get(p, frozenset()) for p in parts}
        return rej, {p: rep.truth(idx) for p, idx in parts.items()}, units
    else:  # pragma: no cover - guarded by MethodConfig
        raise BadScenario(method.name)
    rej = {p: report.rejections.get(p, frozenset()) for p in parts}
    return rej, {p: rep.truth(idx) for p, idx in parts.items()}, None


def _is_false(finding, truth_vec, names):
    eff = truth_vec[names.index(finding.outcome)]
    return eff <= 0 if finding.direction == "greater" else eff >= 0


def _score(rej, truth, units, names):
    """Event indicators and rejection counts for one method on one replication."""
    any_false = any(_is_false(f, truth[p], names) for p, fs in rej.items() for f in fs)
    any_true = any(not _is_false(f, truth[p], names) for p, fs in rej.items() for f in fs)
    by_finding = {}
    for p, fs in rej.items():
        for f in fs:
            by_finding.setdefault(f, []).append(p)
    repl_true = repl_false = False
    for f, ps in by_finding.items():
        if len({(units or {}).get(p, p) for p in ps}) < 2:
            continue
        if any(_is_false(f, truth[p], names) for p in ps):
            repl_false = True
        else:
            repl_true = True
    counts = {(p, f.outcome, f.direction): 1 for p, fs in rej.items() for f in fs}
    return {
        "fwer": int(any_false),
        "power": int(any_true),
        "replicability": int(repl_true),
        "false_replicability": int(repl_false),
    }, counts


def _run_chunk(args):
    scenario, methods, proxies, indices = args
    events = {m.name: {} for m in methods}
    counts = {m.name: {} for m in methods}
    for i in indices:
        rep = _Rep(scenario, i)
        for m in methods:
            try:
                rej, truth, units = _run_method(rep, m, proxies)
            except CrossScreenError as exc:
                raise ReplicationFailed(i, exc) from exc
            ev, cn = _score(rej, truth, units, list(scenario.outcomes))
            for k, v in ev.items():
                events[m.name][k] = events[m.name].get(k, 0) + v
            for k, v in cn.items():
                counts[m.name][k] = counts[m.name].get(k, 0) + v
    return events, counts


def mc_se(rate, reps):
    return math.sqrt(rate * (1 - rate) / reps)


@dataclass(frozen=True)
class MetricsTable:
    replications: int
    metrics: dict  # method -> metric -> rate
    rejection_rates: dict  # method -> {(part, outcome, direction): rate}
    scenario: dict = field(default_factory=dict)
    note: str = EDA_NOTE

    def se(self, method, metric):
        return mc_se(self.metrics[method][metric], self.replications)

    def to_dict(self):
        return {
            "note": self.note,
            "replications": self.replications,
            "scenario": self.scenario,
            "methods": {
                m: {
                    **{k: {"rate": v, "mc_se": self.se(m, k)} for k, v in vals.items()},
                    "rejection_rates": [
                        {"part": p, "outcome": o, "direction": d, "rate": r}
                        for (p, o, d), r in sorted(self.rejection_rates[m].items())
                    ],
                }
                for m, vals in self.metrics.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "value", "mc_se"])
        for m, vals in self.metrics.items():
            for k, v in vals.items():
                w.writerow([m, k, repr(v), repr(self.se(m, k))])
        return buf.getvalue()

    def to_text(self):
        lines = [f"# {self.note}", f"replications: {self.replications}"]
        keys = ("fwer", "power", "replicability", "false_replicability")
        lines.append(f"{'method':<26}" + "".join(f"{k:>22}" for k in keys))
        for m, vals in self.metrics.items():
            cells = "".join(f"{vals[k]:>14.4f} ±{self.se(m, k):.4f}" for k in keys)
            lines.append(f"{m:<26}{cells}")
        return "\n".join(lines) + "\n"


def run_comparison(scenario, methods, proxies=None, *, workers=1, replications=None):
    """Run every method on every replication and aggregate error/power rates."""
    methods = [MethodConfig.parse(m) for m in methods]
    if not methods:
        raise BadScenario("at least one method is required")
    proxies = tuple(proxies) if proxies else (TeamProxy(),)
    reps = int(scenario.replications if replications is None else replications)
    workers = max(1, int(workers))
    chunks = [list(range(r, reps, workers)) for r in range(workers)]
    jobs = [(scenario, methods, proxies, c) for c in chunks if c]
    if workers == 1:
        results = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    metrics, rates = {}, {}
    for m in methods:
        ev_tot, cn_tot = {}, {}
        for ev, cn in results:
            for k, v in ev[m.name].items():
                ev_tot[k] = ev_tot.get(k, 0) + v
            for k, v in cn[m.name].items():
                cn_tot[k] = cn_tot.get(k, 0) + v
        metrics[m.name] = {k: ev_tot.get(k, 0) / reps
                           for k in ("fwer", "power", "replicability", "false_replicability")}
        rates[m.name] = {k: v / reps for k, v in cn_tot.items()}
    return MetricsTable(reps, metrics, rates, scenario.to_dict())
