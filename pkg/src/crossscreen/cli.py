"""Command-line interface: ``crossscreen <command> [options]``.

Exit codes: 0 on success (including empty findings), 2 on usage errors,
3 on data or schema errors.  Relative ``--out`` paths are resolved against
``$CROSSSCREEN_OUT_DIR`` when it is set.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .ci import CISelection, ci_table_csv, fcr_two_team, simultaneous_cis
from .core import blind, ingest
from .exceptions import CrossScreenError
from .matching import (
    MatchConfig,
    balance,
    paired_outcomes,
    pairs_to_csv,
    read_pairs,
    risk_set_match,
    threshold_modifier,
)
from .plan import execute_plan, parse_plan, validate_plan
from .screen import (
    AutomatedConfig,
    MultiSplitConfig,
    PlanAssignment,
    run_automated,
    run_holm_full,
    run_multi_split,
    run_two_team,
)
from .sim import METHODS, MethodConfig, TeamProxy, load_scenario, run_comparison
from .stats import StatisticKind, TestSpec, exact_p, make_scores, run_test

OUT_DIR_ENV = "CROSSSCREEN_OUT_DIR"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _emit(args, text):
    if args.out:
        path = Path(args.out)
        base = os.environ.get(OUT_DIR_ENV)
        if base and not path.is_absolute():
            path = Path(base) / path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2) + "\n"


def _seed(args):
    return 0 if args.seed is None else args.seed


def _note_seed(args):
    print(f"seed: {_seed(args)}", file=sys.stderr)


def _require_seed(args, why):
    if args.seed is None:
        raise UsageError(f"--seed is required for {why}")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _statistic(args):
    if args.stat in ("ustat", "U"):
        if None in (args.m, args.m_lo, args.m_hi):
            raise UsageError("--stat ustat needs --m, --m-lo and --m-hi")
        return StatisticKind.parse({"kind": "ustat", "m": args.m, "m_lo": args.m_lo, "m_hi": args.m_hi})
    if args.stat == "rank_sum":
        if not args.modifier:
            raise UsageError("--stat rank_sum needs --modifier")
        return StatisticKind.parse({"kind": "rank_sum", "modifier": args.modifier[0].split("=")[0]})
    return StatisticKind.parse(args.stat)


def _modifiers(args):
    out = {}
    for item in args.modifier or []:
        name, _, rule = item.partition("=")
        cov, _, thr = rule.rpartition(":")
        if not name or not cov or not thr:
            raise UsageError(f"--modifier must look like NAME=COVARIATE:THRESHOLD, got {item!r}")
        try:
            out[name] = threshold_modifier(cov, float(thr))
        except ValueError:
            raise UsageError(f"bad threshold in --modifier {item!r}") from None
    return out


def _load(args):
    ds = ingest(args.data, merge_fallback=args.merge_fallback or ())
    if getattr(args, "pairs", None):
        pairs = read_pairs(args.pairs)
    else:
        pairs = _match_within_split(ds, MatchConfig(ds.covariate_names))
        print(f"matched {len(pairs)} pairs within split levels (default settings)", file=sys.stderr)
    return ds, pairs


def _match_within_split(ds, config):
    pairs = []
    for level in ds.split_levels:
        sub = ds.subset(s.id for s in ds.subjects if s.split_level == level)
        pairs.extend(risk_set_match(sub, config).pairs)
    return pairs


def _level_of(ds, pair, factors):
    s = ds.by_id()[pair.treated_id]
    vals = []
    for f in factors:
        if f == ds.split_factor:
            vals.append(str(s.split_level))
        else:
            v = s.covariates.get(f)
            vals.append("" if v is None else (str(int(v)) if float(v).is_integer() else repr(v)))
    return "|".join(vals)


def _part_data(ds, pairs, args, factors=None):
    """Paired outcomes per part label (treated subject's level decides the part)."""
    factors = factors or [ds.split_factor]
    mods = _modifiers(args)
    groups = {}
    for p in pairs:
        groups.setdefault(_level_of(ds, p, factors), []).append(p)
    return {lvl: paired_outcomes(ds, ps, modifiers=mods) for lvl, ps in sorted(groups.items())}


def _two_parts(parts, args):
    labels = sorted(parts)
    la = args.part_a or (labels[0] if labels else None)
    lb = args.part_b or (labels[1] if len(labels) > 1 else None)
    if la is None or lb is None or la not in parts or lb not in parts or la == lb:
        raise CrossScreenError(f"need two distinct parts; available: {labels}")
    return la, lb


def _needs_mc(plan):
    return any(t.spec.statistic.kind == "rank_sum" and t.spec.gamma > 1 for t in plan.tests)


# --------------------------------------------------------------------------
# commands


def cmd_validate(args):
    ds = ingest(args.data, merge_fallback=args.merge_fallback or ())
    summary = {
        "subjects": len(ds),
        "treated": sum(s.treated for s in ds.subjects),
        "split_levels": list(ds.split_levels),
        "covariates": list(ds.covariate_names),
        "outcomes": list(ds.outcome_names),
        "merged_fallbacks": list(ds.merged_fallbacks),
        "digest": ds.digest(),
    }
    _emit(args, _dump(summary))


def cmd_blind(args):
    _emit(args, blind(ingest(args.data)).to_csv())


def cmd_match(args):
    ds = ingest(args.data)
    names = _csv_list(args.covariates) or list(ds.covariate_names)
    config = MatchConfig(names, args.distance, args.caliper, args.time_window)
    if args.across_split:
        result = risk_set_match(ds, config)
        pairs, fallback, unmatched = list(result.pairs), result.fallback_used, list(result.unmatched)
    else:
        pairs, fallback, unmatched = [], False, []
        for level in ds.split_levels:
            sub = ds.subset(s.id for s in ds.subjects if s.split_level == level)
            r = risk_set_match(sub, config)
            pairs += r.pairs
            fallback |= r.fallback_used
            unmatched += r.unmatched
    print(f"pairs: {len(pairs)}, unmatched treated: {len(unmatched)}", file=sys.stderr)
    if fallback:
        print("warning: singular covariance, used normalized-euclidean distance", file=sys.stderr)
    _emit(args, pairs_to_csv(pairs))


def cmd_balance(args):
    ds = ingest(args.data)
    pairs = read_pairs(args.pairs)
    table = balance(ds, pairs, _csv_list(args.covariates) or None)
    if args.format == "json":
        _emit(args, _dump([
            {"covariate": r.covariate, "pre_match_std_diff": r.pre_match_std_diff,
             "post_match_std_diff": r.post_match_std_diff, "flagged": r.flagged}
            for r in table
        ]))
    elif args.format == "text":
        lines = [f"{'covariate':<24}{'pre':>10}{'post':>10}  flag"]
        for r in table:
            pre = "" if r.pre_match_std_diff is None else f"{r.pre_match_std_diff:.3f}"
            post = "" if r.post_match_std_diff is None else f"{r.post_match_std_diff:.3f}"
            lines.append(f"{r.covariate:<24}{pre:>10}{post:>10}  {'>=0.2' if r.flagged else ''}")
        _emit(args, "\n".join(lines) + "\n")
    else:
        _emit(args, table.to_csv())


def cmd_test(args):
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args)
    if args.part:
        if args.part not in parts:
            raise CrossScreenError(f"unknown part {args.part!r}; available: {sorted(parts)}")
        data = parts[args.part]
    else:
        data = paired_outcomes(ds, pairs, modifiers=_modifiers(args))
    if args.outcome not in data:
        raise CrossScreenError(f"unknown outcome {args.outcome!r}")
    spec = TestSpec(args.outcome, _statistic(args), args.direction, args.gamma)
    if spec.statistic.kind == "rank_sum" and spec.gamma > 1:
        _require_seed(args, "the rank-sum sensitivity approximation")
    seed = _seed(args)
    result = run_test(data[args.outcome], spec, seed=seed)
    out = {"test": spec.to_dict(), "n_pairs": len(data[args.outcome]),
           "n_dropped_missing": data[args.outcome].n_dropped_missing, **result.to_dict()}
    if args.exact:
        if spec.gamma != 1 or spec.statistic.kind == "rank_sum":
            raise UsageError("--exact applies to sign-score statistics at gamma 1")
        sv = make_scores(data[args.outcome].diffs, spec.statistic, spec.direction)
        if len(sv) > 25:
            _require_seed(args, "Monte Carlo exact p-values (N > 25)")
            out["exact_p"] = exact_p(sv, method="monte_carlo", draws=args.draws, seed=args.seed)
        else:
            out["exact_p"] = exact_p(sv)
    _note_seed(args)
    if args.format == "text":
        _emit(args, "".join(f"{k:<20}{v}\n" for k, v in out.items()))
    else:
        _emit(args, _dump(out))


def cmd_plan_validate(args):
    plan = parse_plan(args.plan)
    problems = validate_plan(plan, args.budget)
    if problems:
        _emit(args, "invalid\n" + "".join(f"  {p}\n" for p in problems))
        return 3
    _emit(args, "valid\n")
    return 0


def cmd_plan_run(args):
    plan = parse_plan(args.plan)
    if _needs_mc(plan):
        _require_seed(args, "plans with gamma > 1 rank-sum tests")
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args)
    data = parts[args.part] if args.part else paired_outcomes(ds, pairs, modifiers=_modifiers(args))
    seed = _seed(args)
    result = execute_plan(plan, data, seed=seed)
    _note_seed(args)
    _emit(args, _dump(result.to_dict()))


def _emit_report(args, report, ds):
    report.provenance["merged_fallbacks"] = list(ds.merged_fallbacks)
    if args.format == "text":
        _emit(args, report.to_text())
    else:
        _emit(args, report.to_json())


def cmd_two_team(args):
    plan_a, plan_b = parse_plan(args.plan_a), parse_plan(args.plan_b)
    if _needs_mc(plan_a) or _needs_mc(plan_b):
        _require_seed(args, "plans with gamma > 1 rank-sum tests")
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args, [args.split])
    la, lb = _two_parts(parts, args)
    seed = _seed(args)
    report = run_two_team(plan_a, plan_b, parts[la], parts[lb], alpha_total=args.alpha,
                          labels=(la, lb), seed=seed)
    _note_seed(args)
    _emit_report(args, report, ds)


def cmd_automated(args):
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args, [args.split])
    la, lb = _two_parts(parts, args)
    outcomes = _csv_list(args.outcomes) or list(ds.outcome_names)
    config = AutomatedConfig(outcomes, _statistic(args), args.screen_threshold, args.test_level, args.gamma)
    _emit_report(args, run_automated(config, parts[la], parts[lb], labels=(la, lb)), ds)


def cmd_holm_full(args):
    ds, pairs = _load(args)
    data = paired_outcomes(ds, pairs)
    outcomes = _csv_list(args.outcomes) or list(ds.outcome_names)
    rejected = run_holm_full(outcomes, data, args.alpha, _statistic(args), args.gamma)
    rows = [f.to_dict() for f in sorted(rejected)]
    if args.format == "text":
        _emit(args, "".join(f"{r['outcome']} ({r['direction']})\n" for r in rows) or "no rejections\n")
    else:
        _emit(args, _dump({"alpha": args.alpha, "rejections": rows}))


def cmd_multi(args):
    cfg_path = Path(args.config)
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        factors = cfg.get("factors") or _csv_list(args.factors) or None
        assignments = [
            PlanAssignment(set(a["explore"]), a["target"], parse_plan(cfg_path.parent / a["plan"]))
            for a in cfg["assignments"]
        ]
        total = float(cfg.get("total_alpha", 0.05))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CrossScreenError(f"malformed multi-split config: {exc}") from None
    if any(_needs_mc(a.plan) for a in assignments):
        _require_seed(args, "plans with gamma > 1 rank-sum tests")
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args, factors)
    labels = sorted(set(cfg.get("parts") or parts))
    missing = [l for l in labels if l not in parts]
    if missing:
        raise CrossScreenError(f"parts without matched pairs: {missing}; available: {sorted(parts)}")
    config = MultiSplitConfig(tuple(labels), tuple(assignments), total)
    seed = _seed(args)
    report = run_multi_split(config, {l: parts[l] for l in labels}, seed=seed)
    _note_seed(args)
    _emit_report(args, report, ds)


def _selection(path, regime):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return CISelection(
            obj["team"], [(o["outcome"], o.get("direction", "greater")) for o in obj["outcomes"]],
            obj["selected_on"], regime,
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CrossScreenError(f"malformed selection file {path}: {exc}") from None


def cmd_ci(args):
    ds, pairs = _load(args)
    parts = _part_data(ds, pairs, args, [args.split])
    la, lb = _two_parts(parts, args)
    regime = "fcr" if args.regime == "fcr" else "simultaneous"
    sel_a, sel_b = _selection(args.selection_a, regime), _selection(args.selection_b, regime)
    fn = fcr_two_team if regime == "fcr" else simultaneous_cis
    cis = fn(sel_a, parts[lb], sel_b, parts[la], args.alpha, _statistic(args), labels=(la, lb))
    if args.format == "json":
        _emit(args, _dump([
            {"team": c.team, "outcome": c.outcome_name, "level": c.level, "estimate": c.point_estimate,
             "lower": c.lower, "upper": c.upper, "regime": c.regime} for c in cis
        ]))
    else:
        _emit(args, ci_table_csv(cis))


def cmd_simulate(args):
    _require_seed(args, "simulate")
    scenario = load_scenario(args.scenario)
    scenario = replace(scenario, seed=args.seed, replications=args.reps or scenario.replications)
    methods = [MethodConfig(m, alpha=args.alpha) for m in (_csv_list(args.methods) or ["two_team"])]
    proxy = TeamProxy(screen_threshold=args.proxy_threshold, plan_builder=args.plan_builder,
                      max_tests=args.max_tests)
    table = run_comparison(scenario, methods, [proxy], workers=args.workers)
    _note_seed(args)
    if args.format == "csv":
        _emit(args, table.to_csv())
    elif args.format == "text":
        _emit(args, table.to_text())
    else:
        _emit(args, table.to_json())


# --------------------------------------------------------------------------
# parser


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required for Monte Carlo paths)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "text"), default="json")
    return p


def _data_args(p, pairs=True):
    p.add_argument("--data", required=True, help="subject CSV")
    p.add_argument("--merge-fallback", action="append", metavar="OUTCOME",
                   help="fill missing values of OUTCOME from its #fallback column")
    if pairs:
        p.add_argument("--pairs", help="matched pairs CSV (default: match within split levels)")
        p.add_argument("--modifier", action="append", metavar="NAME=COV:THRESHOLD",
                       help="pair-level group for rank-sum tests; COV may be treat_time")


def _stat_args(p, default="signed_rank"):
    p.add_argument("--stat", default=default,
                   choices=("W", "signed_rank", "t", "permutation_t", "i", "trimmed_halfmedian",
                            "ustat", "U", "rank_sum"))
    p.add_argument("--m", type=int)
    p.add_argument("--m-lo", type=int)
    p.add_argument("--m-hi", type=int)
    p.add_argument("--gamma", type=float, default=1.0)


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="crossscreen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crossscreen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a subject CSV")
    _data_args(p, pairs=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("blind", parents=[common], help="write the outcome-free view")
    _data_args(p, pairs=False)
    p.set_defaults(func=cmd_blind)

    p = sub.add_parser("match", parents=[common], help="risk-set matching")
    _data_args(p, pairs=False)
    p.add_argument("--covariates", help="comma-separated (default: all)")
    p.add_argument("--distance", choices=("mahalanobis", "normalized-euclidean"), default="mahalanobis")
    p.add_argument("--caliper", type=float)
    p.add_argument("--time-window", type=float)
    p.add_argument("--across-split", action="store_true", help="match across split levels")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("balance", parents=[common], help="standardized differences")
    _data_args(p, pairs=False)
    p.add_argument("--pairs", required=True)
    p.add_argument("--covariates")
    p.set_defaults(func=cmd_balance, format="csv")

    p = sub.add_parser("test", parents=[common], help="one sensitivity test")
    _data_args(p)
    p.add_argument("--outcome", required=True)
    _stat_args(p)
    p.add_argument("--direction", choices=("greater", "less"), default="greater")
    p.add_argument("--part", help="restrict to pairs whose treated subject has this split level")
    p.add_argument("--exact", action="store_true", help="also report the sign-flip p-value")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("plan-validate", parents=[common], help="check a plan file")
    p.add_argument("--plan", required=True)
    p.add_argument("--budget", type=float)
    p.set_defaults(func=cmd_plan_validate)

    p = sub.add_parser("plan-run", parents=[common], help="execute a plan")
    p.add_argument("--plan", required=True)
    _data_args(p)
    p.add_argument("--part")
    p.set_defaults(func=cmd_plan_run)

    p = sub.add_parser("two-team", parents=[common], help="two-team cross-screening")
    _data_args(p)
    p.add_argument("--split", default="split")
    p.add_argument("--plan-a", required=True)
    p.add_argument("--plan-b", required=True)
    p.add_argument("--part-a")
    p.add_argument("--part-b")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_two_team)

    p = sub.add_parser("automated", parents=[common], help="automated cross-screening")
    _data_args(p)
    p.add_argument("--split", default="split")
    p.add_argument("--outcomes")
    _stat_args(p)
    p.add_argument("--screen-threshold", type=float, default=0.025)
    p.add_argument("--test-level", type=float, default=0.025)
    p.add_argument("--part-a")
    p.add_argument("--part-b")
    p.set_defaults(func=cmd_automated)

    p = sub.add_parser("holm-full", parents=[common], help="Holm on the undivided data")
    _data_args(p)
    p.add_argument("--outcomes")
    _stat_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_holm_full)

    p = sub.add_parser("multi", parents=[common], help="multi-split cross-screening")
    _data_args(p)
    p.add_argument("--config", required=True, help="multi-split JSON (plans relative to it)")
    p.add_argument("--factors", help="comma-separated split factors (default: config or split)")
    p.set_defaults(func=cmd_multi)

    ci = sub.add_parser("ci", help="selective confidence intervals")
    ci_sub = ci.add_subparsers(dest="regime", required=True)
    for regime in ("fcr", "simultaneous"):
        p = ci_sub.add_parser(regime, parents=[common])
        _data_args(p)
        p.add_argument("--split", default="split")
        p.add_argument("--selection-a", required=True)
        p.add_argument("--selection-b", required=True)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--stat", choices=("W", "signed_rank", "t", "permutation_t"), default="signed_rank")
        p.add_argument("--part-a")
        p.add_argument("--part-b")
        p.set_defaults(func=cmd_ci, format="csv", m=None, m_lo=None, m_hi=None)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo design comparison")
    p.add_argument("--scenario", required=True)
    p.add_argument("--methods", help=f"comma-separated from {', '.join(METHODS)}")
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--proxy-threshold", type=float, default=0.025)
    p.add_argument("--plan-builder", choices=("fixed-sequence-by-p", "single-stage-bonferroni-on-selected"),
                   default="fixed-sequence-by-p")
    p.add_argument("--max-tests", type=int, default=3)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"crossscreen: error: {exc}", file=sys.stderr)
        return 2
    except (CrossScreenError, OSError, ValueError) as exc:
        print(f"crossscreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
