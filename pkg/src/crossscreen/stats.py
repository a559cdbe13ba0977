"""Matched-pair sign-score tests and their worst-case sensitivity p-values.

Every one-sided test here has the form ``T = sum(s_i * q_i)`` with scores
``q_i >= 0`` computed from the absolute pair differences and ``s_i`` the
indicator that pair ``i`` points in the alternative's direction.  Under a
sensitivity parameter ``gamma`` the signs are dominated by independent
Bernoulli(kappa) draws, ``kappa = gamma / (1 + gamma)``, which gives the
normal-approximation upper bound in :func:`worst_case_p`.
"""

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy import special, stats as sps
from sklearn.base import BaseEstimator

from .exceptions import (
    AllZeroDiffs,
    BadDraws,
    BadParams,
    CrossScreenError,
    EmptyGroup,
    MissingOutcome,
    NTooSmall,
    TooLargeForExact,
    ZeroVariance,
)
from .validation import check_diffs, check_direction, check_gamma, kappa

KINDS = ("signed_rank", "permutation_t", "trimmed_halfmedian", "ustat", "rank_sum")
ALIASES = {
    "W": "signed_rank",
    "t": "permutation_t",
    "i": "trimmed_halfmedian",
    "U": "ustat",
    "wilcoxon": "signed_rank",
}
EXACT_MAX_N = 25
RANK_SUM_EXACT_MAX = 12


@dataclass(frozen=True)
class UStatParams:
    m: int
    m_lo: int
    m_hi: int

    def __post_init__(self):
        if not all(isinstance(v, (int, np.integer)) and not isinstance(v, bool)
                   for v in (self.m, self.m_lo, self.m_hi)):
            raise BadParams(f"U-statistic parameters must be integers, got {self}")
        if not 1 <= self.m_lo <= self.m_hi <= self.m:
            raise BadParams(f"need 1 <= m_lo <= m_hi <= m, got ({self.m}, {self.m_lo}, {self.m_hi})")


@dataclass(frozen=True)
class StatisticKind:
    """Which sign-score statistic to use.

    ``rank_sum`` is the two-sample effect-modification test; it compares
    pair differences between the pairs where the boolean pair-level
    ``modifier`` is true (group A) and the rest (group B).
    """

    kind: str
    params: UStatParams = None
    modifier: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParams(f"unknown statistic {self.kind!r}")
        if self.kind == "ustat" and not isinstance(self.params, UStatParams):
            raise BadParams("ustat needs UStatParams")
        if self.kind != "ustat" and self.params is not None:
            raise BadParams(f"{self.kind} takes no U-statistic parameters")
        if self.kind == "rank_sum" and not self.modifier:
            raise BadParams("rank_sum needs a modifier name")
        if self.kind != "rank_sum" and self.modifier is not None:
            raise BadParams(f"{self.kind} takes no modifier")

    @classmethod
    def parse(cls, value):
        """Build from a name (``"W"``, ``"signed_rank"``, ...) or a plan-file dict."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            value = {"kind": value}
        kind = ALIASES.get(value.get("kind"), value.get("kind"))
        if kind == "ustat":
            try:
                params = UStatParams(value["m"], value["m_lo"], value["m_hi"])
            except KeyError as exc:
                raise BadParams(f"ustat needs m, m_lo, m_hi (missing {exc})") from None
            return cls("ustat", params)
        return cls(kind, modifier=value.get("modifier"))

    def to_dict(self):
        out = {"kind": self.kind}
        if self.params is not None:
            out.update(m=self.params.m, m_lo=self.params.m_lo, m_hi=self.params.m_hi)
        if self.modifier is not None:
            out["modifier"] = self.modifier
        return out

    @property
    def label(self):
        if self.kind == "ustat":
            p = self.params
            return f"ustat({p.m},{p.m_lo},{p.m_hi})"
        if self.kind == "rank_sum":
            return f"rank_sum[{self.modifier}]"
        return self.kind


SIGNED_RANK = StatisticKind("signed_rank")
PERMUTATION_T = StatisticKind("permutation_t")
TRIMMED = StatisticKind("trimmed_halfmedian")


@dataclass(frozen=True)
class TestSpec:
    __test__ = False

    outcome: str
    statistic: StatisticKind
    direction: str = "greater"
    gamma: float = 1.0

    def __post_init__(self):
        check_direction(self.direction)
        check_gamma(self.gamma)
        if not isinstance(self.statistic, StatisticKind):
            object.__setattr__(self, "statistic", StatisticKind.parse(self.statistic))

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "statistic": self.statistic.to_dict(),
            "direction": self.direction,
            "gamma": self.gamma,
        }


@dataclass(frozen=True, eq=False)
class PairedOutcome:
    """Treated-minus-control differences for one outcome.

    `groups` maps a modifier name to a boolean array aligned with `diffs`.
    """

    outcome_name: str
    diffs: np.ndarray
    n_dropped_missing: int = 0
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "diffs", check_diffs(self.diffs, min_size=0))
        groups = {k: np.asarray(v, dtype=bool) for k, v in self.groups.items()}
        for k, v in groups.items():
            if v.shape != self.diffs.shape:
                raise CrossScreenError(f"modifier {k!r} is not aligned with the differences")
        object.__setattr__(self, "groups", groups)

    def __len__(self):
        return self.diffs.size


@dataclass(frozen=True, eq=False)
class ScoreVector:
    q: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if self.q.shape != self.s.shape:
            raise CrossScreenError("scores and signs differ in length")
        if np.any(self.q < 0):
            raise CrossScreenError("scores must be nonnegative")

    def __len__(self):
        return self.q.size

    @property
    def statistic(self):
        return float(np.dot(self.s, self.q))


@dataclass(frozen=True)
class SensitivityResult:
    gamma: float
    kappa: float
    statistic_value: float
    expectation: float
    variance: float
    deviate: float
    p_upper: float
    n: int = 0
    approximate: bool = False

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# scores


@lru_cache(maxsize=256)
def _ustat_scores_cached(n, m, m_lo, m_hi):
    total = math.comb(n, m)
    out = []
    for r in range(1, n + 1):
        num = sum(math.comb(r - 1, l - 1) * math.comb(n - r, m - l) for l in range(m_lo, m_hi + 1))
        out.append(num / total)
    return tuple(out)


def ustat_scores(n, params):
    """Scores of the (m, m_lo, m_hi) U-statistic by rank ``r = 1..n``.

    ``q_r`` is the probability that, in a random size-``m`` subset of the
    ``n`` ranked pairs, the pair of rank ``r`` is included and its rank
    within the subset lies in ``[m_lo, m_hi]``.
    """
    if not isinstance(params, UStatParams):
        raise BadParams(f"expected UStatParams, got {params!r}")
    if n < params.m:
        raise NTooSmall(f"U-statistic with m={params.m} needs at least {params.m} nonzero pairs, got {n}")
    return np.array(_ustat_scores_cached(int(n), params.m, params.m_lo, params.m_hi))


def _tie_averaged(base, a):
    # positions min..max share a tied |Y| value; average base over them
    lo = sps.rankdata(a, method="min").astype(int)
    hi = sps.rankdata(a, method="max").astype(int)
    csum = np.concatenate(([0.0], np.cumsum(base)))
    return (csum[hi] - csum[lo - 1]) / (hi - lo + 1)


def _abs_scores(a, kind):
    """Scores for absolute differences `a` (zeros already removed for rank kinds)."""
    if kind.kind == "signed_rank":
        return sps.rankdata(a)
    if kind.kind == "ustat":
        base = ustat_scores(a.size, kind.params)
        if np.unique(a).size == a.size:
            return base[sps.rankdata(a, method="ordinal").astype(int) - 1]
        return _tie_averaged(base, a)
    if kind.kind == "permutation_t":
        return a.copy()
    if kind.kind == "trimmed_halfmedian":
        half = 0.5 * np.median(a)
        return np.where(a >= half, a, 0.0)
    raise BadParams(f"{kind.kind} is not a sign-score statistic")


def _prepare(diffs, kind):
    y = check_diffs(diffs)
    kind = StatisticKind.parse(kind)
    if kind.kind == "rank_sum":
        raise BadParams("rank_sum is a two-sample test; use rank_sum() or run_test()")
    if kind.kind in ("signed_rank", "ustat"):
        y = y[y != 0]
        if y.size == 0:
            raise AllZeroDiffs(f"all differences are zero; {kind.label} is undefined")
    return y, _abs_scores(np.abs(y), kind)


def make_scores(diffs, kind, direction="greater"):
    """Scores and alternative-direction signs for one outcome's differences."""
    check_direction(direction)
    y, q = _prepare(diffs, kind)
    s = (y > 0) if direction == "greater" else (y < 0)
    return ScoreVector(q=q, s=s.astype(np.int8))


def _bound(t, q, gamma):
    k = kappa(gamma)
    top = float(q.max()) if q.size else 0.0
    if top <= 0:
        raise ZeroVariance("all scores are zero")
    # the deviate is scale-free; rescaling keeps tiny scores from underflowing
    u = q / top
    dev = (t / top - k * float(u.sum())) / math.sqrt(k * (1 - k) * float(np.dot(u, u)))
    exp = k * float(q.sum())
    var = k * (1 - k) * float(np.dot(q, q))
    p = float(special.ndtr(-dev))
    return SensitivityResult(
        gamma=float(gamma), kappa=k, statistic_value=float(t), expectation=exp,
        variance=var, deviate=dev, p_upper=p, n=int(q.size),
    )


def worst_case_p(sv, gamma=1.0):
    """Upper bound on the one-sided p-value when hidden bias is at most `gamma`."""
    gamma = check_gamma(gamma)
    return _bound(sv.statistic, sv.q, gamma)


def one_sided_pvalues(diffs, kind, gamma=1.0):
    """Worst-case p-values for both directions, sharing one score computation."""
    gamma = check_gamma(gamma)
    y, q = _prepare(diffs, kind)
    t_up = float(q[y > 0].sum())
    t_down = float(q[y < 0].sum())
    return _bound(t_up, q, gamma).p_upper, _bound(t_down, q, gamma).p_upper


def _subset_sums(values):
    sums = np.zeros(1)
    for v in values:
        sums = np.concatenate((sums, sums + v))
    return sums


def exact_p(sv, *, method="auto", draws=None, seed=None):
    """P(T* >= T) when each pair's sign is an independent fair coin.

    ``method="enumerate"`` is exact over all 2^N sign patterns (N <= 25);
    ``"monte_carlo"`` needs `draws` and `seed`.  ``"auto"`` enumerates when
    it can.
    """
    q = np.asarray(sv.q, dtype=float)
    n = q.size
    t = sv.statistic
    tol = 1e-9 * max(1.0, float(q.sum()))
    if method == "auto":
        method = "enumerate" if n <= EXACT_MAX_N else "monte_carlo"
    if method == "enumerate":
        if n > EXACT_MAX_N:
            raise TooLargeForExact(f"enumeration limited to N <= {EXACT_MAX_N}, got {n}")
        # meet in the middle: 2^(N/2) sums on each side
        left = _subset_sums(q[: n // 2])
        right = np.sort(_subset_sums(q[n // 2:]))
        idx = np.searchsorted(right, t - tol - left, side="left")
        count = int((right.size - idx).sum())
        return count / float(2 ** n)
    if method == "monte_carlo":
        if draws is None or seed is None:
            raise BadDraws("Monte Carlo needs explicit draws and seed")
        draws = int(draws)
        if draws < 1:
            raise BadDraws("draws must be positive")
        rng = np.random.default_rng(seed)
        count, done = 0, 0
        while done < draws:
            size = min(65536, draws - done)
            flips = rng.integers(0, 2, size=(size, n), dtype=np.int8)
            count += int(np.count_nonzero(flips @ q >= t - tol))
            done += size
        return count / draws
    raise BadParams(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# two-sample rank-sum test for effect modification


def _rank_sum_moments(ranks, n_a):
    n = ranks.size
    n_b = n - n_a
    _, counts = np.unique(ranks, return_counts=True)
    ties = float(np.sum(counts ** 3 - counts))
    exp = n_a * (n + 1) / 2.0
    var = n_a * n_b / 12.0 * ((n + 1) - ties / (n * (n - 1))) if n > 1 else 0.0
    return exp, var


def _check_groups(group_a, group_b):
    a = check_diffs(group_a, min_size=0, name="groupA")
    b = check_diffs(group_b, min_size=0, name="groupB")
    if a.size == 0 or b.size == 0:
        raise EmptyGroup("both groups need at least one pair")
    return a, b


def rank_sum(group_a, group_b, direction="greater"):
    """One-sided Wilcoxon rank-sum p-value; "greater" means A tends larger.

    Exact (midranks, full enumeration) when the pooled size is at most 12,
    otherwise normal with tie and continuity corrections.
    """
    check_direction(direction)
    a, b = _check_groups(group_a, group_b)
    ranks = sps.rankdata(np.concatenate((a, b)))
    w = float(ranks[: a.size].sum())
    n = ranks.size
    if n <= RANK_SUM_EXACT_MAX:
        sums = np.array([ranks[list(c)].sum() for c in combinations(range(n), a.size)])
        if direction == "greater":
            hits = np.count_nonzero(sums >= w - 1e-9)
        else:
            hits = np.count_nonzero(sums <= w + 1e-9)
        return hits / sums.size
    exp, var = _rank_sum_moments(ranks, a.size)
    if var <= 0:
        return 1.0
    if direction == "greater":
        return float(special.ndtr(-(w - exp - 0.5) / math.sqrt(var)))
    return float(special.ndtr((w - exp + 0.5) / math.sqrt(var)))


def rank_sum_worst_case(group_a, group_b, gamma, seed, draws=10_000, direction="greater"):
    """Monte Carlo approximation to the rank-sum p-value under bias up to `gamma`.

    Each draw thins the signs that favor the alternative (A positive, B
    negative for "greater"): each such sign is flipped with probability
    ``(gamma - 1) / (2 gamma)``, the rate that brings a kappa-biased sign back
    to a fair coin.  The rank sum of the thinned data is compared with a
    random relabelling of the same data.  Returns the one-sided 95%
    Clopper-Pearson upper limit of the exceedance proportion.  At gamma = 1
    no sign is touched and this is a Monte Carlo rank-sum permutation test.
    """
    gamma = check_gamma(gamma)
    check_direction(direction)
    if draws is None or int(draws) < 10_000:
        raise BadDraws(f"draws must be at least 10000, got {draws}")
    draws = int(draws)
    a, b = _check_groups(group_a, group_b)
    y = np.concatenate((a, b))
    n, n_a = y.size, a.size
    in_a = np.arange(n) < n_a
    sign = 1.0 if direction == "greater" else -1.0
    favorable = np.where(in_a, sign * y > 0, sign * y < 0)
    flip_p = (gamma - 1.0) / (2.0 * gamma)
    rng = np.random.default_rng(seed)
    hits, done = 0, 0
    while done < draws:
        size = min(2000, draws - done)
        flips = favorable & (rng.random((size, n)) < flip_p)
        vals = np.where(flips, -y, y)
        ranks = sps.rankdata(vals, axis=1)
        observed = ranks[:, :n_a].sum(axis=1)
        labels = rng.permuted(np.broadcast_to(in_a, (size, n)), axis=1)
        perm = (ranks * labels).sum(axis=1)
        if direction == "greater":
            hits += int(np.count_nonzero(perm >= observed - 1e-9))
        else:
            hits += int(np.count_nonzero(perm <= observed + 1e-9))
        done += size
    if hits >= draws:
        return 1.0
    return float(sps.beta.ppf(0.95, hits + 1, draws - hits))


# --------------------------------------------------------------------------
# dispatch


def run_test(pairs, spec, *, seed=0, draws=10_000):
    """Evaluate one test specification on one outcome's paired differences."""
    if pairs.outcome_name != spec.outcome:
        raise MissingOutcome(f"test is for {spec.outcome!r}, data is {pairs.outcome_name!r}")
    kind = spec.statistic
    if kind.kind == "rank_sum":
        if kind.modifier not in pairs.groups:
            raise MissingOutcome(f"no modifier {kind.modifier!r} for outcome {spec.outcome!r}")
        mask = pairs.groups[kind.modifier]
        a, b = pairs.diffs[mask], pairs.diffs[~mask]
        _check_groups(a, b)
        ranks = sps.rankdata(np.concatenate((a, b)))
        w = float(ranks[: a.size].sum())
        exp, var = _rank_sum_moments(ranks, a.size)
        dev = (w - exp) / math.sqrt(var) if var > 0 else 0.0
        if spec.gamma == 1:
            p = rank_sum(a, b, spec.direction)
        else:
            p = rank_sum_worst_case(a, b, spec.gamma, seed, draws, spec.direction)
        return SensitivityResult(
            gamma=spec.gamma, kappa=kappa(spec.gamma), statistic_value=w, expectation=exp,
            variance=var, deviate=dev, p_upper=p, n=int(ranks.size), approximate=spec.gamma != 1,
        )
    sv = make_scores(pairs.diffs, kind, spec.direction)
    return worst_case_p(sv, spec.gamma)


class SensitivityTest(BaseEstimator):
    """Estimator wrapper: ``fit`` on one outcome's paired differences.

    Parameters
    ----------
    statistic : str, dict or StatisticKind
        ``"W"``/``"signed_rank"``, ``"t"``/``"permutation_t"``,
        ``"i"``/``"trimmed_halfmedian"`` or a ustat dict.
    direction : {"greater", "less"}
    gamma : float
        Sensitivity parameter, at least 1.

    Attributes
    ----------
    result_ : SensitivityResult
    p_value_ : float
    scores_ : ScoreVector
    """

    def __init__(self, statistic="signed_rank", direction="greater", gamma=1.0):
        self.statistic = statistic
        self.direction = direction
        self.gamma = gamma

    def fit(self, X, y=None):
        kind = StatisticKind.parse(self.statistic)
        self.scores_ = make_scores(X, kind, self.direction)
        self.result_ = worst_case_p(self.scores_, self.gamma)
        self.p_value_ = self.result_.p_upper
        return self

    def sensitivity_curve(self, gammas):
        """Worst-case p-values of the fitted data over a grid of gammas."""
        return np.array([worst_case_p(self.scores_, g).p_upper for g in gammas])
