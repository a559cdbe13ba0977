"""Risk-set matching and covariate balance.

Treated subjects are processed in order of treatment time (ties by id).
Each one is paired with the nearest subject that is still unused and not
yet treated at that time, using only covariates observed by then.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import CrossScreenError, EmptyPairs, MalformedRow, NoCovariates, UnknownColumn
from .stats import PairedOutcome

DISTANCES = ("mahalanobis", "normalized-euclidean")
RIDGE = 1e-8
BALANCE_THRESHOLD = 0.2


@dataclass(frozen=True)
class MatchConfig:
    covariate_names: tuple
    distance: str = "mahalanobis"
    caliper: float = None
    time_window: float = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if not self.covariate_names:
            raise NoCovariates("at least one matching covariate is required")
        if self.distance not in DISTANCES:
            raise CrossScreenError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.caliper is not None and not self.caliper >= 0:
            raise CrossScreenError(f"caliper must be nonnegative, got {self.caliper}")
        if self.time_window is not None and not self.time_window >= 0:
            raise CrossScreenError(f"time_window must be nonnegative, got {self.time_window}")


@dataclass(frozen=True)
class MatchedPair:
    treated_id: str
    control_id: str
    index_time: float
    distance: float


@dataclass(frozen=True)
class MatchResult:
    """Pairs plus the treated subjects left unmatched.

    `fallback_used` is set when the covariance matrix was singular and the
    normalized Euclidean distance replaced Mahalanobis.
    """

    pairs: tuple
    unmatched: tuple
    distance: str
    fallback_used: bool = False

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def mahalanobis(x, y, inv_cov):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(math.sqrt(max(0.0, d @ inv_cov @ d)))


class _Metric:
    """Distance on a subset of the matching covariates."""

    def __init__(self, X, kind):
        self.kind = kind
        complete = X[~np.isnan(X).any(axis=1)]
        self.fallback = False
        if kind == "mahalanobis":
            if complete.shape[0] < 2:
                self.fallback = True
            else:
                self.cov = np.atleast_2d(np.cov(complete, rowvar=False))
                if np.linalg.matrix_rank(self.cov) < X.shape[1]:
                    self.fallback = True
        if self.kind == "normalized-euclidean" or self.fallback:
            sd = np.nanstd(X, axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
            self.scale = np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)
        self._inv = {}

    def _weights(self, cols):
        key = tuple(cols)
        if key not in self._inv:
            if self.kind == "mahalanobis" and not self.fallback:
                sub = self.cov[np.ix_(cols, cols)]
                self._inv[key] = np.linalg.inv(sub + RIDGE * np.eye(len(cols)))
            else:
                self._inv[key] = np.diag(1.0 / self.scale[cols] ** 2)
        return self._inv[key]

    def distances(self, x, Y, cols):
        W = self._weights(cols)
        d = Y[:, cols] - x[cols]
        return np.sqrt(np.maximum(0.0, np.einsum("ij,jk,ik->i", d, W, d)))


def risk_set_match(dataset, config):
    """Greedy 1:1 risk-set matching.

    Returns a :class:`MatchResult` that iterates over :class:`MatchedPair`.
    A control is eligible for a treated subject with index time ``t`` when it
    is unused and either never treated or treated strictly after ``t``
    (and, with `time_window`, no later than ``t + time_window``).
    """
    unknown = [c for c in config.covariate_names if c not in dataset.covariate_times]
    if unknown:
        raise UnknownColumn(f"matching covariates not in dataset: {unknown}")
    names = list(config.covariate_names)
    times = np.array([dataset.covariate_times[c] for c in names])
    subjects = sorted(dataset.subjects, key=lambda s: s.id)
    X = dataset.covariate_matrix(names, subjects)
    metric = _Metric(X, config.distance)

    ttime = np.array([s.treatment_time if s.treated else np.inf for s in subjects], dtype=float)
    treated_order = sorted(
        (i for i, s in enumerate(subjects) if s.treated), key=lambda i: (ttime[i], subjects[i].id)
    )
    used = np.zeros(len(subjects), dtype=bool)
    pairs, unmatched = [], []
    for i in treated_order:
        if used[i]:
            # already serving as a control
            continue
        t = ttime[i]
        cols = np.flatnonzero(times <= t)
        if cols.size == 0:
            raise NoCovariates(f"no matching covariate is observed by time {t} (subject {subjects[i].id})")
        if np.isnan(X[i, cols]).any():
            unmatched.append(subjects[i].id)
            continue
        eligible = ~used & (ttime > t) & ~np.isnan(X[:, cols]).any(axis=1)
        eligible[i] = False
        if config.time_window is not None:
            eligible &= np.isinf(ttime) | (ttime - t <= config.time_window)
        cand = np.flatnonzero(eligible)
        if cand.size == 0:
            unmatched.append(subjects[i].id)
            continue
        d = metric.distances(X[i], X[cand], cols)
        # argmin takes the first minimum; candidates are in id order
        j = int(np.argmin(d))
        if config.caliper is not None and d[j] > config.caliper:
            unmatched.append(subjects[i].id)
            continue
        c = cand[j]
        used[i] = used[c] = True
        pairs.append(MatchedPair(subjects[i].id, subjects[c].id, float(t), float(d[j])))
    distance = "normalized-euclidean" if metric.fallback else config.distance
    return MatchResult(tuple(pairs), tuple(unmatched), distance, metric.fallback)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    pre_match_std_diff: float
    post_match_std_diff: float

    @property
    def flagged(self):
        d = self.post_match_std_diff
        return d is not None and abs(d) >= BALANCE_THRESHOLD


@dataclass(frozen=True)
class BalanceTable:
    rows: tuple

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, name):
        for row in self.rows:
            if row.covariate == name:
                return row
        raise KeyError(name)

    @property
    def flagged(self):
        return tuple(r.covariate for r in self.rows if r.flagged)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["covariate", "pre_match_std_diff", "post_match_std_diff", "flag"])
        for r in self.rows:
            w.writerow([r.covariate, _fmt(r.pre_match_std_diff), _fmt(r.post_match_std_diff),
                        "imbalanced" if r.flagged else ""])
        return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(float(v))


def _std_diff(a, b, sd):
    if sd is None or a.size == 0 or b.size == 0:
        return None
    return float((np.mean(a) - np.mean(b)) / sd)


def balance(dataset, pairs, covariates=None):
    """Standardized differences before and after matching.

    Both columns divide by the pre-match pooled SD
    ``sqrt((var_treated + var_untreated) / 2)`` so they are comparable.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyPairs("balance needs at least one matched pair")
    covariates = list(dataset.covariate_times) if covariates is None else list(covariates)
    by_id = dataset.by_id()
    treated = [s for s in dataset.subjects if s.treated]
    controls = [s for s in dataset.subjects if not s.treated]
    rows = []
    for name in covariates:
        if name not in dataset.covariate_times:
            raise UnknownColumn(f"unknown covariate {name!r}")

        def values(group):
            v = np.array([s.covariates.get(name) for s in group], dtype=float)
            return v[~np.isnan(v)]

        t_all, c_all = values(treated), values(controls)
        sd = None
        if t_all.size > 1 and c_all.size > 1:
            pooled = math.sqrt((np.var(t_all, ddof=1) + np.var(c_all, ddof=1)) / 2)
            sd = pooled if pooled > 0 else None
        t_m = values([by_id[p.treated_id] for p in pairs])
        c_m = values([by_id[p.control_id] for p in pairs])
        rows.append(BalanceRow(name, _std_diff(t_all, c_all, sd), _std_diff(t_m, c_m, sd)))
    return BalanceTable(tuple(rows))


def threshold_modifier(covariate, threshold):
    """Pair-level group: the treated subject's `covariate` is at least `threshold`.

    ``covariate="treat_time"`` uses the index time.
    """

    def modifier(subject):
        v = subject.treatment_time if covariate == "treat_time" else subject.covariates.get(covariate)
        return v is not None and v >= threshold

    return modifier


def paired_outcomes(dataset, pairs, outcomes=None, modifiers=None):
    """Treated-minus-control differences per outcome.

    A pair missing either outcome value is dropped for that outcome only.
    `modifiers` maps a name to a callable of the treated subject returning a
    bool; the result is attached as a pair-level group.
    """
    outcomes = dataset.outcome_names if outcomes is None else tuple(outcomes)
    modifiers = modifiers or {}
    by_id = dataset.by_id()
    out = {}
    for name in outcomes:
        if name not in dataset.outcome_names:
            raise UnknownColumn(f"unknown outcome {name!r}")
        diffs, groups, dropped = [], {k: [] for k in modifiers}, 0
        for p in pairs:
            t, c = by_id[p.treated_id], by_id[p.control_id]
            yt, yc = t.outcomes.get(name), c.outcomes.get(name)
            if yt is None or yc is None:
                dropped += 1
                continue
            diffs.append(yt - yc)
            for k, fn in modifiers.items():
                groups[k].append(bool(fn(t)))
        out[name] = PairedOutcome(name, np.array(diffs, dtype=float), dropped, groups)
    return out


def pairs_to_csv(pairs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["treated_id", "control_id", "index_time", "distance"])
    for p in pairs:
        w.writerow([p.treated_id, p.control_id, repr(float(p.index_time)), repr(float(p.distance))])
    return buf.getvalue()


def read_pairs(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["treated_id", "control_id", "index_time", "distance"]:
        raise MalformedRow(1, "pairs file needs header treated_id,control_id,index_time,distance")
    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise MalformedRow(lineno, f"expected 4 fields, got {len(row)}")
        try:
            pairs.append(MatchedPair(row[0], row[1], float(row[2]), float(row[3])))
        except ValueError:
            raise MalformedRow(lineno, "index_time and distance must be numbers") from None
    return pairs


class RiskSetMatcher(BaseEstimator):
    """Estimator front end to :func:`risk_set_match`.

    ``fit(dataset)`` builds the pairs; ``transform(dataset)`` returns the
    per-outcome paired differences for those pairs.
    """

    def __init__(self, covariates=None, distance="mahalanobis", caliper=None, time_window=None):
        self.covariates = covariates
        self.distance = distance
        self.caliper = caliper
        self.time_window = time_window

    def fit(self, X, y=None):
        names = X.covariate_names if self.covariates is None else self.covariates
        config = MatchConfig(names, self.distance, self.caliper, self.time_window)
        self.result_ = risk_set_match(X, config)
        self.pairs_ = list(self.result_.pairs)
        self.unmatched_ = list(self.result_.unmatched)
        self.fallback_used_ = self.result_.fallback_used
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("RiskSetMatcher is not fitted yet; call fit first")

    def transform(self, X, outcomes=None, modifiers=None):
        self._check_fitted()
        return paired_outcomes(X, self.pairs_, outcomes, modifiers)

    def balance(self, X):
        self._check_fitted()
        names = X.covariate_names if self.covariates is None else self.covariates
        return balance(X, self.pairs_, names)
