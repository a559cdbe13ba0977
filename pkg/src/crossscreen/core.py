"""Study units, CSV ingestion, outcome-blinded views and data splitting.

The subject CSV has a header row with the required columns
``id,split,treated,treat_time``.  Covariates are ``cov:<name>[@<time>]``
(no ``@`` means a baseline covariate), outcomes ``out:<name>`` and optional
fallback sources ``out:<name>#fallback``.  Empty cells are missing values.
"""

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    BadFractions,
    CrossScreenError,
    DuplicateId,
    MalformedRow,
    MissingSplitLevel,
    TreatedWithoutTime,
    UnknownColumn,
)

REQUIRED_COLUMNS = ("id", "split", "treated", "treat_time")
BASELINE = -math.inf


@dataclass(frozen=True)
class Subject:
    id: str
    split_level: object
    treated: bool
    treatment_time: object = None
    covariates: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)
    fallbacks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.treated and self.treatment_time is None:
            raise TreatedWithoutTime(f"subject {self.id} is treated but has no treat_time")
        if not self.treated and self.treatment_time is not None:
            raise CrossScreenError(f"subject {self.id} is untreated but has a treat_time")


@dataclass(frozen=True)
class Dataset:
    """Validated collection of subjects plus the column schemas."""

    subjects: tuple
    covariate_times: dict
    outcome_names: tuple
    fallback_outcomes: tuple = ()
    merged_fallbacks: tuple = ()
    split_factor: str = "split"

    def __post_init__(self):
        seen = set()
        for s in self.subjects:
            if s.id in seen:
                raise DuplicateId(f"duplicate id {s.id!r}")
            seen.add(s.id)
            unknown = set(s.covariates) - set(self.covariate_times)
            unknown |= set(s.outcomes) - set(self.outcome_names)
            if unknown:
                raise UnknownColumn(f"subject {s.id} has unknown fields {sorted(unknown)}")

    def __len__(self):
        return len(self.subjects)

    @property
    def ids(self):
        return tuple(s.id for s in self.subjects)

    @property
    def covariate_names(self):
        return tuple(self.covariate_times)

    @property
    def split_levels(self):
        return tuple(sorted({s.split_level for s in self.subjects if s.split_level is not None}, key=str))

    def by_id(self):
        return {s.id: s for s in self.subjects}

    def subset(self, ids):
        ids = set(ids)
        return replace(self, subjects=tuple(s for s in self.subjects if s.id in ids))

    def covariate_matrix(self, names, subjects=None):
        """Float matrix of the named covariates; missing values become NaN."""
        subjects = self.subjects if subjects is None else subjects
        out = np.full((len(subjects), len(names)), np.nan)
        for i, s in enumerate(subjects):
            for j, name in enumerate(names):
                v = s.covariates.get(name)
                if v is not None:
                    out[i, j] = v
        return out

    def to_csv(self):
        return emit(self)

    def digest(self):
        return hashlib.sha256(emit(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True, slots=True)
class BlindedSubject:
    id: str
    split_level: object
    treated: bool
    treatment_time: object
    covariates: dict


@dataclass(frozen=True)
class BlindedView:
    """Covariates and treatment only.  There is no outcome field to reach."""

    subjects: tuple
    covariate_times: dict

    def __len__(self):
        return len(self.subjects)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cov_names = list(self.covariate_times)
        writer.writerow(list(REQUIRED_COLUMNS) + [_cov_header(n, self.covariate_times[n]) for n in cov_names])
        for s in self.subjects:
            writer.writerow(
                [s.id, _fmt(s.split_level), "1" if s.treated else "0", _fmt(s.treatment_time)]
                + [_fmt(s.covariates.get(n)) for n in cov_names]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class SplitAssignment:
    parts: dict  # label -> frozenset of ids

    def __post_init__(self):
        seen = set()
        for ids in self.parts.values():
            if seen & ids:
                raise CrossScreenError("split parts overlap")
            seen |= ids

    @property
    def labels(self):
        return tuple(self.parts)

    def all_ids(self):
        return frozenset().union(*self.parts.values()) if self.parts else frozenset()

    def subset(self, dataset, label):
        return dataset.subset(self.parts[label])


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cov_header(name, time):
    # the stored name already carries its "@time" suffix when it had one
    return f"cov:{name}"


def _parse_number(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(line, f"column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedRow(line, f"column {column!r}: non-finite value {text!r}")
    return value


def _parse_header(header, covariates, outcomes):
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise MalformedRow(1, f"missing required columns {missing}")
    if len(set(header)) != len(header):
        raise MalformedRow(1, "duplicate column names")
    cov_times, out_names, fallback_names = {}, [], []
    for col in header:
        if col in REQUIRED_COLUMNS:
            continue
        if col.startswith("cov:"):
            name = col[4:]
            base, _, when = name.partition("@")
            if not base:
                raise UnknownColumn(f"bad covariate column {col!r}")
            if when:
                try:
                    cov_times[name] = float(int(when))
                except ValueError:
                    raise UnknownColumn(f"covariate time in {col!r} must be an integer") from None
            else:
                cov_times[name] = BASELINE
        elif col.startswith("out:") and col.endswith("#fallback"):
            fallback_names.append(col[4:-len("#fallback")])
        elif col.startswith("out:"):
            out_names.append(col[4:])
        else:
            raise UnknownColumn(f"unknown column {col!r}")
    if covariates is not None:
        extra = sorted(set(cov_times) - set(covariates))
        if extra:
            raise UnknownColumn(f"covariates not in schema: {extra}")
    if outcomes is not None:
        extra = sorted(set(out_names) - set(outcomes))
        if extra:
            raise UnknownColumn(f"outcomes not in schema: {extra}")
    orphan = sorted(set(fallback_names) - set(out_names))
    if orphan:
        raise UnknownColumn(f"fallback columns without outcome: {orphan}")
    return cov_times, out_names, fallback_names


def read_csv(text, *, merge_fallback=(), covariates=None, outcomes=None, split_factor="split"):
    """Parse subject CSV text into a :class:`Dataset`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedRow(1, "empty file")
    header = [h.strip() for h in rows[0]]
    cov_times, out_names, fallback_names = _parse_header(header, covariates, outcomes)
    merge_fallback = tuple(merge_fallback)
    bad = sorted(set(merge_fallback) - set(fallback_names))
    if bad:
        raise UnknownColumn(f"no fallback column for outcomes {bad}")

    subjects = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(lineno, f"expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, (c.strip() for c in row)))
        sid = rec["id"]
        if not sid:
            raise MalformedRow(lineno, "empty id")
        if sid in seen:
            raise DuplicateId(f"duplicate id {sid!r} on line {lineno}")
        seen.add(sid)
        if rec["treated"] not in ("0", "1"):
            raise MalformedRow(lineno, f"treated must be 0 or 1, got {rec['treated']!r}")
        treated = rec["treated"] == "1"
        ttime = _parse_number(rec["treat_time"], lineno, "treat_time") if rec["treat_time"] else None
        if treated and ttime is None:
            raise TreatedWithoutTime(f"line {lineno}: treated subject {sid!r} has no treat_time")
        if not treated and ttime is not None:
            raise MalformedRow(lineno, f"untreated subject {sid!r} has a treat_time")
        covs = {
            name: _parse_number(rec[f"cov:{name}"], lineno, f"cov:{name}") if rec[f"cov:{name}"] else None
            for name in cov_times
        }
        outs, falls = {}, {}
        for name in out_names:
            cell = rec[f"out:{name}"]
            outs[name] = _parse_number(cell, lineno, f"out:{name}") if cell else None
        for name in fallback_names:
            cell = rec[f"out:{name}#fallback"]
            falls[name] = _parse_number(cell, lineno, f"out:{name}#fallback") if cell else None
            if name in merge_fallback and outs[name] is None:
                outs[name] = falls[name]
        subjects.append(
            Subject(
                id=sid,
                split_level=rec["split"] or None,
                treated=treated,
                treatment_time=ttime,
                covariates=covs,
                outcomes=outs,
                fallbacks=falls,
            )
        )
    return Dataset(
        subjects=tuple(subjects),
        covariate_times=cov_times,
        outcome_names=tuple(out_names),
        fallback_outcomes=tuple(fallback_names),
        merged_fallbacks=merge_fallback,
        split_factor=split_factor,
    )


def ingest(path, *, merge_fallback=(), covariates=None, outcomes=None, split_factor="split"):
    """Read and validate a subject CSV file.

    Parameters
    ----------
    path : str or path-like
    merge_fallback : iterable of str
        Outcomes whose missing values are filled from ``out:<name>#fallback``.
    covariates, outcomes : iterable of str, optional
        Declared schema.  Columns outside it raise :class:`UnknownColumn`.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return read_csv(
        text,
        merge_fallback=merge_fallback,
        covariates=covariates,
        outcomes=outcomes,
        split_factor=split_factor,
    )


def emit(dataset):
    """Canonical CSV text for a dataset (``ingest`` round-trips it)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cov_names = list(dataset.covariate_times)
    header = list(REQUIRED_COLUMNS)
    header += [_cov_header(n, dataset.covariate_times[n]) for n in cov_names]
    header += [f"out:{n}" for n in dataset.outcome_names]
    header += [f"out:{n}#fallback" for n in dataset.fallback_outcomes]
    writer.writerow(header)
    for s in dataset.subjects:
        writer.writerow(
            [s.id, _fmt(s.split_level), "1" if s.treated else "0", _fmt(s.treatment_time)]
            + [_fmt(s.covariates.get(n)) for n in cov_names]
            + [_fmt(s.outcomes.get(n)) for n in dataset.outcome_names]
            + [_fmt(s.fallbacks.get(n)) for n in dataset.fallback_outcomes]
        )
    return buf.getvalue()


def write_csv(dataset, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(emit(dataset))


def blind(dataset):
    """Project a dataset onto covariates and treatment, dropping outcomes."""
    return BlindedView(
        subjects=tuple(
            BlindedSubject(s.id, s.split_level, s.treated, s.treatment_time, dict(s.covariates))
            for s in dataset.subjects
        ),
        covariate_times=dict(dataset.covariate_times),
    )


def split(dataset, factor=None):
    """Partition subject ids by the levels of `factor`.

    `factor` is the dataset's split factor (default) or a covariate name,
    in which case each distinct covariate value is a level.
    """
    factor = dataset.split_factor if factor is None else factor
    if factor == dataset.split_factor:
        levels = {s.id: s.split_level for s in dataset.subjects}
    elif factor in dataset.covariate_times:
        levels = {s.id: (None if s.covariates.get(factor) is None else _fmt(s.covariates[factor]))
                  for s in dataset.subjects}
    else:
        raise UnknownColumn(f"unknown split factor {factor!r}")
    missing = [sid for sid, lvl in levels.items() if lvl is None]
    if missing:
        raise MissingSplitLevel(missing)
    parts = {}
    for sid, lvl in levels.items():
        parts.setdefault(lvl, set()).add(sid)
    return SplitAssignment({lvl: frozenset(parts[lvl]) for lvl in sorted(parts, key=str)})


def largest_remainder(n, fractions):
    """Integer sizes summing to `n`, proportional to `fractions`."""
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    short = n - sum(sizes)
    # ties go to the earlier part
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def check_fractions(fractions):
    fractions = [float(f) for f in fractions]
    if not fractions or any(not f > 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise BadFractions(f"fractions must be positive and sum to 1, got {fractions}")
    return fractions


def random_split(dataset, fractions, seed):
    """Randomly partition the subjects into parts sized by `fractions`."""
    fractions = check_fractions(fractions)
    ids = sorted(dataset.ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    sizes = largest_remainder(len(ids), fractions)
    parts, start = {}, 0
    for k, size in enumerate(sizes, start=1):
        parts[f"part{k}"] = frozenset(ids[i] for i in order[start:start + size])
        start += size
    return SplitAssignment(parts)
