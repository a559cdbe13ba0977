import numpy as np
import pytest

from crossscreen.core import Dataset, Subject
from crossscreen.stats import PairedOutcome


def make_dataset(n=60, seed=0, signal=1.0, levels=("a", "b"), n_times=4, missing=0.0):
    """Random panel: one baseline covariate `x`, one time-varying `z@2`.

    Treatment probability rises with `x` when `signal` > 0.
    """
    rng = np.random.default_rng(seed)
    subjects = []
    for k in range(n):
        x = float(rng.normal())
        z = float(rng.normal()) if rng.random() >= missing else None
        p = 1.0 / (1.0 + np.exp(-signal * x))
        treated = bool(rng.random() < p)
        t = float(rng.integers(1, n_times + 1)) if treated else None
        y = float(rng.normal() + (0.5 if treated else 0.0))
        subjects.append(Subject(
            f"s{k:03d}", levels[k % len(levels)], treated, t,
            {"x": x, "z@2": z}, {"y": y, "w": float(rng.normal())},
        ))
    return Dataset(tuple(subjects), {"x": -np.inf, "z@2": 2.0}, ("y", "w"))


def paired(name, diffs, **groups):
    return PairedOutcome(name, np.asarray(diffs, dtype=float), 0, groups)


@pytest.fixture
def small_dataset():
    return make_dataset()
