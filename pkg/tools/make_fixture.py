"""Regenerate the bundled synthetic subject file (no real study data)."""

import csv
import sys

import numpy as np

OUTCOMES = ["depression", "self_acceptance", "additional_children", "divorces",
            "job_spells", "low_positive", "somatic", "income_poverty"]
EFFECTS = {"depression": 0.35, "self_acceptance": -0.25, "low_positive": 0.3}


def main(path, seed=20240501, per_level=500):
    rng = np.random.default_rng(seed)
    rows = []
    sid = 0
    for level in ("catholic", "other"):
        for _ in range(per_level):
            sid += 1
            age = rng.normal(50, 8)
            inc1 = rng.normal(0, 1)
            inc3 = inc1 + rng.normal(0, 0.5)
            hazard = 1 / (1 + np.exp(-(0.03 * (age - 50) + 0.4 * inc1 - 1.0)))
            treated = rng.random() < hazard
            ttime = int(rng.integers(1, 6)) if treated else None
            outs = {}
            for name in OUTCOMES:
                y = 0.2 * inc1 + rng.normal()
                if treated:
                    y += EFFECTS.get(name, 0.0)
                outs[name] = y
            depression_fb = outs["depression"] + rng.normal(0, 0.1)
            if rng.random() < 0.05:
                outs["depression"] = None
            rows.append([f"s{sid:04d}", level, int(treated), "" if ttime is None else ttime,
                         f"{age:.2f}", f"{inc1:.3f}", f"{inc3:.3f}"]
                        + ["" if outs[n] is None else f"{outs[n]:.3f}" for n in OUTCOMES]
                        + [f"{depression_fb:.3f}"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split", "treated", "treat_time", "cov:age", "cov:income@1", "cov:income@3"]
                   + [f"out:{n}" for n in OUTCOMES] + ["out:depression#fallback"])
        w.writerows(rows)


if __name__ == "__main__":
    main(sys.argv[1])
