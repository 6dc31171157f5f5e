"""Scripted oracle scenario: check verdicts right 90% of the time, Direct confidence random.

``expected()`` derives the per-criterion mean APs from the script with the
independent oracle in ``oracles.py``; the values are frozen in
``data/separation_expected.json`` (regenerate with ``python tests/separation.py``).
"""

from __future__ import annotations

import csv
import json
import random
import shutil
from fractions import Fraction
from pathlib import Path
from statistics import fmean

from oracles import brute_force_ap

N_FRAMES = 60
N_CHECKS = 5
RUNS = 3
SEED = 7
FROZEN = Path(__file__).parent / "data" / "separation_expected.json"


def script():
    rng = random.Random(SEED)
    frames = [f"s{i:03d}" for i in range(N_FRAMES)]
    labels = {f: tuple(rng.randint(0, 1) for _ in range(3)) for f in frames}
    slots = [(f, c, j) for f in frames for c in (1, 2, 3) for j in range(1, N_CHECKS + 1)]
    wrong = set(rng.sample(slots, len(slots) // 10))  # exactly 90% correct
    checks = {f: {} for f in frames}
    for f, c, j in slots:
        truth = labels[f][c - 1]
        answer = truth ^ 1 if (f, c, j) in wrong else truth
        checks[f][f"c{c}_{j}"] = "yes" if answer else "no"
    confidence = {f: {str(c): [round(rng.random(), 3) for _ in range(RUNS)] for c in (1, 2, 3)} for f in frames}
    return frames, labels, {"checks": checks, "confidence": confidence}


def expected():
    frames, labels, rules = script()
    out = {}
    for c in (1, 2, 3):
        y = [labels[f][c - 1] for f in frames]
        soc = [Fraction(sum(rules["checks"][f][f"c{c}_{j}"] == "yes" for j in range(1, N_CHECKS + 1)), N_CHECKS) for f in frames]
        soc_ap = float(brute_force_ap(soc, y))
        direct = [float(brute_force_ap([rules["confidence"][f][str(c)][r] for f in frames], y)) for r in range(RUNS)]
        out[f"C{c}"] = {"sum_of_checks+fs": soc_ap, "direct": fmean(direct)}
    return out


def materialize(fixture_dir: Path, dst: Path) -> Path:
    """Write manifest, ruleset and config next to a copy of the fixture; returns the config path."""
    shutil.copytree(fixture_dir, dst)
    frames, labels, rules = script()
    image = fixture_dir / "images" / "f01.png"
    with (dst / "sep_manifest.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "image_ref", "split", "y1", "y2", "y3"])
        for f in frames:
            w.writerow([f, str(image), "test", *labels[f]])
    (dst / "sep_ruleset.json").write_text(json.dumps(rules, indent=1))
    cfg = {
        "manifest": "sep_manifest.csv",
        "exemplars": "exemplars.json",
        "runs": RUNS,
        "concurrency": 8,
        "methods": ["direct", "sum_of_checks+fs"],
        "models": [{"name": "oracle", "backend_kind": "oracle", "model_name": "rule-oracle", "ruleset": "sep_ruleset.json"}],
    }
    path = dst / "sep_config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


if __name__ == "__main__":
    FROZEN.parent.mkdir(exist_ok=True)
    FROZEN.write_text(json.dumps(expected(), indent=2, sort_keys=True) + "\n")
    print(FROZEN.read_text())
