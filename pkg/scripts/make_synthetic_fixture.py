"""Generate the synthetic fixture dataset used by the tests and the oracle demo config.

Writes placeholder images (no surgical imagery), a manifest with known labels,
a four-exemplar set, and an oracle ruleset. Output is deterministic for a given seed.

    python scripts/make_synthetic_fixture.py fixtures/synthetic
"""

from __future__ import annotations

import argparse
import csv
import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

from sumofchecks.registry import default_cvs_registry

# (y1, y2, y3) per evaluation frame; every criterion has positives and negatives
FRAME_LABELS = [
    (0, 0, 0), (1, 1, 1), (1, 1, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0),
    (0, 0, 0), (1, 1, 1), (0, 1, 1), (1, 0, 1), (0, 0, 0), (1, 1, 0),
]
EXEMPLAR_LABELS = [(0, 0, 0), (1, 1, 1), (1, 1, 0), (0, 0, 1)]


def draw_frame(path: Path, labels: tuple[int, int, int], tag: int) -> None:
    img = Image.new("RGB", (48, 48), (40 + 10 * (tag % 8), 20, 30))
    d = ImageDraw.Draw(img)
    for i, y in enumerate(labels):
        d.rectangle([4 + 14 * i, 8, 14 + 14 * i, 40], fill=(200, 180, 60) if y else (90, 60, 60))
    d.point((tag % 48, (7 * tag) % 48), fill=(255, 255, 255))
    img.save(path, format="PNG", optimize=False)


def check_verdict(category: str, label: int, rng: random.Random) -> str:
    if category == "occlusion-control":
        return "yes" if rng.random() < 0.85 else "no"
    if label:
        return "yes" if rng.random() < 0.85 else rng.choice(["uncertain", "no"])
    return "no" if rng.random() < 0.8 else rng.choice(["uncertain", "yes"])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=2026)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    registry = default_cvs_registry()
    out: Path = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)

    rows = []
    for i, labels in enumerate(FRAME_LABELS, start=1):
        fid = f"f{i:02d}"
        draw_frame(out / "images" / f"{fid}.png", labels, i)
        rows.append([fid, f"images/{fid}.png", "test", *labels])
    with (out / "manifest.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "image_ref", "split", "y1", "y2", "y3"])
        w.writerows(rows)

    exemplars = []
    for k, labels in enumerate(EXEMPLAR_LABELS, start=1):
        fid = f"ex{k}"
        draw_frame(out / "images" / f"{fid}.png", labels, 100 + k)
        answers = {}
        for crit in registry.criteria:
            y = labels[crit.criterion_id - 1]
            for chk in crit.checks:
                yes = True if chk.category == "occlusion-control" else bool(y)
                answers[chk.check_id] = {
                    "verdict": "yes" if yes else "no",
                    "justification": (
                        f"Example frame clearly {'shows' if yes else 'does not show'}: {chk.question.rstrip('?').lower()}."
                    ),
                }
        exemplars.append(
            {"frame_id": fid, "image_ref": f"images/{fid}.png", "split": "train", "labels": list(labels), "check_answers": answers}
        )
    (out / "exemplars.json").write_text(json.dumps({"exemplars": exemplars}, indent=2) + "\n", encoding="utf-8")

    checks: dict[str, dict] = {}
    confidence: dict[str, dict] = {}
    for i, labels in enumerate(FRAME_LABELS, start=1):
        fid = f"f{i:02d}"
        checks[fid] = {}
        for crit in registry.criteria:
            y = labels[crit.criterion_id - 1]
            for chk in crit.checks:
                runs = [check_verdict(chk.category, y, rng)]
                # anatomical evidence varies between decoding runs on some frames
                if chk.category != "occlusion-control" and rng.random() < 0.25:
                    runs += [check_verdict(chk.category, y, rng) for _ in range(2)]
                checks[fid][chk.check_id] = runs[0] if len(runs) == 1 else runs
        confidence[fid] = {
            str(c): [round(min(1.0, max(0.0, 0.35 + 0.2 * labels[c - 1] + rng.gauss(0, 0.2))), 3) for _ in range(3)]
            for c in (1, 2, 3)
        }
    ruleset = {"checks": checks, "confidence": confidence}
    (out / "ruleset.json").write_text(json.dumps(ruleset, indent=2) + "\n", encoding="utf-8")

    config = {
        "registry": "default",
        "manifest": "manifest.csv",
        "exemplars": "exemplars.json",
        "split": "test",
        "fraction": 1.0,
        "seed": 0,
        "runs": 3,
        "concurrency": 4,
        "methods": ["direct", "direct+fs", "cot", "cot+fs", "subq", "subq+fs", "sum_of_checks+fs"],
        "models": [{"name": "oracle", "backend_kind": "oracle", "model_name": "rule-oracle", "ruleset": "ruleset.json"}],
    }
    (out / "config_oracle.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    ablation = dict(config, methods=["sum_of_checks", "sum_of_checks+fs+llm_agg", "sum_of_checks+fs"])
    (out / "config_ablation.json").write_text(json.dumps(ablation, indent=2) + "\n", encoding="utf-8")
    print(f"wrote fixture to {out}")


if __name__ == "__main__":
    main()
