"""Run the synthetic fixture through the oracle backend and print all three reports.

    python scripts/run_fixture_demo.py /tmp/soc-demo
"""

from __future__ import annotations

import argparse
from pathlib import Path

from sumofchecks.report import REPORT_KINDS, render_report, write_report
from sumofchecks.runner import ExperimentConfig, Runner

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "synthetic"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path, help="parent directory for the two run directories")
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args()

    for name in ("config_oracle", "config_ablation"):
        run_dir = args.out / name.removeprefix("config_")
        runner = Runner(ExperimentConfig.load(FIXTURE / f"{name}.json"), run_dir)
        results = runner.execute(runner.plan(), resume=args.resume)
        calls = sum(b.calls for b in runner.backends.values())
        print(f"{run_dir}: {len(results)} cells, {calls} backend call(s)\n")
        kinds = REPORT_KINDS if name == "config_oracle" else ("ablation",)
        for kind in kinds:
            write_report(run_dir, kind)
            print(render_report(run_dir, kind)[0])


if __name__ == "__main__":
    main()
