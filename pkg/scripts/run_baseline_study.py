"""Adaptive-vs-fixed schedule study on the 4-component ring mixture.

Pretrains the velocity field, RL-trains the decay policy, then scores the
adaptive sampler against fixed uniform schedules at the matched and doubled
step budgets (shared initial noise). Plots land next to the CSVs.
"""

import argparse
import sys
from pathlib import Path

from flowsched.cli import main

REPO = Path(__file__).resolve().parents[1]


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(REPO / "configs" / "example.json"))
    ap.add_argument("--out", default="runs/baseline_study")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)

    common = ["--config", args.config, "--out", args.out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    for step in (
        ["train-flow", *common],
        ["train-tpm", *common],
        ["compare-baselines", *common, "--deterministic-inference"],
        ["export-plots", *common],
    ):
        rc = main(step)
        if rc != 0:
            return rc
    print(Path(args.out, "baselines.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(run())
