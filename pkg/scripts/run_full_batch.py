#!/usr/bin/env python3
"""Run the full scenario protocol (280 enumerated + 200 random) for every
planner in fully automated and mixed traffic, writing logs, summaries,
reports and charts under the given results directory."""

import argparse
import sys

from coopint.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--limit", type=int, default=None,
                        help="only run the first N scenarios (smoke test)")
    parser.add_argument("--traffic", choices=("cav", "mixed", "both"),
                        default="both")
    args = parser.parse_args()

    traffics = ("cav", "mixed") if args.traffic == "both" else (args.traffic,)
    status = 0
    for traffic in traffics:
        for planner in ("nc", "hdv", "opt", "rollout"):
            argv = ["run", "--planner", planner, "--traffic", traffic,
                    "--seed", str(args.seed), "--out", args.out]
            if args.limit is not None:
                argv += ["--limit", str(args.limit)]
            status |= cli_main(argv)
        for planner in ("opt", "rollout"):
            status |= cli_main(["report", "--planner", planner,
                                "--traffic", traffic, "--out", args.out])
            status |= cli_main(["plot", "--planner", planner,
                                "--traffic", traffic, "--out", args.out])
    return status


if __name__ == "__main__":
    sys.exit(main())
