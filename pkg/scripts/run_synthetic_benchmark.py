#!/usr/bin/env python3
"""Run the full desk-scale synthetic benchmark and print the verdict.

Trains s3f-concat and the spatial baseline on the conjunction task, and
spectranet1 against the spatial baseline on the texture task, three seeds
each, then reports mean test accuracies and the directional checks.
"""

import argparse
import json
import sys

from s3fnet.benchmark import BENCHMARK_SEEDS, run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=list(BENCHMARK_SEEDS))
    parser.add_argument("--conjunction-epochs", type=int, default=24)
    parser.add_argument("--texture-epochs", type=int, default=6)
    parser.add_argument("--per-class", type=int, default=400)
    parser.add_argument("--out", default=None, help="write the summary JSON here")
    args = parser.parse_args()

    summary = run_benchmark(
        seeds=tuple(args.seeds),
        conjunction_epochs=args.conjunction_epochs,
        texture_epochs=args.texture_epochs,
        per_class=args.per_class,
        out_path=args.out,
        verbose=True,
    )
    print()
    print(json.dumps({"means": summary["means"], "checks": summary["checks"]}, indent=2))
    print(f"total time: {summary['total_seconds']:.0f}s")
    return 0 if all(summary["checks"].values()) else 1


if __name__ == "__main__":
    sys.exit(main())
