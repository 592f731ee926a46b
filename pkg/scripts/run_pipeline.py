"""Run synth -> train -> evaluate -> explain into one output directory.

    python scripts/run_pipeline.py --out runs/demo --iterations 500
"""

import argparse
import sys
from pathlib import Path

from click.testing import CliRunner

from retention_lab.cli import main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/demo"))
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--interactions", action="append", default=[],
                   help="Feature pair 'A,B'; repeatable.")
    return p.parse_args(argv)


def run(args) -> int:
    cohort = args.out / "cohort.csv"
    steps = [
        ["synth", "--n", str(args.n), "--seed", str(args.seed), "--out", str(cohort)],
        ["train", "--cohort", str(cohort), "--out-dir", str(args.out),
         "--iterations", str(args.iterations)],
        ["evaluate", "--cohort", str(cohort), "--out-dir", str(args.out)],
        ["explain", "--cohort", str(cohort), "--out-dir", str(args.out)]
        + [a for pair in args.interactions for a in ("--interactions", pair)],
    ]
    runner = CliRunner()
    for argv in steps:
        print(f"$ retention-lab {' '.join(argv)}")
        res = runner.invoke(main, argv)
        print(res.output, end="")
        if res.exit_code != 0:
            return res.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(run(parse_args()))
