"""Run every experiment subcommand on one config into a single output tree.

Usage: python3 scripts/run_all.py [--config PATH] [--seed N] [--out DIR]
"""
import argparse
import sys
from pathlib import Path

from stackmeta.cli_io import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="robot_teaming")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/all")
    args = parser.parse_args()
    root = Path(args.out)
    common = ["--config", args.config, "--seed", str(args.seed)]
    if cli(["train", *common, "--out", str(root / "train")]):
        return 1
    model = str(root / "train" / "model_meta.txt")
    steps = [
        ["adapt", "--model", model],
        ["baseline-unilateral"],
        ["baseline-individual"],
        ["transfer"],
        ["check-gradients"],
    ]
    for step in steps:
        code = cli([step[0], *common, *step[1:], "--out", str(root / step[0])])
        print(f"{step[0]}: exit {code}", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
