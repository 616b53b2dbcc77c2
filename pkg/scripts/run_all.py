"""Run every finsler-lab command on a config, one output subdirectory per command.

Usage: python3 scripts/run_all.py [--config configs/default.json] [--out runs] [--suite NAME] [--bless]
Exit status is the largest exit code of the four commands.
"""

import argparse
import sys
from pathlib import Path

from finsler_lab.cli import COMMANDS, main

ROOT = Path(__file__).resolve().parents[1]


def run(config: Path, out: Path, suite: str | None, bless: bool) -> int:
    worst = 0
    for cmd in COMMANDS:
        argv = [cmd, "--config", str(config), "--out", str(out / cmd)]
        if suite:
            argv += ["--suite", suite]
        if bless and cmd == "inequalities":
            argv.append("--bless")
        code = main(argv)
        print(f"{cmd}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "default.json")
    p.add_argument("--out", type=Path, default=ROOT / "runs")
    p.add_argument("--suite", default=None)
    p.add_argument("--bless", action="store_true", help="refresh the inequality baseline of the suite")
    a = p.parse_args()
    sys.exit(run(a.config, a.out, a.suite, a.bless))
