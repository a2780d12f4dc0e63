"""Run every bundled preset and collect the text tables.

    python scripts/reproduce_tables.py --out results --reps 200 --threads 2
"""

import argparse
import sys
from pathlib import Path

from fisherci import cli
from fisherci.config import preset_names


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--reps", type=int, help="override the preset replication count")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="preset names to run (default: all)")
    args = ap.parse_args(argv)

    names = args.only or preset_names()
    worst = 0
    for name in names:
        flags = ["--experiment", name, "--out", str(Path(args.out) / name),
                 "--threads", str(args.threads), "--quiet"]
        if args.reps:
            flags += ["--reps", str(args.reps)]
        code = cli.main(flags)
        worst = max(worst, code)
        print(f"== {name} (exit {code})")
        table = Path(args.out) / name / "table.txt"
        if table.exists():
            print(table.read_text())
    return worst


if __name__ == "__main__":
    sys.exit(main())
