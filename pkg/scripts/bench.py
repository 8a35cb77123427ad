"""Wall-clock split between encoder calls and score algebra on generated needle tasks.

    python scripts/bench.py --latency 0.001 --programs p0,sent_maxsim,fisher_stability
"""

import argparse
import sys
import tempfile
from pathlib import Path

from ttcrank.cli import main as cli
from ttcrank.fixtures import FixtureSpec, generate
from ttcrank.tasks import write_task


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--programs", default="frontier")
    ap.add_argument("--tasks", type=int, default=2)
    ap.add_argument("--latency", type=float, default=0.0, help="seconds slept per encoded text")
    ap.add_argument("--dim", type=int, default=384)
    ap.add_argument("--out", help="output directory (default: temporary)")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        dirs = [str(write_task(generate(FixtureSpec(seed=s, variant="needle")), Path(tmp) / f"needle-{s}"))
                for s in range(args.tasks)]
        out = args.out or str(Path(tmp) / "bench")
        return cli(["bench", "--tasks", *dirs, "--programs", args.programs, "--out", out,
                    "--latency", str(args.latency), "--dim", str(args.dim)])


if __name__ == "__main__":
    sys.exit(main())
