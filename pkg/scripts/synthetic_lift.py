"""Per-seed mean ΔnDCG@10 of frontier programs on the synthetic fixture families.

    python scripts/synthetic_lift.py --variant needle --programs sent_maxsim,coverage_triple
    python scripts/synthetic_lift.py --variant mismatch --programs lex_hybrid_rrf,vanilla_bm25_dense_rrf
"""

import argparse
import logging
import time

import numpy as np

from ttcrank.encoder import Encoder, ProviderConfig
from ttcrank.fixtures import VARIANTS, FixtureSpec, generate
from ttcrank.harness import Evaluator
from ttcrank.metrics import sign_test
from ttcrank.programs import REGISTRY

log = logging.getLogger("synthetic_lift")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--variant", choices=VARIANTS, default="needle")
    ap.add_argument("--programs", default="sent_maxsim,coverage_triple")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--docs", type=int, default=50)
    ap.add_argument("--dim", type=int, default=384)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    pids = [p.strip() for p in args.programs.split(",") if p.strip()]
    deltas = {p: [] for p in pids}
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        task = generate(FixtureSpec(seed=seed, variant=args.variant, n_queries=args.queries, n_docs=args.docs))
        ev = Evaluator([task], Encoder(ProviderConfig(seed=seed, native_dim=args.dim)))
        row = []
        for p in pids:
            deltas[p].append(ev.evaluate(REGISTRY[p], p).mean_delta)
            row.append(f"{deltas[p][-1]:+.4f}")
        log.info("seed %2d  base %.3f  %s", seed, ev.baseline[task.task_id].mean(), "  ".join(row))
    print(f"{'program':26s} mean      positive  sign-p")
    for p in pids:
        d = np.asarray(deltas[p])
        print(f"{p:26s} {d.mean():+.4f}  {int((d > 0).sum()):2d}/{len(d)}     {sign_test(d):.2e}")
    if len(pids) == 2:
        a, b = (np.asarray(deltas[p]) for p in pids)
        print(f"{pids[0]} > {pids[1]} on {int((a > b).sum())}/{len(a)} seeds")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
