"""Train a head on family A, then score it on A and on the disjoint family B.

    python scripts/head_overfit.py --kind linear --seeds 20
"""

import argparse
import time

import numpy as np

from ttcrank.encoder import Encoder, ProviderConfig
from ttcrank.fixtures import FixtureSpec, generate
from ttcrank.harness import Evaluator
from ttcrank.heads import KINDS, TrainConfig, head_program, train_head, training_pairs


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kind", choices=KINDS, default="linear")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--distractor-rate", type=float, default=0.7)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--dim", type=int, default=384)
    args = ap.parse_args()

    t0 = time.perf_counter()
    gains = []
    print("seed  base_A  dA       dB       best_epoch")
    for seed in range(args.seeds):
        spec = dict(seed=seed, variant="topical", distractor_rate=args.distractor_rate)
        ta, tb = generate(FixtureSpec(family="a", **spec)), generate(FixtureSpec(family="b", **spec))
        ev = Evaluator([ta, tb], Encoder(ProviderConfig(seed=seed, native_dim=args.dim)))
        ctx = ev.contexts[ta.task_id]
        res = train_head(training_pairs(ta, ctx.Q, ctx.D), args.kind, TrainConfig(seed=seed, epochs=args.epochs))
        prog = head_program(res.head)
        da, db = ev.evaluate_task(prog, ta).mean_delta, ev.evaluate_task(prog, tb).mean_delta
        gains.append((da, db))
        print(f"{seed:4d}  {ev.baseline[ta.task_id].mean():.3f}   {da:+.4f}  {db:+.4f}  {res.best_epoch}")
    g = np.asarray(gains)
    print(f"A > 0.05 on {int((g[:, 0] > 0.05).sum())}/{len(g)}; B < 0 on {int((g[:, 1] < 0).sum())}/{len(g)}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
