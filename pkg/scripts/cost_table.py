"""Predicted cost ratios of every registered program on the fourteen-task size profile.

    python scripts/cost_table.py [--words-per-sentence 25]
"""

import argparse

from ttcrank.costs import TaskSizes, predict_ratio
from ttcrank.fixtures import table1_profile
from ttcrank.programs import REGISTRY


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--words-per-sentence", type=int, default=25)
    ap.add_argument("--no-adapters", action="store_true")
    args = ap.parse_args()

    sizes = [TaskSizes.from_profile(q, d, w, words_per_sentence=args.words_per_sentence)
             for q, d, w in table1_profile()]
    print(f"T_base = {sum(s.baseline for s in sizes):,}")
    print(f"{'program':26s} nominal  logical   amortized")
    for pid, spec in REGISTRY.items():
        res = spec.resources(not args.no_adapters)
        print(f"{pid:26s} {spec.nominal_cost:7.2f}  {predict_ratio(res, sizes):8.3f}  "
              f"{predict_ratio(res, sizes, amortized=True):8.3f}")


if __name__ == "__main__":
    main()
