"""Train and evaluate the default small configuration on seeded synthetic splits.

    python scripts/synthetic_e2e.py --seeds 0 1 2
"""

import argparse

from bcralign.experiment import SMALL_CONFIG, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-test", type=int, default=100)
    args = p.parse_args()
    print(f"config {SMALL_CONFIG}")
    for seed in args.seeds:
        model, ev, _, _ = run(seed, verbose=True, n_train=args.n_train, n_test=args.n_test)
        root = model.root.stats
        print(f"  nodes={len(model.nodes())} root gate recall={root['gate_recall']:.3f} "
              f"retention={root['retention_recall']:.3f} children={root['child_sizes']}")


if __name__ == "__main__":
    main()
