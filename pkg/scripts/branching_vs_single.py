"""Held-out error of the branching cascade against a single-track cascade of equal depth.

    python scripts/branching_vs_single.py --seeds 0 1 2
"""

import argparse

from bcralign.experiment import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    print("seed  branching  single  ratio")
    for seed in args.seeds:
        _, br, _, _ = run(seed)
        _, st, _, _ = run(seed, branching=False)
        print(f"{seed:4d}  {br.mean_error:9.4f}  {st.mean_error:6.4f}  {br.mean_error / st.mean_error:5.3f}")


if __name__ == "__main__":
    main()
