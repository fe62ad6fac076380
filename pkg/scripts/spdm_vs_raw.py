"""Regression in SPDM parameter space against regression on raw landmark coordinates.

    python scripts/spdm_vs_raw.py --seeds 0 1 2
"""

import argparse

from bcralign.experiment import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    print("seed  spdm    raw     rel.diff  vis(spdm)  vis(raw)")
    for seed in args.seeds:
        _, a, _, _ = run(seed)
        _, b, _, _ = run(seed, target_mode="raw")
        rel = abs(a.mean_error - b.mean_error) / min(a.mean_error, b.mean_error)
        print(f"{seed:4d}  {a.mean_error:.4f}  {b.mean_error:.4f}  {100 * rel:7.1f}%  "
              f"{a.visibility_accuracy:9.3f}  {b.visibility_accuracy:8.3f}")


if __name__ == "__main__":
    main()
