"""Root-branch routing of mirror-yaw face pairs, binned by |yaw|.

    python scripts/mirror_routing.py --seed 0 --pairs 200
"""

import argparse
import math

import numpy as np

from bcralign.cascade import fit_many, init_from_box
from bcralign.experiment import run
from bcralign.synth import mirror_pair


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=200)
    args = p.parse_args()
    model, _, world, _ = run(args.seed, verbose=True)
    rng = np.random.default_rng(123 + args.seed)
    ymax = math.radians(world.yaw_max_deg)
    for _ in range(args.pairs):
        f = float(rng.uniform(0.0, 1.0))
        a, b = mirror_pair(world, rng, f * ymax)
        ra, rb = fit_many(model, [a.image, b.image], [init_from_box(model, a.box), init_from_box(model, b.box)])
        frac.append(f)
        split.append(ra.path[0] != rb.path[0])
    frac, split = np.array(frac), np.array(split)
    print("|yaw|/max   pairs  split")
    for lo in np.arange(0.0, 1.0, 0.25):
        m = (frac >= lo) & (frac < lo + 0.25)
        print(f"{lo:.2f}-{lo + 0.25:.2f}  {m.sum():6d}  {split[m].mean() if m.any() else float('nan'):.2f}")
    print(f"all         {frac.size:6d}  {split.mean():.2f}")


if __name__ == "__main__":
    main()
