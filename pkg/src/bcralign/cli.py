"""Command-line entry point: ``bcralign train | fit | eval | synth``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .cascade import BcrConfig, TrainingSet, fit, init_from_box, train_bcr
from .errors import BcrError
from .io import (
    load_image,
    load_manifest,
    load_pts,
    load_roles,
    load_visibility,
    parse_box,
    visibility_path,
    write_pts,
    write_synthetic_dataset,
    write_visibility,
)
from .modelfile import load_model, save_model
from .shapes import ced_curve, normalized_error
from .synth import SyntheticWorld

log = logging.getLogger("bcralign")


def _train(args) -> int:
    loaded = load_manifest(args.manifest)
    if not loaded.samples:
        raise BcrError(f"no usable samples in {args.manifest} ({len(loaded.skipped)} skipped)")
    samples = loaded.samples
    images = [load_image(s.image_path) for s in samples]
    boxes = None
    if all(s.box is not None for s in samples):
        boxes = np.array([s.box for s in samples])
    elif any(s.box is not None for s in samples):
        log.warning("some manifest rows lack a box; using ground-truth bounding boxes for all")
    train = TrainingSet(images, np.array([s.shape for s in samples]),
                        np.array([s.visibility for s in samples]), boxes)
    config = BcrConfig(
        n_trees=args.trees, tree_depth=args.tree_depth, levels=args.levels, n_candidates=args.candidates,
        lam=args.lam, energy=args.energy, augment=args.augment, target_mode=args.target_mode, seed=args.seed,
    )

    def progress(node, level, node_id):
        log.info("trained node %d (level %d, %d samples)", node_id, level, node.stats["n_samples"])

    model = train_bcr(train, config, progress)
    save_model(model, args.out)
    print(f"trained on {len(samples)} samples ({len(loaded.skipped)} skipped); "
          f"{len(model.nodes())} nodes written to {args.out}")
    return 0


def _fit(args) -> int:
    model = load_model(args.model)
    image = load_image(args.image)
    if args.box is not None:
        init = init_from_box(model, parse_box(args.box))
    else:
        init = load_pts(args.init)
        if init.size != 2 * model.n_landmarks:
            raise BcrError(f"initial shape has {init.size // 2} landmarks; the model expects {model.n_landmarks}")
    result = fit(model, image, init, trace=args.trace)
    write_pts(args.out, result.shape)
    if args.vis_out:
        write_visibility(args.vis_out, result.visibility)
    if args.trace:
        out = Path(args.out)
        for k, s in enumerate(result.trace, start=1):
            write_pts(out.with_name(f"{out.stem}.stage{k}.pts"), s)
    print(f"{args.out}: branch path {'/'.join(result.path) or '-'}")
    return 0


def _eval(args) -> int:
    roles = load_roles(args.roles)
    gt_dir, pred_dir = Path(args.gt_dir), Path(args.pred_dir)
    errors, missing = [], 0
    for gt_path in sorted(gt_dir.glob("*.pts")):
        pred_path = pred_dir / gt_path.name
        if not pred_path.is_file():
            log.debug("no prediction for %s", gt_path.name)
            missing += 1
            continue
        gt = load_pts(gt_path)
        vis = load_visibility(visibility_path(gt_path), gt.size // 2)
        errors.append(normalized_error(load_pts(pred_path), gt, vis, args.normalization, roles))
    if missing:
        log.warning("%d ground-truth faces have no prediction in %s", missing, pred_dir)
    if not errors:
        raise BcrError(f"no predictions in {pred_dir} match ground truth in {gt_dir}")
    thresholds = np.round(np.linspace(0.0, args.max_threshold, args.steps + 1), 10)
    curve = ced_curve(errors, thresholds)
    with open(args.ced_out, "w") as fh:
        fh.write("threshold,fraction\n")
        for t, f in curve:
            fh.write(f"{t:.6f},{f:.6f}\n")
    if args.svg:
        Path(args.svg).write_text(ced_svg(curve))
    print(f"{len(errors)} faces, mean normalized error {np.mean(errors):.4f} ({missing} missing predictions)")
    return 0


def ced_svg(curve, width: int = 400, height: int = 300, pad: int = 40) -> str:
    """Minimal static SVG plot of a CED curve."""
    t = np.array([c[0] for c in curve])
    f = np.array([c[1] for c in curve])
    span = t.max() - t.min() or 1.0
    xs = pad + (t - t.min()) / span * (width - 2 * pad)
    ys = height - pad - f * (height - 2 * pad)
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    x0, x1, y0, y1 = pad, width - pad, height - pad, pad
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>\n'
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>\n'
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">normalized error</text>\n'
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">fraction of faces</text>\n'
        f'<text x="{x0}" y="{y0 + 14}" font-size="10" text-anchor="middle">{t.min():g}</text>\n'
        f'<text x="{x1}" y="{y0 + 14}" font-size="10" text-anchor="middle">{t.max():g}</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{points}"/>\n'
        "</svg>\n"
    )


def _synth(args) -> int:
    world = SyntheticWorld(n_landmarks=args.landmarks, noise=args.noise, seed=args.seed)
    samples = write_synthetic_dataset(args.out_dir, world, args.count, args.seed)
    print(f"wrote {len(samples)} faces to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcralign", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--trees", type=int, default=600)
    t.add_argument("--tree-depth", type=int, default=6)
    t.add_argument("--levels", type=int, default=4)
    t.add_argument("--candidates", type=int, default=500)
    t.add_argument("--lambda", dest="lam", type=float, default=1.0)
    t.add_argument("--energy", type=float, default=0.98)
    t.add_argument("--augment", type=int, default=5)
    t.add_argument("--target-mode", choices=("spdm", "raw"), default="spdm")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_train)

    f = sub.add_parser("fit", help="align one image")
    f.add_argument("--model", required=True)
    f.add_argument("--image", required=True)
    init = f.add_mutually_exclusive_group(required=True)
    init.add_argument("--box", help="x,y,w,h")
    init.add_argument("--init", help="initial shape (.pts)")
    f.add_argument("--out", required=True)
    f.add_argument("--vis-out")
    f.add_argument("--trace", action="store_true", help="also write the shape after every stage")
    f.set_defaults(func=_fit)

    e = sub.add_parser("eval", help="CED of predictions against ground truth")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--normalization", choices=("interocular", "eye-mouth"), required=True)
    e.add_argument("--roles", required=True)
    e.add_argument("--ced-out", required=True)
    e.add_argument("--svg")
    e.add_argument("--max-threshold", type=float, default=0.3)
    e.add_argument("--steps", type=int, default=60)
    e.set_defaults(func=_eval)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--landmarks", type=int, default=12)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.02)
    s.set_defaults(func=_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BcrError, OSError, ValueError, KeyError) as exc:
        print(f"bcralign {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
