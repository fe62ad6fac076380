"""Annotation files, images, manifests and synthetic datasets on disk.

``.pts`` files use the usual landmark grammar::

    version: 1
    n_points: N
    {
    x y
    ...
    }

with 1-origin pixel coordinates; shapes in memory are 0-origin. A
visibility companion (``foo.vis`` next to ``foo.pts``) holds one ``0`` or
``1`` per line; without one every landmark counts as visible.

A manifest has one sample per line: tab-separated image path, pts path,
visibility path (``-`` for none) and an optional ``x,y,w,h`` box. Relative
paths resolve against the manifest's directory; ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError
from .shapes import as_points, as_vector

log = logging.getLogger(__name__)

# ---------------------------------------------------------------- pts


def load_pts(path) -> np.ndarray:
    path = Path(path)
    lines = path.read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ParseError("unexpected end of file", path, pos + 1)
        pos += 1
        return pos, lines[pos - 1].strip()

    ln, text = next_line()
    key, _, val = text.partition(":")
    if key.strip() != "version" or not val.strip():
        raise ParseError(f"expected 'version: 1', got {text!r}", path, ln)
    ln, text = next_line()
    key, _, val = text.partition(":")
    if key.strip() != "n_points":
        raise ParseError(f"expected 'n_points: N', got {text!r}", path, ln)
    try:
        n = int(val.strip())
    except ValueError:
        raise ParseError(f"bad point count {val.strip()!r}", path, ln) from None
    if n < 0:
        raise ParseError("negative point count", path, ln)
    ln, text = next_line()
    if text != "{":
        raise ParseError(f"expected '{{', got {text!r}", path, ln)
    pts = np.empty((n, 2))
    for k in range(n):
        ln, text = next_line()
        if text == "}":
            raise ParseError(f"expected {n} points, found {k}", path, ln)
        tokens = text.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 'x y', got {text!r}", path, ln)
        try:
            pts[k] = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {text!r}", path, ln) from None
        if not np.all(np.isfinite(pts[k])):
            raise ParseError(f"non-finite coordinate in {text!r}", path, ln)
    ln, text = next_line()
    if text != "}":
        raise ParseError(f"expected '}}' after {n} points, got {text!r}", path, ln)
    return as_vector(pts - 1.0)


def format_pts(shape) -> str:
    pts = as_points(np.asarray(shape, dtype=float)) + 1.0
    body = "".join(f"{x:.6f} {y:.6f}\n" for x, y in pts)
    return f"version: 1\nn_points: {len(pts)}\n{{\n{body}}}\n"


def write_pts(path, shape) -> None:
    Path(path).write_text(format_pts(shape))


# ---------------------------------------------------------------- visibility


def visibility_path(pts_path) -> Path:
    return Path(pts_path).with_suffix(".vis")


def load_visibility(path, n_landmarks: int | None = None) -> np.ndarray:
    """0/1 per landmark; a missing file means all visible (needs ``n_landmarks``)."""
    path = Path(path)
    if not path.exists():
        if n_landmarks is None:
            raise FileNotFoundError(f"{path} does not exist and the landmark count is unknown")
        return np.ones(n_landmarks, dtype=np.int8)
    vals = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        tok = raw.strip()
        if not tok:
            continue
        if tok not in ("0", "1"):
            raise ParseError(f"visibility token must be 0 or 1, got {tok!r}", path, ln)
        vals.append(int(tok))
    v = np.array(vals, dtype=np.int8)
    if n_landmarks is not None and v.size != n_landmarks:
        raise ParseError(f"expected {n_landmarks} visibility lines, found {v.size}", path)
    return v


def write_visibility(path, visibility) -> None:
    v = np.asarray(visibility)
    Path(path).write_text("".join(f"{int(x >= 0.5)}\n" for x in v))


# ---------------------------------------------------------------- images


def load_image(path) -> np.ndarray:
    """Grayscale image as float in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=float)
    return arr / 255.0


def write_image(path, image) -> None:
    arr = np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


# ---------------------------------------------------------------- roles


def load_roles(path) -> dict:
    """``role index`` per line (0-origin landmark index)."""
    path = Path(path)
    roles = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 'role index', got {raw.strip()!r}", path, ln)
        try:
            roles[tokens[0]] = int(tokens[1])
        except ValueError:
            raise ParseError(f"bad landmark index {tokens[1]!r}", path, ln) from None
    return roles


def write_roles(path, roles: dict) -> None:
    Path(path).write_text("".join(f"{k} {int(v)}\n" for k, v in roles.items()))


# ---------------------------------------------------------------- manifests


@dataclass
class AnnotatedSample:
    image_path: Path
    shape: np.ndarray
    visibility: np.ndarray
    box: tuple | None = None


@dataclass
class ManifestLoad:
    samples: list
    skipped: list = field(default_factory=list)  # (line number, reason)


def parse_box(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"box must be x,y,w,h, got {text!r}")
    x, y, w, h = (float(p) for p in parts)
    if w <= 0 or h <= 0:
        raise ValueError(f"box width and height must be positive, got {text!r}")
    return x, y, w, h


def load_manifest(path) -> ManifestLoad:
    """Read every sample; malformed ones are logged, counted and skipped."""
    path = Path(path)
    root = path.parent
    out = ManifestLoad([])
    n_landmarks = None

    def skip(ln, reason):
        log.warning("%s:%d: skipping sample: %s", path, ln, reason)
        out.skipped.append((ln, reason))

    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].rstrip()
        if not text.strip():
            continue
        cols = text.split("\t")
        if len(cols) not in (3, 4):
            skip(ln, f"expected 3 or 4 tab-separated fields, got {len(cols)}")
            continue
        img, pts, vis = (root / c.strip() for c in cols[:3])
        if not img.is_file():
            skip(ln, f"image {img} not found")
            continue
        try:
            shape = load_pts(pts)
            L = shape.size // 2
            if cols[2].strip() == "-":
                v = np.ones(L, dtype=np.int8)
            elif not vis.is_file():
                raise FileNotFoundError(f"visibility file {vis} not found")
            else:
                v = load_visibility(vis, L)
            box = parse_box(cols[3].strip()) if len(cols) == 4 and cols[3].strip() else None
        except (OSError, ValueError) as exc:
            skip(ln, str(exc))
            continue
        if n_landmarks is None:
            n_landmarks = L
        elif L != n_landmarks:
            skip(ln, f"{L} landmarks where earlier samples have {n_landmarks}")
            continue
        if int(np.sum(v)) < 3:
            skip(ln, "fewer than 3 visible landmarks")
            continue
        out.samples.append(AnnotatedSample(img, shape, v, box))
    return out


def _rel(p: Path, root: Path) -> str:
    return os.path.relpath(p, root)


def write_manifest(path, samples) -> None:
    path = Path(path)
    root = path.parent
    lines = []
    for s in samples:
        pts = Path(s.image_path).with_suffix(".pts")
        vis = visibility_path(pts)
        row = [_rel(Path(s.image_path), root), _rel(pts, root), _rel(vis, root)]
        if s.box is not None:
            row.append(",".join(f"{b:.6f}" for b in s.box))
        lines.append("\t".join(row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- synthetic datasets


def write_synthetic_dataset(out_dir, world, count: int, seed: int) -> list[AnnotatedSample]:
    """Render ``count`` faces with images, pts, vis files, a manifest and roles."""
    from .synth import generate

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for i, face in enumerate(generate(world, count, seed=seed)):
        img = out / f"face_{i:05d}.png"
        write_image(img, face.image)
        write_pts(img.with_suffix(".pts"), face.shape)
        write_visibility(img.with_suffix(".vis"), face.visibility)
        samples.append(AnnotatedSample(img, face.shape, face.visibility, face.box))
    write_manifest(out / "manifest.tsv", samples)
    write_roles(out / "roles.txt", world.roles)
    return samples
