"""Forest-induced binary descriptors on shape-indexed pixel differences.

Each regression tree belongs to one landmark and splits on differences of
two pixel intensities sampled at offsets around that landmark. Offsets live
in the mean-shape frame and are carried into the image by the current
shape's similarity transform. Only leaf identity is used downstream: a
sample's descriptor is the set of leaves it reaches, one per tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyInputError
from .linalg import IndexFeatures
from .shapes import SimilarityTransform, as_points

N_QUANTILE_THRESHOLDS = 16


@dataclass(frozen=True)
class PixelDiffFeature:
    landmark_index: int
    offset_a: tuple[float, float]
    offset_b: tuple[float, float]


class ImageBank:
    """Grayscale images padded into one stack for vectorized lookups."""

    def __init__(self, images):
        images = [np.asarray(im, dtype=float) for im in images]
        if not images:
            raise EmptyInputError("no images")
        for im in images:
            if im.ndim != 2 or im.size == 0:
                raise ValueError("images must be non-empty 2-D grayscale arrays")
        self.sizes = np.array([im.shape for im in images], dtype=np.int64)
        H, W = self.sizes.max(axis=0)
        if np.all(self.sizes == (H, W)):
            self.stack = np.ascontiguousarray(np.stack(images))
        else:
            self.stack = np.zeros((len(images), H, W))
            for i, im in enumerate(images):
                self.stack[i, : im.shape[0], : im.shape[1]] = im

    def __len__(self):
        return self.stack.shape[0]

    def lookup(self, img_idx, x, y) -> np.ndarray:
        """Nearest-neighbor intensities, clamped to each image's border."""
        img_idx = np.asarray(img_idx)
        h = self.sizes[img_idx, 0]
        w = self.sizes[img_idx, 1]
        col = np.floor(np.asarray(x) + 0.5).astype(np.int64)
        row = np.floor(np.asarray(y) + 0.5).astype(np.int64)
        np.clip(col, 0, w - 1, out=col)
        np.clip(row, 0, h - 1, out=row)
        _, H, W = self.stack.shape
        flat = (img_idx * H + row) * W + col
        return self.flat.take(flat)

    @property
    def flat(self) -> np.ndarray:
        return self.stack.reshape(-1)


@dataclass
class SampleGeometry:
    """Where each sample's landmarks sit in its image.

    ``points`` holds image-frame landmark positions ``(n, L, 2)`` and
    ``linear`` the ``(n, 2, 2)`` maps taking mean-frame offsets into the
    image.
    """

    img_idx: np.ndarray
    points: np.ndarray
    linear: np.ndarray

    def __len__(self):
        return self.img_idx.size

    def subset(self, rows) -> "SampleGeometry":
        return SampleGeometry(self.img_idx[rows], self.points[rows], self.linear[rows])


def pixel_differences(bank: ImageBank, geom: SampleGeometry, landmark: int, offsets: np.ndarray) -> np.ndarray:
    """Feature values ``(n, F)`` for ``F`` offset pairs ``(ax, ay, bx, by)``."""
    _, H, W = bank.stack.shape
    base = np.ascontiguousarray(geom.points[:, landmark, :])
    return _kernels.pixel_differences(
        bank.flat, H, W, bank.sizes, np.ascontiguousarray(geom.img_idx, dtype=np.int64), base,
        np.ascontiguousarray(geom.linear, dtype=float), np.ascontiguousarray(offsets, dtype=float),
    )


def _per_sample_differences(bank, geom, landmarks, offsets) -> np.ndarray:
    """One feature per sample: ``landmarks (n,)``, ``offsets (n, 4)``."""
    _, H, W = bank.stack.shape
    rows = np.arange(len(geom))
    base = np.ascontiguousarray(geom.points[rows, landmarks, :])
    return _kernels.per_sample_differences(
        bank.flat, H, W, bank.sizes, np.ascontiguousarray(geom.img_idx, dtype=np.int64), base,
        np.ascontiguousarray(geom.linear, dtype=float), np.ascontiguousarray(offsets, dtype=float),
    )


def evaluate_feature(feat: PixelDiffFeature, image, shape, normalizing_transform: SimilarityTransform) -> float:
    """``I(p_a) - I(p_b)`` for one image and shape.

    ``normalizing_transform`` maps image coordinates into the mean-shape
    frame (as returned by :func:`procrustes_align` against the mean shape);
    its inverse carries the offsets into the image.
    """
    bank = ImageBank([image])
    lin = normalizing_transform.inverse().linear
    geom = SampleGeometry(np.zeros(1, dtype=np.int64), as_points(shape)[None], lin[None])
    off = np.array([[*feat.offset_a, *feat.offset_b]], dtype=float)
    return float(pixel_differences(bank, geom, feat.landmark_index, off)[0, 0])


def sample_offsets(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    """``(count, 4)`` offset pairs, each point uniform in the disk of ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    r = radius * np.sqrt(rng.random((count, 2)))
    theta = 2 * np.pi * rng.random((count, 2))
    out = np.empty((count, 4))
    out[:, 0] = r[:, 0] * np.cos(theta[:, 0])
    out[:, 1] = r[:, 0] * np.sin(theta[:, 0])
    out[:, 2] = r[:, 1] * np.cos(theta[:, 1])
    out[:, 3] = r[:, 1] * np.sin(theta[:, 1])
    return out


def sample_candidate_features(landmark_index: int, radius: float, count: int, rng) -> list[PixelDiffFeature]:
    off = sample_offsets(rng, count, radius)
    return [
        PixelDiffFeature(int(landmark_index), (float(o[0]), float(o[1])), (float(o[2]), float(o[3])))
        for o in off
    ]


def allocate_trees(total_trees: int, mean_visibility) -> np.ndarray:
    """Split ``total_trees`` across landmarks in proportion to visibility.

    Largest-remainder rounding; remainder ties go to the lower index.
    """
    v = np.asarray(mean_visibility, dtype=float)
    if np.any(v < 0) or v.sum() <= 0:
        raise ValueError("mean visibility must be non-negative and not all zero")
    quota = total_trees * v / v.sum()
    counts = np.floor(quota + 1e-9).astype(np.int64)
    left = total_trees - int(counts.sum())
    if left > 0:
        frac = quota - counts
        order = np.lexsort((np.arange(v.size), -frac))
        counts[order[:left]] += 1
    return counts


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class RegressionTree:
    """Binary tree stored as parallel node arrays.

    Internal nodes have ``left``/``right`` >= 0; leaves have -1 there and a
    compact ``leaf_id``. Samples with ``value >= threshold`` go right.
    """

    landmark: int
    offsets: np.ndarray  # (n_nodes, 4)
    threshold: np.ndarray  # (n_nodes,)
    left: np.ndarray  # (n_nodes,) int32
    right: np.ndarray
    leaf_id: np.ndarray
    depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def n_nodes(self) -> int:
        return self.left.size

    def split_features(self) -> list[tuple[int, PixelDiffFeature, float]]:
        out = []
        for k in np.flatnonzero(self.left >= 0):
            o = self.offsets[k]
            out.append((int(k), PixelDiffFeature(self.landmark, (o[0], o[1]), (o[2], o[3])), float(self.threshold[k])))
        return out


def quantile_thresholds(values: np.ndarray, n: int = N_QUANTILE_THRESHOLDS) -> np.ndarray:
    """Midpoints between ``n + 1`` evenly spaced quantiles of each column."""
    q = np.quantile(values, np.linspace(0.0, 1.0, n + 1), axis=0)
    return 0.5 * (q[:-1] + q[1:])


def split_gains(values: np.ndarray, y: np.ndarray):
    """Best threshold and its variance reduction for each candidate column.

    Thresholds are the :func:`quantile_thresholds` of the column. Variance
    reduction is the drop in summed squared deviation of ``y`` from
    splitting at ``value >= threshold``; splits leaving one side empty score
    0, and ties keep the lowest threshold.

    Returns ``(gain (F,), threshold (F,))``.
    """
    vt = np.ascontiguousarray(np.asarray(values, dtype=float).T)
    order = np.argsort(vt, axis=1)
    sv = np.take_along_axis(vt, order, axis=1)
    return _kernels.split_gains(sv, order, np.ascontiguousarray(y, dtype=float), N_QUANTILE_THRESHOLDS)


def train_tree(bank: ImageBank, geom: SampleGeometry, targets, target_weights, landmark: int,
               depth: int, n_candidates: int, radius: float, rng: np.random.Generator) -> RegressionTree:
    """Grow one tree on shape-indexed pixel differences.

    At every split node one target dimension is drawn with probability
    proportional to ``target_weights``; among ``n_candidates`` random
    offset pairs the split with the largest variance reduction in that
    dimension wins. A node with fewer than 2 samples, or whose best split
    does not reduce variance, becomes a leaf.
    """
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if n == 0:
        raise EmptyInputError("train_tree got no samples")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    wts = np.asarray(target_weights, dtype=float)
    p = wts / wts.sum() if wts.sum() > 0 else np.full(wts.size, 1.0 / wts.size)

    offsets, thresholds, lefts, rights = [], [], [], []

    def new_node():
        offsets.append(np.zeros(4))
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        return len(lefts) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, level = stack.pop(0)
        if level >= depth or rows.size < 2:
            continue
        dim = int(rng.choice(p.size, p=p))
        cand = sample_offsets(rng, n_candidates, radius)
        vals = pixel_differences(bank, geom.subset(rows), landmark, cand)
        gain, thr = split_gains(vals, Y[rows, dim])
        j = int(np.argmax(gain))
        y = Y[rows, dim]
        scale = float(np.sum((y - y.mean()) ** 2))
        if gain[j] <= 1e-12 * max(scale, 1e-300) or scale == 0.0:
            continue
        go_right = vals[:, j] >= thr[j]
        offsets[node] = cand[j]
        thresholds[node] = float(thr[j])
        lnode, rnode = new_node(), new_node()
        lefts[node], rights[node] = lnode, rnode
        stack.append((lnode, rows[~go_right], level + 1))
        stack.append((rnode, rows[go_right], level + 1))

    left = np.array(lefts, dtype=np.int32)
    right = np.array(rights, dtype=np.int32)
    leaf_id = np.full(left.size, -1, dtype=np.int32)
    leaves = np.flatnonzero(left < 0)
    leaf_id[leaves] = np.arange(leaves.size, dtype=np.int32)
    return RegressionTree(int(landmark), np.array(offsets), np.array(thresholds), left, right, leaf_id, int(depth))


def route(tree: RegressionTree, bank: ImageBank, geom: SampleGeometry) -> np.ndarray:
    """Leaf id reached by each sample."""
    node = np.zeros(len(geom), dtype=np.int64)
    lm = np.full(len(geom), tree.landmark)
    for _ in range(tree.depth + 1):
        inner = tree.left[node] >= 0
        if not inner.any():
            break
        rows = np.flatnonzero(inner)
        sub = geom.subset(rows)
        val = _per_sample_differences(bank, sub, lm[rows], tree.offsets[node[rows]])
        nxt = np.where(val >= tree.threshold[node[rows]], tree.right[node[rows]], tree.left[node[rows]])
        node[rows] = nxt
    return tree.leaf_id[node].astype(np.int64)


# ---------------------------------------------------------------- forests


@dataclass(frozen=True)
class FeatureForest:
    trees: tuple
    leaf_offsets: np.ndarray  # (n_trees,) start of each tree's block
    dim: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def tree_landmarks(self) -> np.ndarray:
        return np.array([t.landmark for t in self.trees], dtype=np.int64)

    @classmethod
    def from_trees(cls, trees) -> "FeatureForest":
        trees = tuple(trees)
        counts = np.array([t.n_leaves for t in trees], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64) if trees else np.zeros(0, np.int64)
        return cls(trees, offsets, int(counts.sum()))


@dataclass(frozen=True)
class BinaryDescriptor:
    active_indices: np.ndarray
    dimension: int


def train_forest(bank: ImageBank, geom: SampleGeometry, targets, mean_visibility, n_trees: int, depth: int,
                 n_candidates: int, radius: float, seed, target_weights=None) -> FeatureForest:
    """Trees allocated across landmarks by visibility, one RNG stream each."""
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if target_weights is None:
        target_weights = Y.var(axis=0)
    counts = allocate_trees(n_trees, mean_visibility)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(int(counts.sum()))
    trees = []
    k = 0
    for lm, c in enumerate(counts):
        for _ in range(int(c)):
            rng = np.random.default_rng(streams[k])
            trees.append(train_tree(bank, geom, Y, target_weights, lm, depth, n_candidates, radius, rng))
            k += 1
    return FeatureForest.from_trees(trees)


def extract_descriptors(forest: FeatureForest, bank: ImageBank, geom: SampleGeometry) -> IndexFeatures:
    """Active global leaf index per tree, for every sample: ``(n, n_trees)``."""
    out = np.empty((len(geom), forest.n_trees), dtype=np.int64)
    for j, tree in enumerate(forest.trees):
        out[:, j] = forest.leaf_offsets[j] + route(tree, bank, geom)
    return IndexFeatures(out, forest.dim)


def extract_descriptor(forest: FeatureForest, image, shape, transform: SimilarityTransform) -> BinaryDescriptor:
    """Descriptor of one image at ``shape``; see :func:`evaluate_feature` for ``transform``."""
    bank = ImageBank([image])
    geom = SampleGeometry(np.zeros(1, dtype=np.int64), as_points(shape)[None], transform.inverse().linear[None])
    idx = extract_descriptors(forest, bank, geom).indices[0]
    return BinaryDescriptor(np.sort(idx), forest.dim)
