"""Branching cascaded regression of shape and landmark visibility.

A model is a binary tree of cascade stages. Each stage owns an SPDM built
from its training subset, a forest turning image appearance into a sparse
binary descriptor, a ridge regressor from descriptors to SPDM parameter
updates and, below the last level, a linear SVM that routes faces to one of
two children.

Every sample is processed in a fixed *face frame*: the similarity that
maps its initial shape onto the model's reference shape. Shapes are
regressed in that frame and mapped back to the image at the end.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateAlignmentError, UnderPopulatedNodeError, ZeroVarianceError
from .features import (
    BinaryDescriptor,
    FeatureForest,
    ImageBank,
    SampleGeometry,
    extract_descriptors,
    train_forest,
)
from .linalg import IndexFeatures, LinearSvm, RidgeRegressor, pca_fit, ridge_fit, svm_fit
from .shapes import (
    MIN_VISIBLE,
    as_points,
    as_vector,
    batch_procrustes,
    bounding_box,
    generalized_procrustes,
    similarity_matrices,
)
from .spdm import (
    VISIBILITY_THRESHOLD,
    SpdmModel,
    binarize_visibility,
    build_spdm_with_shapes,
    params_from_shape,
    shape_from_params,
)

log = logging.getLogger(__name__)

# mean-frame units per "face size": the reference shape has unit RMS radius
FACE_SIZE = 2.0

TARGET_MODES = ("spdm", "raw")


@dataclass
class BcrConfig:
    n_trees: int = 600
    tree_depth: int = 6
    levels: int = 4
    n_candidates: int = 500
    lam: float = 1.0
    energy: float = 0.98
    augment: int = 5
    target_mode: str = "spdm"
    radii: tuple = (0.4, 0.3, 0.2, 0.1)  # fraction of face size, per level
    svm_cost: float = 1.0
    min_node_size: int = 20
    branching: bool = True
    jitter_scale: float = 0.05
    jitter_shift: float = 0.05
    jitter_rotation_deg: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"target_mode must be one of {TARGET_MODES}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        self.radii = tuple(float(r) for r in self.radii)

    def radius(self, level: int) -> float:
        """Sampling radius (mean-frame units) for 1-based ``level``."""
        r = self.radii[min(level, len(self.radii)) - 1]
        return r * FACE_SIZE


@dataclass
class BcrNode:
    level: int
    mean_shape: np.ndarray
    spdm: SpdmModel | None
    forest: FeatureForest
    regressor: RidgeRegressor
    gate: LinearSvm | None = None
    children: tuple = ()
    stats: dict = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class BcrModel:
    root: BcrNode
    levels: int
    n_landmarks: int
    target_mode: str
    reference_shape: np.ndarray
    config: dict = field(default_factory=dict)

    def nodes(self) -> list[BcrNode]:
        """All nodes in breadth-first order."""
        out, queue = [], deque([self.root])
        while queue:
            node = queue.popleft()
            out.append(node)
            queue.extend(node.children)
        return out


@dataclass
class AlignmentResult:
    shape: np.ndarray
    visibility: np.ndarray
    visibility_continuous: np.ndarray
    path: list
    trace: list = field(default_factory=list)


@dataclass
class TrainingSet:
    images: list
    shapes: np.ndarray  # (n, 2L) image coordinates
    visibility: np.ndarray  # (n, L) 0/1
    boxes: np.ndarray | None = None  # (n, 4) x, y, w, h

    def __post_init__(self):
        self.shapes = np.asarray(self.shapes, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=float)
        if self.boxes is None:
            self.boxes = np.array([bounding_box(s, v) for s, v in zip(self.shapes, self.visibility)])
        self.boxes = np.asarray(self.boxes, dtype=float)
        n = len(self.images)
        if not (self.shapes.shape[0] == self.visibility.shape[0] == self.boxes.shape[0] == n):
            raise ValueError("images, shapes, visibility and boxes differ in count")
        if self.shapes.shape[1] != 2 * self.visibility.shape[1]:
            raise ValueError("shape and visibility lengths disagree")

    def __len__(self):
        return len(self.images)


# ---------------------------------------------------------------- frames


@dataclass
class Frames:
    """Per-sample similarity from image coordinates to the face frame."""

    linear: np.ndarray  # (n, 2, 2)
    translation: np.ndarray  # (n, 2)

    def to_face(self, shapes) -> np.ndarray:
        pts = as_points(shapes)
        return as_vector(np.einsum("nij,nlj->nli", self.linear, pts) + self.translation[:, None, :])

    def to_image(self, shapes) -> np.ndarray:
        inv = np.linalg.inv(self.linear)
        pts = as_points(shapes) - self.translation[:, None, :]
        return as_vector(np.einsum("nij,nlj->nli", inv, pts))

    def subset(self, rows) -> "Frames":
        return Frames(self.linear[rows], self.translation[rows])


def face_frames(init_shapes, reference) -> Frames:
    scale, rot, t = batch_procrustes(init_shapes, reference)
    return Frames(similarity_matrices(scale, rot), t)


def place_in_box(reference, box) -> np.ndarray:
    """Stretch and shift ``reference`` so its bounding box equals ``box``."""
    x, y, w, h = (float(b) for b in box)
    if w <= 0 or h <= 0:
        raise ValueError("box width and height must be positive")
    bx, by, bw, bh = bounding_box(reference)
    pts = as_points(reference)
    out = np.empty_like(pts)
    out[:, 0] = x + (pts[:, 0] - bx) * (w / bw)
    out[:, 1] = y + (pts[:, 1] - by) * (h / bh)
    return as_vector(out)


def init_from_box(model: BcrModel, box) -> np.ndarray:
    """Initial shape: the model's reference shape fitted to a detector box."""
    return place_in_box(model.reference_shape, box)


def jitter_shape(shape, box, rng, scale=0.05, shift=0.05, rotation_deg=10.0) -> np.ndarray:
    """Random similarity perturbation about the box center."""
    x, y, w, h = box
    center = np.array([x + w / 2, y + h / 2])
    s = rng.uniform(1 - scale, 1 + scale)
    theta = np.deg2rad(rng.uniform(-rotation_deg, rotation_deg))
    d = rng.uniform(-shift, shift, 2) * np.array([w, h])
    c, sn = np.cos(theta), np.sin(theta)
    R = s * np.array([[c, -sn], [sn, c]])
    pts = (as_points(shape) - center) @ R.T + center + d
    return as_vector(pts)


# ---------------------------------------------------------------- runtime pieces


def _geometry(node_mean, img_idx, image_shapes, vis) -> SampleGeometry:
    mask = np.asarray(vis) >= VISIBILITY_THRESHOLD
    too_few = mask.sum(axis=1) < MIN_VISIBLE
    if np.any(too_few):
        raise DegenerateAlignmentError(
            f"{int(too_few.sum())} sample(s) have fewer than {MIN_VISIBLE} landmarks predicted visible"
        )
    scale, rot, _ = batch_procrustes(image_shapes, node_mean, mask)
    linear = similarity_matrices(1.0 / scale, -rot)
    return SampleGeometry(np.asarray(img_idx), as_points(image_shapes), linear)


def _current_params(node: BcrNode, s, v) -> np.ndarray:
    if node.spdm is None:
        return np.asarray(s, dtype=float)
    return params_from_shape(node.spdm, s, v)


def _from_params(node: BcrNode, q, v_prev):
    if node.spdm is None:
        return q, np.ones_like(v_prev)
    return shape_from_params(node.spdm, q)


def _node_step(node: BcrNode, bank: ImageBank, img_idx, frames: Frames, s, v):
    """Batch node update in the face frame; also returns the descriptors."""
    geom = _geometry(node.mean_shape, img_idx, frames.to_image(s), v)
    d = extract_descriptors(node.forest, bank, geom)
    q_prev = _current_params(node, s, v)
    q = q_prev + node.regressor.predict(d)
    s_new, v_new = _from_params(node, q, v)
    return s_new, v_new, d


def node_update(node: BcrNode, image, s_prev, v_prev, frame=None):
    """One cascade stage for one face.

    ``s_prev`` is in the face frame; ``frame`` (a :class:`Frames` of length
    1) maps image to face coordinates and defaults to the identity.
    """
    if frame is None:
        frame = Frames(np.eye(2)[None], np.zeros((1, 2)))
    s, v, _ = _node_step(node, ImageBank([image]), np.zeros(1, dtype=np.int64), frame,
                         np.asarray(s_prev, float)[None], np.asarray(v_prev, float)[None])
    return s[0], v[0]


def branch_decision(node: BcrNode, descriptor) -> tuple[str, float]:
    """``('left' | 'right', |y|)`` with ``y = w.d + b``; ``y = 0`` goes right."""
    if node.gate is None:
        raise ValueError("branch_decision called on a node without a gate")
    if isinstance(descriptor, BinaryDescriptor):
        descriptor = IndexFeatures([descriptor.active_indices], descriptor.dimension)
    y = float(node.gate.decision(descriptor)[0])
    return ("left" if y < 0 else "right"), abs(y)


# ---------------------------------------------------------------- branching


def partition_training(targets):
    """Split samples at the median of their projection on the first PC.

    Returns ``(labels, first_pc)``; labels are -1 (left) for projections at
    or below the median and +1 above it.
    """
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] < 2:
        raise ValueError("partition_training needs at least 2 samples")
    pca = pca_fit(Y, n_components=1)
    if pca.n_components == 0:
        raise ZeroVarianceError("ideal updates have no variance to branch on")
    pc = pca.basis[:, 0].copy()
    if pc[np.argmax(np.abs(pc))] < 0:
        pc = -pc
    proj = (Y - pca.mean) @ pc
    med = np.median(proj)
    labels = np.where(proj <= med, -1, 1).astype(np.int64)
    if np.all(labels == labels[0]):
        raise ZeroVarianceError("median split put every sample on one side")
    return labels, pc


def overlap_split(labels, margins):
    """Children's sample sets under the overlap rule.

    Each child keeps all of its own samples plus ``ceil(2k/3)`` of the ``k``
    samples labelled for the other side, dropping those the gate puts
    deepest on the other side. Returns index arrays ``(left, right)``.
    """
    labels = np.asarray(labels)
    y = np.asarray(margins, dtype=float)
    lft = np.flatnonzero(labels < 0)
    rgt = np.flatnonzero(labels > 0)

    def keep(others, easiness):
        k = others.size
        n_keep = -(-2 * k // 3)
        order = np.argsort(easiness[others], kind="stable")  # hardest first
        return others[order[:n_keep]]

    left = np.sort(np.concatenate([lft, keep(rgt, y)]))
    right = np.sort(np.concatenate([rgt, keep(lft, -y)]))
    return left, right


# ---------------------------------------------------------------- training


@dataclass
class _Work:
    rows: np.ndarray  # indices into the augmented sample arrays
    s: np.ndarray  # current face-frame shapes for those rows
    v: np.ndarray


def _reference_shape(train: TrainingSet) -> np.ndarray:
    _, mean = generalized_procrustes(train.shapes, train.visibility)
    if np.any(np.isnan(mean)):
        raise DegenerateAlignmentError("some landmark is never visible in the training set")
    return mean


def augment(train: TrainingSet, reference, config: BcrConfig, rng):
    """Jittered initial shapes: ``config.augment`` per training image."""
    img_idx, inits = [], []
    for i in range(len(train)):
        base = place_in_box(reference, train.boxes[i])
        for _ in range(max(1, config.augment)):
            inits.append(jitter_shape(base, train.boxes[i], rng, config.jitter_scale,
                                      config.jitter_shift, config.jitter_rotation_deg))
            img_idx.append(i)
    return np.array(img_idx, dtype=np.int64), np.array(inits)


def train_bcr(train: TrainingSet, config: BcrConfig | None = None, progress=None) -> BcrModel:
    """Train a branching cascade breadth-first.

    Samples follow their overlap-rule assignment during training; only the
    SVM gates route faces at test time.
    """
    config = config or BcrConfig()
    L = train.visibility.shape[1]
    if len(train) * max(1, config.augment) < 2 * max(1, config.augment):
        raise ValueError("need at least 2 training images")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    reference = _reference_shape(train)
    img_idx, inits = augment(train, reference, config, rng)
    frames = face_frames(inits, reference)
    bank = ImageBank(train.images)
    gt_face = frames.to_face(train.shapes[img_idx])
    gt_vis = train.visibility[img_idx]
    n = img_idx.size

    root_work = _Work(np.arange(n), frames.to_face(inits), np.ones((n, L)))
    queue = deque([(root_work, None, 0, 1)])  # work, parent, child slot, level
    root = None
    node_id = 0
    while queue:
        work, parent, slot, level = queue.popleft()
        node, children_work = _train_node(
            work, level, node_id, config, bank, img_idx, frames, gt_face, gt_vis, parent
        )
        if progress:
            progress(node, level, node_id)
        node_id += 1
        if parent is None:
            root = node
        else:
            kids = list(parent.children)
            kids[slot] = node
            parent.children = tuple(kids)
        for k, cw in enumerate(children_work):
            queue.append((cw, node, k, level + 1))
        node.children = tuple([None] * len(children_work))

    return BcrModel(root, config.levels, L, config.target_mode, reference, asdict(config))


def _train_node(work: _Work, level, node_id, config: BcrConfig, bank, img_idx, frames, gt_face, gt_vis, parent):
    rows = work.rows
    if rows.size < config.min_node_size:
        raise UnderPopulatedNodeError(
            f"node {node_id} at level {level} has {rows.size} samples (< {config.min_node_size}); "
            "use more training data, fewer levels or more augmentation"
        )
    node_frames = frames.subset(rows)
    gvis = gt_vis[rows]

    if config.target_mode == "spdm":
        fill = parent.mean_shape if parent is not None else None
        spdm, gt_complete = build_spdm_with_shapes(gt_face[rows], gvis, config.energy, fill_unobserved=fill)
        mean_shape = spdm.mu_s
        q_star = params_from_shape(spdm, gt_complete, gvis)
        q_prev = params_from_shape(spdm, work.s, work.v)
    else:
        spdm = None
        _, mean_shape = generalized_procrustes(gt_face[rows], gvis)
        if np.any(np.isnan(mean_shape)):
            mean_shape = np.where(np.isnan(mean_shape), parent.mean_shape, mean_shape)
        q_star = gt_face[rows]
        q_prev = work.s
    dq = q_star - q_prev

    geom = _geometry(mean_shape, img_idx[rows], node_frames.to_image(work.s), work.v)
    seed = np.random.SeedSequence([config.seed, 1, node_id])
    forest = train_forest(
        bank, geom, dq, gvis.mean(axis=0), config.n_trees, config.tree_depth,
        config.n_candidates, config.radius(level), seed,
    )
    d = extract_descriptors(forest, bank, geom)
    regressor = ridge_fit(d, dq, config.lam)
    node = BcrNode(level, mean_shape, spdm, forest, regressor)

    q_new = q_prev + regressor.predict(d)
    s_new, v_new = _from_params(node, q_new, work.v)
    resid = q_star - q_new
    node.stats = {
        "n_samples": int(rows.size),
        "q_dim": int(dq.shape[1]),
        "descriptor_dim": int(forest.dim),
        "ridge_objective": float(np.sum(resid**2) + config.lam * np.sum(regressor.weights**2)),
        "ridge_objective_at_zero": float(np.sum(dq**2)),
    }

    if level >= config.levels:
        return node, []
    if not config.branching:
        return node, [_Work(rows, s_new, v_new)]

    # split along the dominant mode of this node's own regression targets;
    # post-update training residuals are mostly ridge overfit noise
    labels, _ = partition_training(dq)
    gate = svm_fit(d, labels, config.svm_cost)
    margins = gate.decision(d)
    left, right = overlap_split(labels, margins)
    node.gate = gate
    predicted = np.where(margins < 0, -1, 1)
    node.stats["gate_recall"] = float(np.mean(predicted == labels))
    retained = np.zeros(rows.size, dtype=bool)
    retained[left[labels[left] < 0]] = True
    retained[right[labels[right] > 0]] = True
    node.stats["retention_recall"] = float(retained.mean())
    node.stats["child_sizes"] = [int(left.size), int(right.size)]
    return node, [
        _Work(rows[left], s_new[left], v_new[left]),
        _Work(rows[right], s_new[right], v_new[right]),
    ]


# ---------------------------------------------------------------- inference


def fit_many(model: BcrModel, images: Sequence, inits, trace: bool = False) -> list[AlignmentResult]:
    """Align many faces; ``images[i]`` starts from ``inits[i]`` (image coords)."""
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    n = inits.shape[0]
    if not np.all(np.isfinite(inits)):
        raise ValueError("initial shapes must be finite")
    bank = ImageBank(images)
    img_idx = np.arange(n)
    frames = face_frames(inits, model.reference_shape)
    s = frames.to_face(inits)
    v = np.ones((n, model.n_landmarks))
    paths = [[] for _ in range(n)]
    traces = [[] for _ in range(n)]
    groups = [(model.root, np.arange(n))]
    while groups:
        nxt = []
        for node, rows in groups:
            s_new, v_new, d = _node_step(node, bank, img_idx[rows], frames.subset(rows), s[rows], v[rows])
            s[rows], v[rows] = s_new, v_new
            if trace:
                img_shapes = frames.subset(rows).to_image(s_new)
                for k, r in enumerate(rows):
                    traces[r].append(img_shapes[k])
            if not node.children:
                continue
            if node.gate is None:
                nxt.append((node.children[0], rows))
                continue
            y = node.gate.decision(d)
            go_left = y < 0
            for r, g in zip(rows, go_left):
                paths[r].append("left" if g else "right")
            if go_left.any():
                nxt.append((node.children[0], rows[go_left]))
            if (~go_left).any():
                nxt.append((node.children[1], rows[~go_left]))
        groups = nxt
    out_shapes = frames.to_image(s)
    return [
        AlignmentResult(out_shapes[i], binarize_visibility(v[i]), v[i].copy(), paths[i], traces[i])
        for i in range(n)
    ]


def fit(model: BcrModel, image, init, trace: bool = False) -> AlignmentResult:
    """Align one face starting from ``init`` (image coordinates)."""
    return fit_many(model, [image], np.asarray(init, dtype=float)[None], trace=trace)[0]


def count_nodes(model: BcrModel) -> int:
    return len(model.nodes())
