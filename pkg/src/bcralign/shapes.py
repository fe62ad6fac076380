"""Shape vectors, similarity alignment and evaluation metrics.

A shape is a flat float array of length ``2L`` laid out as
``(x1, ..., xL, y1, ..., yL)``. Visibility vectors have length ``L``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateAlignmentError,
    DegenerateNormalizerError,
    DimensionMismatchError,
    EmptyInputError,
)

MIN_VISIBLE = 3


def n_landmarks(shape: np.ndarray) -> int:
    return shape.shape[-1] // 2


def as_points(shape: np.ndarray) -> np.ndarray:
    """(..., 2L) vector -> (..., L, 2) points."""
    shape = np.asarray(shape, dtype=float)
    L = shape.shape[-1] // 2
    return np.stack([shape[..., :L], shape[..., L:]], axis=-1)


def as_vector(points: np.ndarray) -> np.ndarray:
    """(..., L, 2) points -> (..., 2L) vector."""
    points = np.asarray(points, dtype=float)
    return np.concatenate([points[..., 0], points[..., 1]], axis=-1)


def check_shape(shape: np.ndarray, L: int | None = None) -> np.ndarray:
    shape = np.asarray(shape, dtype=float)
    if shape.ndim != 1 or shape.size % 2 or shape.size < 2 * MIN_VISIBLE:
        raise DimensionMismatchError(f"shape must be a flat vector of 2L >= 6 values, got {shape.shape}")
    if L is not None and shape.size != 2 * L:
        raise DimensionMismatchError(f"expected {L} landmarks, got {shape.size // 2}")
    if not np.all(np.isfinite(shape)):
        raise ValueError("shape has non-finite coordinates")
    return shape


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(rotation) @ p + translation``."""

    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @property
    def linear(self) -> np.ndarray:
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.linear.T + np.asarray(self.translation)

    def apply(self, shape: np.ndarray) -> np.ndarray:
        return as_vector(self.apply_points(as_points(shape)))

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        rot = _wrap_angle(-self.rotation)
        c, s = np.cos(rot), np.sin(rot)
        t = -inv_scale * np.array([[c, -s], [s, c]]) @ np.asarray(self.translation)
        return SimilarityTransform(inv_scale, rot, (float(t[0]), float(t[1])))

    def compose(self, first: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``first`` and then ``self``."""
        t = self.linear @ np.asarray(first.translation) + np.asarray(self.translation)
        return SimilarityTransform(
            self.scale * first.scale,
            _wrap_angle(self.rotation + first.rotation),
            (float(t[0]), float(t[1])),
        )


def _wrap_angle(theta: float) -> float:
    # map into (-pi, pi]
    theta = float(np.mod(theta + np.pi, 2 * np.pi) - np.pi)
    return np.pi if theta == -np.pi else theta


def _visible(mask, L) -> np.ndarray:
    if mask is None:
        return np.ones(L, dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != (L,):
        raise DimensionMismatchError(f"mask has length {mask.shape}, expected {L}")
    return mask >= 0.5


def procrustes_align(shape, reference, mask=None):
    """Similarity-align ``shape`` onto ``reference``.

    Only landmarks flagged visible in ``mask`` enter the least-squares
    objective; the returned shape has the transform applied to every landmark.

    Returns
    -------
    aligned : ndarray (2L,)
    transform : SimilarityTransform
        Maps ``shape`` coordinates onto the reference frame.
    """
    shape = np.asarray(shape, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if shape.shape != reference.shape:
        raise DimensionMismatchError("shape and reference differ in landmark count")
    L = n_landmarks(shape)
    vis = _visible(mask, L)
    if vis.sum() < MIN_VISIBLE:
        raise DegenerateAlignmentError(f"need >= {MIN_VISIBLE} visible landmarks, have {int(vis.sum())}")

    src = as_points(shape)
    dst = as_points(reference)
    z = src[vis, 0] + 1j * src[vis, 1]
    w = dst[vis, 0] + 1j * dst[vis, 1]
    zc, wc = z.mean(), w.mean()
    z0 = z - zc
    spread = np.vdot(z0, z0).real
    if spread <= 1e-24 * max(1.0, np.abs(z).max() ** 2):
        raise DegenerateAlignmentError("visible landmarks are coincident")
    c = np.vdot(z0, w - wc) / spread
    scale = float(abs(c))
    if scale == 0.0:
        raise DegenerateAlignmentError("reference has no spread over the visible landmarks")
    t = wc - c * zc
    transform = SimilarityTransform(scale, _wrap_angle(np.angle(c)), (float(t.real), float(t.imag)))
    return transform.apply(shape), transform


def alignment_residual(shape, reference, mask=None) -> float:
    """Sum of squared distances after optimal alignment, over visible landmarks."""
    aligned, _ = procrustes_align(shape, reference, mask)
    vis = _visible(mask, n_landmarks(aligned))
    d = as_points(aligned)[vis] - as_points(reference)[vis]
    return float(np.sum(d * d))


def normalize_shape(shape, mask=None) -> np.ndarray:
    """Center on the (visible) centroid and scale to unit RMS radius."""
    pts = as_points(shape)
    vis = _visible(mask, pts.shape[0])
    centered = pts - pts[vis].mean(axis=0)
    size = np.sqrt(np.mean(np.sum(centered[vis] ** 2, axis=1)))
    if size == 0:
        raise DegenerateAlignmentError("shape has zero size")
    return as_vector(centered / size)


def generalized_procrustes(shapes: Sequence[np.ndarray], masks=None, max_iters: int = 100, tol: float = 1e-8):
    """Align a set of shapes to their common mean.

    The mean is taken per landmark over the shapes where that landmark is
    visible, and is renormalized to zero centroid and unit RMS radius after
    every pass. Landmarks never visible in any shape get NaN in the mean.

    Returns
    -------
    aligned : ndarray (n, 2L)
    mean : ndarray (2L,)
    """
    if len(shapes) == 0:
        raise EmptyInputError("generalized_procrustes needs at least one shape")
    X = np.array([np.asarray(s, dtype=float) for s in shapes])
    n, D = X.shape
    L = D // 2
    if masks is None:
        M = np.ones((n, L), dtype=bool)
    else:
        M = np.asarray(masks) >= 0.5
        if M.shape != (n, L):
            raise DimensionMismatchError("masks must be (n_shapes, L)")
    for i in range(n):
        if M[i].sum() < MIN_VISIBLE:
            raise DegenerateAlignmentError(f"shape {i} has fewer than {MIN_VISIBLE} visible landmarks")

    mean = normalize_shape(X[0], M[0])
    mean[np.concatenate([~M[0], ~M[0]])] = np.nan
    for _ in range(max_iters):
        aligned = _align_all(X, mean, M)
        new_mean = _masked_mean(aligned, M)
        # keep orientation anchored to the previous mean
        new_mean = _anchor(new_mean, mean)
        moved = np.sqrt(np.nansum((new_mean - mean) ** 2))
        mean = new_mean
        if moved < tol:
            break
    aligned = _align_all(X, mean, M)
    return aligned, mean


def _align_all(X, mean, M):
    L = M.shape[1]
    defined = ~np.isnan(mean[:L])
    ref = np.where(np.isnan(mean), 0.0, mean)
    scale, rot, t = batch_procrustes(X, ref, M & defined)
    c = scale * np.exp(1j * rot)
    z = X[:, :L] + 1j * X[:, L:]
    out = c[:, None] * z + (t[:, 0] + 1j * t[:, 1])[:, None]
    return np.concatenate([out.real, out.imag], axis=1)


def _masked_mean(aligned: np.ndarray, M: np.ndarray) -> np.ndarray:
    L = M.shape[1]
    W = np.concatenate([M, M], axis=1).astype(float)
    counts = W.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = (aligned * W).sum(axis=0) / counts
    mean[counts == 0] = np.nan
    defined = ~np.isnan(mean[:L])
    pts = as_points(mean)
    centered = pts - pts[defined].mean(axis=0)
    size = np.sqrt(np.mean(np.sum(centered[defined] ** 2, axis=1)))
    return as_vector(centered / size)


def _anchor(mean: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Rotate ``mean`` (rotation only) to best match ``previous``."""
    L = mean.size // 2
    ok = ~np.isnan(mean[:L]) & ~np.isnan(previous[:L])
    a, b = as_points(mean), as_points(previous)
    z = a[ok, 0] + 1j * a[ok, 1]
    w = b[ok, 0] + 1j * b[ok, 1]
    c = np.vdot(z, w)
    if abs(c) == 0:
        return mean
    rot = c / abs(c)
    zz = (a[:, 0] + 1j * a[:, 1]) * rot
    return np.concatenate([zz.real, zz.imag])


def bounding_box(shape, mask=None) -> tuple[float, float, float, float]:
    """(x, y, w, h) of the (visible) landmarks."""
    pts = as_points(shape)
    vis = _visible(mask, pts.shape[0])
    lo = pts[vis].min(axis=0)
    hi = pts[vis].max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])


NORMALIZATIONS = ("interocular", "eye_mouth")


def normalizer_distance(gt, gt_vis, normalization: str, roles: Mapping[str, int]) -> float:
    """Length used to normalize landmark errors.

    ``interocular`` uses roles ``left_eye_outer`` / ``right_eye_outer``;
    ``eye_mouth`` is half the distance between roles ``eye`` and ``mouth_corner``.
    """
    pts = as_points(gt)
    vis = _visible(gt_vis, pts.shape[0])
    if normalization == "interocular":
        keys, factor = ("left_eye_outer", "right_eye_outer"), 1.0
    elif normalization in ("eye_mouth", "eye-mouth"):
        keys, factor = ("eye", "mouth_corner"), 0.5
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    idx = []
    for k in keys:
        if k not in roles:
            raise KeyError(f"role map lacks {k!r}")
        i = int(roles[k])
        if not vis[i]:
            raise DegenerateNormalizerError(f"normalizing landmark {k!r} ({i}) is not visible")
        idx.append(i)
    dist = factor * float(np.linalg.norm(pts[idx[0]] - pts[idx[1]]))
    if dist == 0.0:
        raise DegenerateNormalizerError("normalizing distance is zero")
    return dist


def normalized_error(pred, gt, gt_vis, normalization: str, roles: Mapping[str, int]) -> float:
    """Mean point-to-point error over gt-visible landmarks, divided by the normalizer."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatchError("prediction and ground truth differ in length")
    L = n_landmarks(gt)
    vis = _visible(gt_vis, L)
    norm = normalizer_distance(gt, vis, normalization, roles)
    d = np.linalg.norm(as_points(pred)[vis] - as_points(gt)[vis], axis=1)
    return float(d.mean() / norm)


def ced_curve(errors, thresholds) -> list[tuple[float, float]]:
    """Fraction of ``errors`` that are <= each threshold."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise EmptyInputError("ced_curve needs at least one error value")
    s = np.sort(errors)
    out = []
    for t in thresholds:
        frac = np.searchsorted(s, t, side="right") / s.size
        out.append((float(t), float(frac)))
    return out


def batch_procrustes(shapes, reference, masks=None):
    """Vectorized :func:`procrustes_align` for a stack of shapes.

    Returns ``(scale, rotation, translation)`` arrays of shape ``(n,)``,
    ``(n,)`` and ``(n, 2)`` for the transforms mapping each shape onto
    ``reference``.
    """
    S = as_points(np.atleast_2d(np.asarray(shapes, dtype=float)))
    R = as_points(np.asarray(reference, dtype=float))
    n, L, _ = S.shape
    W = np.ones((n, L)) if masks is None else (np.asarray(masks) >= 0.5).astype(float)
    counts = W.sum(axis=1)
    if np.any(counts < MIN_VISIBLE):
        bad = int(np.flatnonzero(counts < MIN_VISIBLE)[0])
        raise DegenerateAlignmentError(f"shape {bad} has fewer than {MIN_VISIBLE} visible landmarks")
    z = S[..., 0] + 1j * S[..., 1]
    w = R[:, 0] + 1j * R[:, 1]
    zc = (W * z).sum(axis=1) / counts
    wc = (W * w[None, :]).sum(axis=1) / counts
    z0 = (z - zc[:, None]) * W
    w0 = (w[None, :] - wc[:, None]) * W
    spread = np.sum(np.abs(z0) ** 2, axis=1)
    if np.any(spread <= 0):
        raise DegenerateAlignmentError("visible landmarks are coincident")
    c = np.sum(np.conj(z0) * w0, axis=1) / spread
    t = wc - c * zc
    return np.abs(c), np.angle(c), np.stack([t.real, t.imag], axis=1)


def similarity_matrices(scale, rotation) -> np.ndarray:
    """(n,) scale and rotation -> (n, 2, 2) linear parts."""
    c, s = np.cos(rotation), np.sin(rotation)
    return np.asarray(scale)[:, None, None] * np.stack(
        [np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2
    )
