"""Structured point distribution models.

A shape PCA (with missing landmarks imputed by iterated PCA and four
similarity directions appended) and a visibility PCA are merged by a third
PCA over their stacked parameters. One parameter vector ``q`` then encodes
shape and landmark visibility together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, UnimputableLandmarkError
from .linalg import pca_fit
from .shapes import as_points, as_vector, generalized_procrustes, procrustes_align

VISIBILITY_THRESHOLD = 0.5


@dataclass(frozen=True)
class SpdmModel:
    mu_s: np.ndarray  # (2L,)
    B_s: np.ndarray  # (2L, ks); last columns are the similarity directions
    mu_v: np.ndarray  # (L,)
    B_v: np.ndarray  # (L, kv)
    C: np.ndarray  # (ks + kv, q_dim)
    shape_param_scale: np.ndarray  # (ks,)
    n_shape_modes: int = 0  # PCA columns of B_s before the similarity block

    @property
    def n_landmarks(self) -> int:
        return self.mu_v.size

    @property
    def q_dim(self) -> int:
        return self.C.shape[1]


@dataclass
class ImputationResult:
    completed: np.ndarray
    n_components: int
    # training-entry squared residual after every alternation, keyed by m
    residual_log: dict = field(default_factory=dict)
    # squared error on the held-out observed entries, keyed by m
    heldout_residual: dict = field(default_factory=dict)


def _alternate(X: np.ndarray, fit_mask: np.ndarray, m: int, tol: float, max_inner: int):
    """Rank-m alternation; entries outside ``fit_mask`` are re-estimated."""
    current = X.copy()
    flat = current.reshape(-1)
    free = np.flatnonzero(~fit_mask.reshape(-1))
    fit = np.flatnonzero(fit_mask.reshape(-1))
    log = []
    last = np.inf
    for _ in range(max_inner):
        recon = _rank_m_reconstruction(current, m).reshape(-1)
        r = flat[fit] - recon[fit]
        log.append(float(r @ r))
        new = recon[free]
        moved = np.max(np.abs(new - flat[free])) if free.size else 0.0
        flat[free] = new
        # linear convergence: remaining distance ~ moved * rate / (1 - rate)
        rate = moved / last if last > 0 else 0.0
        remaining = moved * rate / (1.0 - rate) if rate < 1.0 else np.inf
        last = moved
        if moved < tol and remaining < tol:
            break
    return current, log


def _holdout_mask(W: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    H = W & (rng.random(W.shape) < fraction)
    # every column keeps at least one fitted entry
    starved = (W & ~H).sum(axis=0) == 0
    H[:, starved] = False
    return H


def iterated_pca_impute(data, observed, tol: float = 1e-6, max_inner: int = 200,
                        min_improvement: float = 0.01, max_components: int | None = None,
                        holdout_fraction: float = 0.1, seed: int = 0) -> ImputationResult:
    """Fill the unobserved entries of ``data`` by alternating PCA fits.

    Missing entries start at their column's observed mean. For a given m the
    rank-m PCA fit and the reconstruction of the missing entries alternate
    until both their last move and the extrapolated remaining distance to the
    fixed point are below ``tol``. m grows while the error on a
    random held-out slice of the observed entries improves by at least
    ``min_improvement`` (relative); the data are then completed with the best
    m using every observed entry.
    """
    X = np.array(data, dtype=float)
    W = np.asarray(observed, dtype=bool)
    if X.shape != W.shape:
        raise DimensionMismatchError("data and observed mask differ in shape")
    n, D = X.shape
    if W.all():
        return ImputationResult(X, 0)
    counts = W.sum(axis=0)
    if np.any(counts == 0):
        raise UnimputableLandmarkError(f"columns {np.flatnonzero(counts == 0).tolist()} are never observed")
    col_mean = np.where(W, X, 0.0).sum(axis=0) / counts
    X[~W] = np.broadcast_to(col_mean, X.shape)[~W]

    H = _holdout_mask(W, holdout_fraction, seed)
    if not H.any():
        H = W  # too little data to hold any out: score on the fitted entries
    fit_mask = W & ~H if H is not W else W
    start = X.copy()
    start[H & ~fit_mask] = np.broadcast_to(col_mean, X.shape)[H & ~fit_mask]
    target = np.asarray(data, dtype=float)[H]
    # held-out error at the level the alternation is converged to counts as exact
    floor = H.sum() * (10.0 * tol) ** 2

    cap = min(n - 1, D) if max_components is None else min(max_components, n - 1, D)
    result = ImputationResult(X, 0)
    best_m, prev = 0, None
    current = start
    for m in range(1, cap + 1):
        current, log = _alternate(current, fit_mask, m, tol, max_inner)
        d = current[H] - target
        res = float(d @ d)
        result.residual_log[m] = log
        result.heldout_residual[m] = res
        if prev is not None and prev - res <= min_improvement * prev:
            break
        best_m, prev = m, res
        if res <= floor:
            break
    result.n_components = best_m
    result.completed, _ = _alternate(X, W, best_m, tol, max_inner)
    return result


def _rank_m_reconstruction(X: np.ndarray, m: int) -> np.ndarray:
    mean = X.mean(axis=0)
    Xc = X - mean
    if X.shape[0] >= X.shape[1]:
        _, vecs = np.linalg.eigh(Xc.T @ Xc)
        U = vecs[:, -m:]
    else:
        _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
        U = Vt[:m].T
    return (Xc @ U) @ U.T + mean


def coordinate_mask(masks) -> np.ndarray:
    """(n, L) landmark visibility -> (n, 2L) coordinate observation mask."""
    M = np.asarray(masks) >= VISIBILITY_THRESHOLD
    return np.concatenate([M, M], axis=-1)


def impute_missing(shapes, masks, tol: float = 1e-6) -> list[np.ndarray]:
    """Complete occluded landmark coordinates of aligned shapes."""
    X = np.array([np.asarray(s, dtype=float) for s in shapes])
    res = iterated_pca_impute(X, coordinate_mask(masks), tol=tol)
    return list(res.completed)


def _similarity_columns(mean: np.ndarray) -> np.ndarray:
    pts = as_points(mean)
    centered = pts - pts.mean(axis=0)
    L = pts.shape[0]
    scale = as_vector(centered)
    rot = as_vector(np.stack([-centered[:, 1], centered[:, 0]], axis=1))
    tx = np.concatenate([np.ones(L), np.zeros(L)])
    ty = np.concatenate([np.zeros(L), np.ones(L)])
    return np.stack([rot, tx, ty, scale], axis=1)


def _gram_schmidt_append(basis: np.ndarray, extra: np.ndarray) -> np.ndarray:
    cols = [basis[:, j] for j in range(basis.shape[1])]
    for j in range(extra.shape[1]):
        v = extra[:, j].copy()
        ref = np.linalg.norm(v)
        for _ in range(2):
            for c in cols:
                v -= (c @ v) * c
        nv = np.linalg.norm(v)
        if nv > 1e-10 * max(ref, 1.0):
            cols.append(v / nv)
    return np.stack(cols, axis=1) if cols else np.zeros((basis.shape[0], 0))


def build_spdm(shapes, masks=None, energy_fraction: float = 0.98, fill_unobserved=None) -> SpdmModel:
    """Build an SPDM from shapes and their landmark visibility."""
    return build_spdm_with_shapes(shapes, masks, energy_fraction, fill_unobserved)[0]


def build_spdm_with_shapes(shapes, masks=None, energy_fraction: float = 0.98, fill_unobserved=None,
                           component_energy: float = 1.0):
    """Like :func:`build_spdm`, also returning the imputed input shapes.

    The returned ``(n, 2L)`` array holds each input shape, in its original
    frame, with occluded landmarks replaced by their imputed positions.

    ``fill_unobserved`` is an optional reference shape supplying positions
    for landmarks that are occluded in every input shape; without it such
    landmarks raise :class:`UnimputableLandmarkError`.

    ``energy_fraction`` truncates the combined PCA. The shape and
    visibility PCAs keep ``component_energy`` of their variance, which by
    default means every non-degenerate mode.
    """
    X = np.array([np.asarray(s, dtype=float) for s in shapes])
    n, D = X.shape
    L = D // 2
    if n < 2:
        raise ValueError("build_spdm needs at least 2 shapes")
    V = np.ones((n, L)) if masks is None else (np.asarray(masks, dtype=float) >= VISIBILITY_THRESHOLD).astype(float)
    vis = V > 0.5

    aligned, gpa_mean = generalized_procrustes(X, vis)
    observed = coordinate_mask(vis)
    never = ~vis.any(axis=0)
    if never.any():
        if fill_unobserved is None:
            raise UnimputableLandmarkError(f"landmarks {np.flatnonzero(never).tolist()} are never visible")
        defined = ~never
        ref, _ = procrustes_align(fill_unobserved, np.where(np.isnan(gpa_mean), 0.0, gpa_mean), defined)
        fill_cols = np.concatenate([never, never])
        aligned[:, fill_cols] = ref[fill_cols]
        gpa_mean = np.where(np.isnan(gpa_mean), ref, gpa_mean)
        observed = observed | fill_cols

    completed = iterated_pca_impute(aligned, observed).completed
    shape_pca = pca_fit(completed, component_energy)
    mu = shape_pca.mean
    B_s = _gram_schmidt_append(shape_pca.basis, _similarity_columns(mu))

    # imputed positions carried back into each shape's own frame
    in_frame = X.copy()
    L_def = ~never
    for i in range(n):
        _, T = procrustes_align(X[i], gpa_mean, vis[i] & L_def)
        back = T.inverse().apply(completed[i])
        in_frame[i] = np.where(observed[i] & np.concatenate([vis[i], vis[i]]), X[i], back)

    b_s = (in_frame - mu) @ B_s
    shift = b_s.mean(axis=0)
    mu_s = mu + B_s @ shift
    b_s = b_s - shift

    vis_pca = pca_fit(V, component_energy)
    b_v = (V - vis_pca.mean) @ vis_pca.basis

    sd = b_s.std(axis=0, ddof=1)
    target = float(np.mean(b_v.std(axis=0, ddof=1))) if b_v.shape[1] else 1.0
    floor = 1e-9 * max(float(sd.max(initial=0.0)), 1e-300)
    scale = np.where(sd > floor, target / np.where(sd > floor, sd, 1.0), 1.0)

    stacked = np.concatenate([b_s * scale, b_v], axis=1)
    combined = pca_fit(stacked, energy_fraction)
    model = SpdmModel(
        mu_s=mu_s,
        B_s=B_s,
        mu_v=vis_pca.mean,
        B_v=vis_pca.basis,
        C=combined.basis,
        shape_param_scale=scale,
        n_shape_modes=shape_pca.n_components,
    )
    return model, in_frame


def params_from_shape(model: SpdmModel, s, v) -> np.ndarray:
    """Project shape(s) and visibility into the combined parameter space.

    Accepts single vectors or stacked ``(n, 2L)`` / ``(n, L)`` arrays.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    if s.shape[-1] != model.mu_s.size or v.shape[-1] != model.mu_v.size:
        raise DimensionMismatchError("shape/visibility length does not match the model")
    b_s = (s - model.mu_s) @ model.B_s * model.shape_param_scale
    b_v = (v - model.mu_v) @ model.B_v
    return np.concatenate([b_s, b_v], axis=-1) @ model.C


def shape_from_params(model: SpdmModel, q):
    """Shape and continuous visibility for parameters ``q``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.q_dim:
        raise DimensionMismatchError(f"expected {model.q_dim} parameters, got {q.shape[-1]}")
    stacked = q @ model.C.T
    ks = model.B_s.shape[1]
    b_s = stacked[..., :ks] / model.shape_param_scale
    b_v = stacked[..., ks:]
    return model.mu_s + b_s @ model.B_s.T, model.mu_v + b_v @ model.B_v.T


def binarize_visibility(v, threshold: float = VISIBILITY_THRESHOLD) -> np.ndarray:
    """1 where ``v >= threshold`` (ties count as visible), else 0."""
    return (np.asarray(v, dtype=float) >= threshold).astype(np.int8)
