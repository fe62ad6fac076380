import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bcralign.errors import DegenerateAlignmentError, DegenerateNormalizerError, EmptyInputError
from bcralign.shapes import (
    SimilarityTransform,
    alignment_residual,
    as_points,
    as_vector,
    bounding_box,
    ced_curve,
    generalized_procrustes,
    normalize_shape,
    normalized_error,
    procrustes_align,
)

from _oracles import rotation_grid_residual

ROLES = {"right_eye_outer": 0, "left_eye_outer": 1, "eye": 0, "mouth_corner": 2}

coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def spread_shape(L=6):
    return arrays(np.float64, 2 * L, elements=coords).filter(
        lambda s: np.linalg.svd(as_points(s) - as_points(s).mean(0), compute_uv=False)[1] > 1.0
    )


similarities = st.builds(
    SimilarityTransform,
    st.floats(0.2, 5.0),
    st.floats(-np.pi, np.pi),
    st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
)


def test_identity_alignment():
    X = np.array([0.0, 1, 2, 0.5, 0, 1, 0, 2])
    aligned, T = procrustes_align(X, X)
    np.testing.assert_allclose(aligned, X, atol=1e-12)
    assert abs(T.scale - 1) < 1e-12 and abs(T.rotation) < 1e-12
    np.testing.assert_allclose(T.translation, (0, 0), atol=1e-12)


def test_rotated_copy_recovered_exactly():
    X = np.array([0.0, 3, 1, -2, 1, 0.5, 2, 4])
    pts = as_points(X)
    c = pts.mean(0)
    R = np.array([[0, -1], [1, 0]])
    Y = as_vector((pts - c) @ R.T + c)
    assert alignment_residual(Y, X) < 1e-10


def test_procrustes_matches_rotation_grid(rng):
    for _ in range(5):
        S = rng.normal(size=10)
        R = rng.normal(size=10)
        res = alignment_residual(S, R)
        grid = rotation_grid_residual(S, R, step=1e-3)
        assert res <= grid + 1e-12
        # a 1e-3 rad grid is within second order of the optimum
        assert grid - res <= 1e-5 * (1 + np.sum(R**2))


def test_masked_alignment_ignores_hidden(rng):
    S = rng.normal(size=12)
    ref = SimilarityTransform(2.0, 0.4, (3, -1)).apply(S)
    mask = np.array([1, 1, 1, 1, 0, 0])
    ref_corrupt = ref.copy()
    ref_corrupt[[4, 5, 10, 11]] += 100.0
    _, T = procrustes_align(S, ref_corrupt, mask)
    assert abs(T.scale - 2.0) < 1e-10 and abs(T.rotation - 0.4) < 1e-10


def test_degenerate_alignment_errors():
    X = np.arange(8, dtype=float)
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(X, X, [1, 1, 0, 0])
    flat = np.zeros(8)
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(flat, X)


@pytest.mark.invariant
@given(spread_shape(), spread_shape(), similarities)
def test_residual_similarity_invariant(S, R, T):
    a = alignment_residual(S, R)
    b = alignment_residual(T.apply(S), R)
    assert abs(a - b) <= 1e-8 * max(1.0, a)


@pytest.mark.invariant
@given(spread_shape(), spread_shape())
def test_alignment_idempotent(S, R):
    aligned, _ = procrustes_align(S, R)
    _, T2 = procrustes_align(aligned, R)
    assert abs(T2.scale - 1) < 1e-8 and abs(T2.rotation) < 1e-8
    assert np.allclose(T2.translation, 0, atol=1e-8 * (1 + np.abs(R).max()))


@given(similarities)
def test_transform_inverse_and_compose(T):
    x = np.array([1.0, -2.0, 3.0, 0.5, 0.0, 4.0])
    np.testing.assert_allclose(T.inverse().apply(T.apply(x)), x, atol=1e-8)
    U = SimilarityTransform(1.5, -0.3, (1.0, 2.0))
    np.testing.assert_allclose(U.compose(T).apply(x), U.apply(T.apply(x)), atol=1e-8)
    assert -np.pi < T.inverse().rotation <= np.pi


def test_gpa_single_shape():
    X = np.array([0.0, 4, 2, 7, 0, 0, 3, 3])
    aligned, mean = generalized_procrustes([X])
    np.testing.assert_allclose(mean, normalize_shape(X), atol=1e-10)
    np.testing.assert_allclose(aligned[0], mean, atol=1e-10)


def test_gpa_similarity_copies_collapse(rng):
    base = rng.normal(size=14)
    shapes = [
        SimilarityTransform(rng.uniform(0.5, 2), rng.uniform(-3, 3), tuple(rng.normal(size=2) * 10)).apply(base)
        for _ in range(8)
    ]
    aligned, _ = generalized_procrustes(shapes)
    assert np.max(np.abs(aligned - aligned[0])) < 1e-8


@pytest.mark.invariant
def test_gpa_mean_fixed_point_and_normalized(rng):
    base = rng.normal(size=16)
    shapes = [base + 0.1 * rng.normal(size=16) for _ in range(10)]
    aligned, mean = generalized_procrustes(shapes, tol=1e-10)
    pts = as_points(mean)
    np.testing.assert_allclose(pts.mean(0), 0, atol=1e-8)
    assert abs(np.sqrt(np.mean(np.sum(pts**2, 1))) - 1) < 1e-8
    # one more pass from the returned mean
    again = np.array([procrustes_align(s, mean)[0] for s in shapes])
    new_mean = normalize_shape(again.mean(0))
    _, T = procrustes_align(new_mean, mean)
    assert np.linalg.norm(T.apply(new_mean) - mean) < 1e-8


def test_gpa_masks_and_never_visible(rng):
    shapes = rng.normal(size=(5, 10))
    masks = np.ones((5, 5))
    masks[:, 4] = 0
    _, mean = generalized_procrustes(shapes, masks)
    assert np.isnan(mean[4]) and np.isnan(mean[9])
    assert np.all(np.isfinite(mean[[0, 1, 2, 3, 5, 6, 7, 8]]))


def test_gpa_empty():
    with pytest.raises(EmptyInputError):
        generalized_procrustes([])


def test_normalized_error_cases(rng):
    gt = np.array([0.0, 10, 5, 0, 0, 8])
    assert normalized_error(gt, gt, None, "interocular", ROLES) == 0.0
    shifted = gt.copy()
    shifted[:3] += 2.0
    assert abs(normalized_error(shifted, gt, None, "interocular", ROLES) - 2.0 / 10) < 1e-12
    # independent recomputation
    pred = gt + rng.normal(size=6)
    d = [np.hypot(pred[i] - gt[i], pred[3 + i] - gt[3 + i]) for i in range(3)]
    eye_mouth = 0.5 * np.hypot(gt[0] - gt[2], gt[3] - gt[5])
    assert abs(normalized_error(pred, gt, None, "eye_mouth", ROLES) - np.mean(d) / eye_mouth) < 1e-12


def test_normalized_error_hidden_and_degenerate():
    gt = np.array([0.0, 10, 5, 0, 0, 8])
    pred = gt.copy()
    pred[2] += 100
    assert normalized_error(pred, gt, [1, 1, 0], "interocular", ROLES) == 0.0
    with pytest.raises(DegenerateNormalizerError):
        normalized_error(gt, np.zeros(6), None, "interocular", ROLES)
    with pytest.raises(DegenerateNormalizerError):
        normalized_error(gt, gt, [0, 1, 1], "interocular", ROLES)


def test_ced_examples(rng):
    assert ced_curve([0.1], [0.05, 0.1, 0.2]) == [(0.05, 0.0), (0.1, 1.0), (0.2, 1.0)]
    assert ced_curve([0.3] * 4, [0.2, 0.3, 0.4]) == [(0.2, 0.0), (0.3, 1.0), (0.4, 1.0)]
    errs = rng.uniform(size=100)
    th = np.linspace(0, 1, 21)
    for t, f in ced_curve(errs, th):
        assert f == sum(1 for e in errs if e <= t) / 100
    assert ced_curve([0.1], []) == []
    with pytest.raises(EmptyInputError):
        ced_curve([], [0.1])


@given(st.lists(st.floats(0, 10), min_size=1, max_size=50), st.lists(st.floats(0, 10), max_size=30))
def test_ced_monotone_bounded(errors, thresholds):
    fr = [f for _, f in ced_curve(errors, sorted(thresholds))]
    assert all(0 <= f <= 1 for f in fr)
    assert all(a <= b for a, b in zip(fr, fr[1:]))


def test_bounding_box():
    s = np.array([1.0, 4, 2, -1, 3, 0])
    assert bounding_box(s) == (1.0, -1.0, 3.0, 4.0)
    assert bounding_box(s, [1, 0, 1]) == (1.0, -1.0, 1.0, 1.0)
