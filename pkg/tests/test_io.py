import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcralign.errors import ParseError
from bcralign.io import (
    AnnotatedSample,
    format_pts,
    load_image,
    load_manifest,
    load_pts,
    load_roles,
    load_visibility,
    write_image,
    write_manifest,
    write_pts,
    write_roles,
    write_synthetic_dataset,
    write_visibility,
)
from bcralign.shapes import as_points
from bcralign.synth import TEMPLATE, SyntheticWorld, place, project, render, sample_face, visibility_for_yaw

from _oracles import blob_centroids

# ---------------------------------------------------------------- pts


def test_load_well_formed(tmp_path):
    p = tmp_path / "a.pts"
    p.write_text("version: 1\nn_points: 3\n{\n1 2\n3.5 4\n10 20\n}\n")
    s = load_pts(p)
    assert s.shape == (6,)
    np.testing.assert_array_equal(s, [0, 2.5, 9, 1, 3, 19])


@pytest.mark.parametrize(
    "text, line",
    [
        ("version: 1\nn_points: 3\n{\n1 2\n3 4\n}\n", 6),
        ("verson: 1\nn_points: 1\n{\n1 2\n}\n", 1),
        ("version: 1\nn_points: x\n{\n1 2\n}\n", 2),
        ("version: 1\nn_points: 2\n{\n1 2\n3 y\n}\n", 5),
        ("version: 1\nn_points: 1\n1 2\n}\n", 3),
        ("version: 1\nn_points: 1\n{\n1 2\n3 4\n}\n", 5),
    ],
)
def test_parse_errors_name_the_line(tmp_path, text, line):
    p = tmp_path / "bad.pts"
    p.write_text(text)
    with pytest.raises(ParseError) as info:
        load_pts(p)
    assert info.value.line == line
    assert f":{line}:" in str(info.value)


@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=40).filter(lambda v: len(v) % 2 == 0))
def test_pts_round_trip(tmp_path_factory, coords):
    p = tmp_path_factory.mktemp("pts") / "r.pts"
    s = np.array(coords)
    write_pts(p, s)
    np.testing.assert_allclose(load_pts(p), s, atol=5e-7 + 1e-15 * np.abs(s).max())


def test_format_is_one_origin():
    assert format_pts(np.array([0.0, 1.0])).splitlines()[3] == "1.000000 2.000000"


# ---------------------------------------------------------------- visibility


def test_visibility_examples(tmp_path):
    p = tmp_path / "a.vis"
    p.write_text("1\n0\n1\n")
    assert load_visibility(p).tolist() == [1, 0, 1]
    assert load_visibility(tmp_path / "missing.vis", 4).tolist() == [1, 1, 1, 1]
    p.write_text("1\n2\n")
    with pytest.raises(ParseError) as info:
        load_visibility(p)
    assert info.value.line == 2


@given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_visibility_round_trip(tmp_path_factory, v):
    p = tmp_path_factory.mktemp("vis") / "r.vis"
    write_visibility(p, v)
    assert load_visibility(p, len(v)).tolist() == v


def test_roles_round_trip(tmp_path):
    p = tmp_path / "roles.txt"
    write_roles(p, {"right_eye_outer": 0, "left_eye_outer": 7})
    assert load_roles(p) == {"right_eye_outer": 0, "left_eye_outer": 7}
    p.write_text("eye x\n")
    with pytest.raises(ParseError):
        load_roles(p)


def test_image_round_trip(tmp_path, rng):
    img = np.round(rng.random((9, 11)) * 255) / 255
    write_image(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_image(tmp_path / "a.png"), img, atol=1e-12)


# ---------------------------------------------------------------- manifests


def test_manifest_skips_are_logged_and_counted(tmp_path, caplog):
    img = tmp_path / "a.png"
    write_image(img, np.zeros((8, 8)))
    write_pts(tmp_path / "a.pts", np.arange(8.0))
    write_pts(tmp_path / "b.pts", np.arange(10.0))
    (tmp_path / "hidden.vis").write_text("1\n0\n0\n0\n")
    (tmp_path / "bad.vis").write_text("1\n7\n1\n1\n")
    rows = [
        "a.png\ta.pts\t-\t1,2,3,4",  # ok
        "a.png\ta.pts",  # too few fields
        "nope.png\ta.pts\t-",  # missing image
        "a.png\tmissing.pts\t-",  # missing pts
        "a.png\ta.pts\tbad.vis",  # bad token
        "a.png\tb.pts\t-",  # landmark count mismatch
        "a.png\ta.pts\thidden.vis",  # too few visible
        "a.png\ta.pts\t-\t1,2,0,4",  # bad box
        "# comment only",
    ]
    (tmp_path / "m.tsv").write_text("\n".join(rows) + "\n")
    with caplog.at_level(logging.WARNING, logger="bcralign.io"):
        out = load_manifest(tmp_path / "m.tsv")
    assert len(out.samples) == 1 and out.samples[0].box == (1.0, 2.0, 3.0, 4.0)
    assert [ln for ln, _ in out.skipped] == [2, 3, 4, 5, 6, 7, 8]
    assert sum("skipping sample" in r.message for r in caplog.records) == 7


def test_manifest_round_trip(tmp_path):
    world = SyntheticWorld(seed=1)
    samples = write_synthetic_dataset(tmp_path, world, 3, seed=1)
    loaded = load_manifest(tmp_path / "manifest.tsv")
    assert not loaded.skipped and len(loaded.samples) == 3
    for a, b in zip(samples, loaded.samples):
        assert a.image_path.resolve() == b.image_path.resolve()
        np.testing.assert_allclose(a.shape, b.shape, atol=1e-6)
        assert a.visibility.tolist() == b.visibility.tolist()
        np.testing.assert_allclose(a.box, b.box, atol=1e-6)
    assert load_roles(tmp_path / "roles.txt") == world.roles
    write_manifest(tmp_path / "again.tsv", [AnnotatedSample(s.image_path, s.shape, s.visibility, s.box) for s in samples])
    assert (tmp_path / "again.tsv").read_text() == (tmp_path / "manifest.tsv").read_text()


# ---------------------------------------------------------------- synthetic world


def test_frontal_face_fully_visible():
    assert visibility_for_yaw(0.0, np.deg2rad(45)).tolist() == [1] * 12
    face = sample_face(SyntheticWorld(seed=0), np.random.default_rng(0), yaw=0.0)
    assert np.all(face.visibility == 1)


@pytest.mark.parametrize("sign", [1, -1])
def test_extreme_yaw_hides_far_side(sign):
    ymax = np.deg2rad(45)
    v = visibility_for_yaw(sign * ymax, ymax)
    far = TEMPLATE[:, 0] * sign > 0
    hidden = np.flatnonzero(v == 0)
    assert 1 <= hidden.size <= 4
    assert np.all(far[hidden])
    assert np.all(v[~far] == 1)


def test_rendering_deterministic():
    world = SyntheticWorld(seed=3)
    a = sample_face(world, np.random.default_rng(8))
    b = sample_face(world, np.random.default_rng(8))
    np.testing.assert_array_equal(a.image, b.image)
    assert a.image.shape == (128, 128) and a.image.min() >= 0 and a.image.max() <= 1


@pytest.mark.parametrize("yaw", [0.0, 0.3, -0.6])
def test_blob_centroids_match_landmarks(yaw):
    world = SyntheticWorld(seed=0)
    pts = place(project(yaw), world.face_scale, 0.05, (64.0, 62.0))
    vis = visibility_for_yaw(yaw, np.deg2rad(world.yaw_max_deg))
    image = render(world, pts, vis, rng=None)
    visible = pts[vis > 0]
    cents = blob_centroids(image, visible)
    assert np.max(np.hypot(*(cents - visible).T)) < 0.5


def test_synthetic_dataset_files(tmp_path):
    world = SyntheticWorld(seed=2)
    samples = write_synthetic_dataset(tmp_path, world, 2, seed=2)
    for s in samples:
        assert s.image_path.exists()
        np.testing.assert_allclose(load_pts(s.image_path.with_suffix(".pts")), s.shape, atol=1e-6)
        assert load_visibility(s.image_path.with_suffix(".vis")).tolist() == list(s.visibility)
        assert as_points(s.shape).shape == (12, 2)
