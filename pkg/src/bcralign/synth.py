"""Synthetic faces with yaw-coupled landmark visibility.

Twelve landmarks sit on a rigid 3-D head template. Each face rotates the
template by a yaw angle, perturbs it with two small deformation modes,
projects it orthographically and places it in a 128x128 image with a random
similarity pose. Side landmarks turn invisible in a fixed order as the yaw
grows, so visibility is a deterministic function of yaw. Images show a
Gaussian blob at every visible landmark plus additive noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .shapes import as_vector, bounding_box

LANDMARK_NAMES = (
    "right_eye_outer", "left_eye_outer",
    "right_ear", "left_ear",
    "right_jaw", "left_jaw",
    "right_mouth_corner", "left_mouth_corner",
    "right_brow_inner", "left_brow_inner",
    "nose_tip", "chin",
)

# x right, y down, z toward the camera; unit ~ half the head width
TEMPLATE = np.array([
    [-0.80, -0.40, 0.55], [0.80, -0.40, 0.55],
    [-1.25, -0.10, -0.20], [1.25, -0.10, -0.20],
    [-1.00, 0.75, 0.10], [1.00, 0.75, 0.10],
    [-0.45, 0.80, 0.75], [0.45, 0.80, 0.75],
    [-0.35, -0.80, 0.85], [0.35, -0.80, 0.85],
    [0.00, 0.20, 1.20], [0.00, 1.30, 0.70],
])

# fraction of the yaw range past which a side landmark is hidden (inf = never)
OCCLUSION_ORDER = np.array([np.inf, np.inf, 0.2, 0.2, 0.4, 0.4, 0.6, 0.6, 0.8, 0.8, np.inf, np.inf])

# mouth opening and face widening
MINOR_MODES = np.array([
    [[0, 0, 0]] * 6 + [[0, 0.15, 0]] * 2 + [[0, 0, 0]] * 3 + [[0, 0.30, 0]],
    [[-0.1, 0, 0], [0.1, 0, 0], [-0.15, 0, 0], [0.15, 0, 0], [-0.15, 0, 0], [0.15, 0, 0],
     [-0.05, 0, 0], [0.05, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]],
], dtype=float)

ROLES = {
    "right_eye_outer": 0,
    "left_eye_outer": 1,
    "eye": 0,
    "mouth_corner": 6,
}


@dataclass
class SyntheticWorld:
    n_landmarks: int = 12
    yaw_max_deg: float = 45.0
    image_size: int = 128
    face_scale: float = 20.0  # pixels per template unit
    scale_jitter: float = 0.10
    center_jitter: float = 8.0  # pixels
    roll_max_deg: float = 8.0
    minor_mode_sd: float = 1.0
    blob_sigma: float = 2.0
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_landmarks != 12:
            raise ValueError("the synthetic face template has exactly 12 landmarks")

    @property
    def roles(self) -> dict:
        return dict(ROLES)


@dataclass
class SyntheticFace:
    image: np.ndarray
    shape: np.ndarray
    visibility: np.ndarray
    box: tuple
    yaw: float
    params: dict = field(default_factory=dict)


def visibility_for_yaw(yaw: float, yaw_max: float) -> np.ndarray:
    """1 = visible. Positive yaw hides the ``x > 0`` side, in OCCLUSION_ORDER."""
    frac = abs(yaw) / yaw_max if yaw_max > 0 else 0.0
    far = TEMPLATE[:, 0] > 0 if yaw > 0 else TEMPLATE[:, 0] < 0
    hidden = far & (frac > OCCLUSION_ORDER)
    return (~hidden).astype(np.int8)


def project(yaw: float, modes=(0.0, 0.0)) -> np.ndarray:
    """Template deformed by ``modes``, yawed, projected: ``(L, 2)`` in template units."""
    P = TEMPLATE + np.tensordot(np.asarray(modes, dtype=float), MINOR_MODES, axes=1)
    c, s = np.cos(yaw), np.sin(yaw)
    x = P[:, 0] * c + P[:, 2] * s
    return np.stack([x, P[:, 1]], axis=1)


def place(points: np.ndarray, scale: float, roll: float, center) -> np.ndarray:
    c, s = np.cos(roll), np.sin(roll)
    R = np.array([[c, -s], [s, c]])
    return scale * points @ R.T + np.asarray(center, dtype=float)


def render(world: SyntheticWorld, points: np.ndarray, visibility, rng=None) -> np.ndarray:
    """Blob image; ``rng=None`` renders without noise."""
    n = world.image_size
    grid = np.arange(n, dtype=float)
    pts = np.asarray(points, dtype=float)[np.asarray(visibility) > 0]
    two_s2 = 2.0 * world.blob_sigma**2
    # the Gaussian is separable: sum_k gy_k(row) * gx_k(col)
    gx = np.exp(-((grid[None, :] - pts[:, :1]) ** 2) / two_s2)
    gy = np.exp(-((grid[None, :] - pts[:, 1:]) ** 2) / two_s2)
    img = gy.T @ gx
    img = np.clip(img, 0.0, 1.0)
    if rng is not None and world.noise > 0:
        img = np.clip(img + rng.normal(0.0, world.noise, img.shape), 0.0, 1.0)
    return img


def sample_face(world: SyntheticWorld, rng: np.random.Generator, yaw: float | None = None) -> SyntheticFace:
    yaw_max = np.deg2rad(world.yaw_max_deg)
    if yaw is None:
        yaw = float(rng.uniform(-yaw_max, yaw_max))
    modes = rng.normal(0.0, world.minor_mode_sd, 2) * 0.5
    scale = world.face_scale * float(rng.uniform(1 - world.scale_jitter, 1 + world.scale_jitter))
    roll = np.deg2rad(float(rng.uniform(-world.roll_max_deg, world.roll_max_deg)))
    center = world.image_size / 2 + rng.uniform(-world.center_jitter, world.center_jitter, 2)
    pts = place(project(yaw, modes), scale, roll, center)
    vis = visibility_for_yaw(yaw, yaw_max)
    # detector box: frontal template under the same placement, blind to yaw
    box = bounding_box(as_vector(place(project(0.0), scale, roll, center)))
    image = render(world, pts, vis, rng)
    return SyntheticFace(image, as_vector(pts), vis, box, yaw,
                         {"modes": modes, "scale": scale, "roll": roll, "center": center})


def generate(world: SyntheticWorld, count: int, seed: int | None = None) -> list[SyntheticFace]:
    """``count`` faces, reproducible from ``world.seed`` (or ``seed``)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(world.seed if seed is None else seed)
    return [sample_face(world, rng) for _ in range(count)]


def mirror_pair(world: SyntheticWorld, rng: np.random.Generator, yaw: float):
    """Two faces with yaw ``+yaw`` and ``-yaw`` and otherwise identical draws."""
    state = rng.bit_generator.state
    a = sample_face(world, rng, yaw=yaw)
    rng.bit_generator.state = state
    b = sample_face(world, rng, yaw=-yaw)
    return a, b
