"""Synthetic faces-in-a-field scenes and a pinhole camera that renders them.

Faces are flat ellipses of a fixed skin hue.  A masked face carries a blue
band over the lower half that stops short of the ellipse edge, so the skin
region stays one connected blob whose extents match the ellipse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FRAME = 96
CENTER = FRAME / 2
FOV_DEG = 82.6
FOCAL_PX = CENTER / math.tan(math.radians(FOV_DEG / 2))
FACE_RADIUS_M = 0.25
FACE_ASPECT = 1.2

FACE_RGB = np.array([225, 170, 120])
MASK_RGB = np.array([70, 150, 230])

LABELS = ("mask", "no_mask")
MASK, NO_MASK = 0, 1


@dataclass(frozen=True)
class Target:
    position: tuple[float, float, float]
    label: int


@dataclass
class SceneSpec:
    world_extent: float = 10.0
    targets: list[Target] = field(default_factory=list)
    face_radius_px: float = 16.0
    noise_level: float = 0.3
    seed: int = 0

    def __post_init__(self):
        half = self.world_extent / 2
        for t in self.targets:
            x, y, _ = t.position
            if abs(x) > half or abs(y) > half:
                raise ValueError(f"target at {t.position} outside world extent {self.world_extent}")
            if t.label not in (MASK, NO_MASK):
                raise ValueError(f"bad label {t.label}")

    @classmethod
    def random(cls, n_targets: int, world_extent: float = 10.0, seed: int = 0, **kw) -> "SceneSpec":
        """Targets scattered at face height around the take-off point, labels alternating."""
        rng = np.random.default_rng([seed, 7])
        half = world_extent / 2
        targets = []
        for i in range(n_targets):
            r = rng.uniform(1.5, half * 0.9)
            a = rng.uniform(0, 2 * math.pi)
            z = rng.uniform(4.6, 5.4)
            targets.append(Target((r * math.sin(a), r * math.cos(a), z), MASK if i % 2 == 0 else NO_MASK))
        return cls(world_extent, targets, seed=seed, **kw)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float  # rad, clockwise from +y

    @property
    def forward(self):
        return math.sin(self.yaw), math.cos(self.yaw)

    @property
    def right(self):
        return math.cos(self.yaw), -math.sin(self.yaw)


@dataclass(frozen=True)
class Face:
    cx: float
    cy: float
    rx: float
    ry: float
    masked: bool

    @property
    def bbox(self):
        return (self.cx, self.cy, 2 * self.rx, 2 * self.ry)


@dataclass
class Frame:
    image: np.ndarray  # (96, 96, 3) uint8
    bbox: tuple[float, float, float, float] | None = None
    label: int | None = None

    def __post_init__(self):
        if self.image.shape != (FRAME, FRAME, 3):
            raise ValueError(f"frame must be {FRAME}x{FRAME}x3, got {self.image.shape}")


def background(rng, noise_level: float, size: int = FRAME) -> np.ndarray:
    noise = rng.integers(-128, 128, size=(size, size, 3))
    return np.clip(128 + noise_level * noise, 0, 255)


def paint_face(img: np.ndarray, face: Face, rng, noise_level: float):
    h, w, _ = img.shape
    y0, y1 = max(0, int(face.cy - face.ry) - 1), min(h, int(face.cy + face.ry) + 2)
    x0, x1 = max(0, int(face.cx - face.rx) - 1), min(w, int(face.cx + face.rx) + 2)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = (xx - face.cx) / face.rx, (yy - face.cy) / face.ry
    inside = dx * dx + dy * dy <= 1.0
    jitter = rng.integers(-10, 11, size=inside.shape + (3,)) * noise_level
    region = img[y0:y1, x0:x1]
    region[inside] = (FACE_RGB + jitter)[inside]
    if face.masked:
        band = inside & (dy >= 0.15) & (dy <= 0.6) & (np.abs(dx) <= 0.7)
        region[band] = (MASK_RGB + jitter)[band]


def render(faces, rng, noise_level: float = 0.3) -> np.ndarray:
    img = background(rng, noise_level)
    for face in faces:
        paint_face(img, face, rng, noise_level)
    return np.clip(img, 0, 255).astype(np.uint8)


def project(pose: Pose, target: Target) -> Face | None:
    """Image-plane ellipse of a target, or None when it is behind or outside the view."""
    dx = target.position[0] - pose.x
    dy = target.position[1] - pose.y
    dz = target.position[2] - pose.z
    fx, fy = pose.forward
    rx_, ry_ = pose.right
    depth = dx * fx + dy * fy
    if depth < 0.05:
        return None
    lateral = dx * rx_ + dy * ry_
    cx = CENTER + FOCAL_PX * lateral / depth
    cy = CENTER - FOCAL_PX * dz / depth
    r = FOCAL_PX * FACE_RADIUS_M / depth
    face = Face(cx, cy, r, r * FACE_ASPECT, target.label == MASK)
    if cx + face.rx < 0 or cx - face.rx > FRAME or cy + face.ry < 0 or cy - face.ry > FRAME:
        return None
    return face


class World:
    """A generated scene; ``render`` is a pure function of (pose, frame index)."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.targets = list(spec.targets)

    @property
    def standoff(self) -> float:
        """Camera distance at which a face appears ``face_radius_px`` wide (radius)."""
        return FOCAL_PX * FACE_RADIUS_M / self.spec.face_radius_px

    def visible(self, pose: Pose):
        out = []
        for i, t in enumerate(self.targets):
            face = project(pose, t)
            if face is not None:
                out.append((i, face))
        return out

    def render(self, pose: Pose, index: int = 0) -> Frame:
        rng = np.random.default_rng([self.spec.seed, 1, index])
        vis = self.visible(pose)
        # painter's order: far (small) faces first
        vis.sort(key=lambda item: item[1].rx)
        img = render([f for _, f in vis], rng, self.spec.noise_level)
        if not vis:
            return Frame(img)
        i, face = vis[-1]
        return Frame(img, face.bbox, self.targets[i].label)


def generate_scene(spec: SceneSpec) -> World:
    return World(spec)


def crop_box(bbox, margin: float = 0.2, size: int = FRAME):
    """Integer crop window: bbox grown by ``margin`` of its size on each side, clipped."""
    cx, cy, w, h = bbox
    half_w, half_h = w * (0.5 + margin), h * (0.5 + margin)
    x0 = max(0, int(math.floor(cx - half_w)))
    x1 = min(size, int(math.ceil(cx + half_w)))
    y0 = max(0, int(math.floor(cy - half_h)))
    y1 = min(size, int(math.ceil(cy + half_h)))
    return x0, y0, x1, y1


def crop_resize(image: np.ndarray, bbox, margin: float = 0.2, out: int = FRAME) -> np.ndarray:
    """Crop around ``bbox`` and resize to ``out`` x ``out`` by nearest neighbour."""
    x0, y0, x1, y1 = crop_box(bbox, margin, image.shape[0])
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise ValueError("empty crop")
    rows = y0 + (np.arange(out) * (y1 - y0)) // out
    cols = x0 + (np.arange(out) * (x1 - x0)) // out
    return image[rows][:, cols]


def make_dataset(n: int, seed: int = 0, noise_level: float = 0.3):
    """Balanced labelled face crops, produced the way the mission produces them.

    A single face is rendered at a jittered framing, then cropped around its
    true box and resized, so training data matches what ``classify_target``
    sees in flight.  Returns ``(images uint8 (n,96,96,3), labels (n,))``.
    """
    if n < 1:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng([seed, 2])
    labels = np.array([MASK, NO_MASK] * (n // 2) + [MASK] * (n % 2))
    rng.shuffle(labels)
    images = np.empty((n, FRAME, FRAME, 3), np.uint8)
    for k in range(n):
        r = rng.uniform(10.0, 24.0)
        cx = CENTER + rng.uniform(-6, 6)
        cy = CENTER + rng.uniform(-6, 6)
        face = Face(cx, cy, r, r * FACE_ASPECT, labels[k] == MASK)
        img = render([face], rng, noise_level)
        images[k] = crop_resize(img, face.bbox)
    return images, labels


def to_input(images) -> np.ndarray:
    """uint8 pixels -> float32 model input in [0, 1]."""
    return np.asarray(images, dtype=np.float32) / 255.0
