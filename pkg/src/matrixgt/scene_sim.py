"""Deterministic procedural scene generator and software rasterizer.

Stands in for the game engine plus capture plugins: every frame yields the
same buffer kinds a capture rig would download from the GPU (log-encoded
depth, packed class stencil, loose projected boxes) plus a withheld per-pixel
instance oracle that only tests and the oracle-labels command may read.

Conventions, fixed for the whole pipeline:

* Camera space equals world space: x right, y down, z forward, camera at the
  origin. The ground plane sits at y = camera_height_m.
* Objects are cuboids. ``size`` is (length, width, height): length along the
  object's local x (heading), width along local z, height vertical. ``yaw``
  rotates about the vertical axis; yaw = 0 puts the length parallel to the
  image x axis.
* A pixel is covered when its center (ix + 0.5, iy + 0.5) lies inside the
  projected triangle; ties exactly on shared edges go to the top-left rule,
  so adjacent triangles never double-cover or leave gaps.
* Depth is interpolated as 1/z barycentrically in screen space (exact for
  planar faces), z-buffered with strict less-than, then log-encoded into an
  F32 raster. Uncovered pixels encode exactly 1.0 (the far plane).
* All sampling flows from ``ScenarioConfig.seed`` through the pinned
  xorshift64* stream for (seed, frame_idx); nothing reads platform RNGs.

Objects with any cuboid corner at or behind the near plane are skipped
entirely (not rendered, not recorded) and logged; the placement region keeps
generated scenes clear of the near plane, so this only triggers on
hand-crafted scenes.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import BehindCameraError, ConfigError, FormatError
from .raster_codec import (
    DepthCodecParams,
    Raster,
    encode_log_depth,
    read_raster,
    write_raster,
)
from .rng import Xorshift64Star, mix64

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

BACKGROUND_CLASS_CODE = 0

GROUND_OBJECT_ID = 1
GROUND_THICKNESS_M = 0.02
GROUND_NEAR_Z_M = 1.0
GROUND_LATERAL_MARGIN_M = 20.0
GROUND_FORWARD_MARGIN_M = 40.0

# Objects rest 1 cm above the ground slab so vehicle bottoms never z-fight
# the ground's top face.
GROUND_CLEARANCE_M = 0.01

_PLACEMENT_ATTEMPTS = 400


class ObjectClass(enum.IntEnum):
    """Scene object classes; the value doubles as the stencil class code."""

    GROUND = 1
    VEHICLE = 2
    DISTRACTOR = 3

    @property
    def label(self) -> str:
        return self.name.title()


_CLASS_BY_LABEL = {c.label.lower(): c for c in ObjectClass}


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: u = fx*x/z + cx, v = fy*y/z + cy."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_params: DepthCodecParams

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ConfigError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")


@dataclass(frozen=True)
class SceneObject:
    """One cuboid in the scene; ``center`` is the cuboid centroid."""

    object_id: int
    cls: ObjectClass
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # (length, width, height)
    yaw: float

    def __post_init__(self):
        if self.object_id <= 0:
            raise ValueError(f"object_id must be positive, got {self.object_id}")
        if any(s <= 0 for s in self.size):
            raise ValueError(f"size components must be positive, got {self.size}")


@dataclass(frozen=True)
class EngineRecord:
    """What the engine hands the annotator per object: class, loose 2D box, 3D pose."""

    object_id: int
    cls: ObjectClass
    coarse_box: tuple[float, float, float, float]  # (left, top, right, bottom), un-clipped
    range_m: float
    size: tuple[float, float, float]
    yaw: float
    location_cam: tuple[float, float, float]

    def __post_init__(self):
        left, top, right, bottom = self.coarse_box
        if not (left < right and top < bottom):
            raise ValueError(f"coarse_box must be well-ordered, got {self.coarse_box}")
        if self.range_m <= 0:
            raise ValueError(f"range_m must be positive, got {self.range_m}")


@dataclass
class FrameBundle:
    """One captured frame: buffers, withheld instance oracle, engine records."""

    frame_id: int
    color: Optional[np.ndarray]  # (H, W, 3) uint8 or None
    depth: Raster  # F32, log-encoded
    stencil: Raster  # U8, packed class/flags
    instance_oracle: Raster  # U16, 0 = no object
    records: list[EngineRecord]


@dataclass
class ScenarioConfig:
    """Everything a dataset generation run depends on; serialized key=value."""

    seed: int
    frames: int
    width: int = 640
    height: int = 480
    fx: float = 700.0
    fy: float = 700.0
    cx: float = 320.0
    cy: float = 240.0
    near_m: float = 0.15
    far_m: float = 600.0
    camera_height_m: float = 1.6
    vehicle_count_min: int = 3
    vehicle_count_max: int = 8
    distractor_count_min: int = 0
    distractor_count_max: int = 2
    vehicle_length_min: float = 3.8
    vehicle_length_max: float = 5.0
    vehicle_width_min: float = 1.7
    vehicle_width_max: float = 2.0
    vehicle_height_min: float = 1.4
    vehicle_height_max: float = 2.2
    vehicle_yaw_max_deg: float = 180.0  # vehicles sample yaw in +-this range
    distractor_size_min: float = 0.6
    distractor_size_max: float = 2.0
    region_x_min: float = -14.0
    region_x_max: float = 14.0
    region_z_min: float = 25.0
    region_z_max: float = 45.0
    min_depth_gap_m: float = 0.0
    max_overlap_frac: float = 1.0
    coarse_box_inflate_pct: float = 0.10
    record_max_range_m: float = 0.0  # 0 = unlimited; beyond it objects render but get no record
    emit_color: bool = True

    def validate(self) -> None:
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        for name in ("vehicle_count", "distractor_count"):
            lo, hi = getattr(self, name + "_min"), getattr(self, name + "_max")
            if lo < 0 or hi < lo:
                raise ConfigError(f"empty or negative {name} range [{lo}, {hi}]")
        for name in ("vehicle_length", "vehicle_width", "vehicle_height", "distractor_size"):
            lo, hi = getattr(self, name + "_min"), getattr(self, name + "_max")
            if lo <= 0 or hi < lo:
                raise ConfigError(f"empty or non-positive {name} range [{lo}, {hi}]")
        if self.region_x_max < self.region_x_min or self.region_z_max < self.region_z_min:
            raise ConfigError("empty placement region")
        if self.region_z_min <= 0:
            raise ConfigError(f"placement region must be in front of the camera, got z_min={self.region_z_min}")
        if self.min_depth_gap_m < 0:
            raise ConfigError(f"min_depth_gap_m must be >= 0, got {self.min_depth_gap_m}")
        if not (0.0 < self.max_overlap_frac <= 1.0):
            raise ConfigError(f"max_overlap_frac must be in (0, 1], got {self.max_overlap_frac}")
        if self.coarse_box_inflate_pct < 0:
            raise ConfigError(f"coarse_box_inflate_pct must be >= 0, got {self.coarse_box_inflate_pct}")
        if self.record_max_range_m < 0:
            raise ConfigError(f"record_max_range_m must be >= 0, got {self.record_max_range_m}")
        if self.camera_height_m <= 0:
            raise ConfigError(f"camera_height_m must be positive, got {self.camera_height_m}")
        if not (0.0 < self.vehicle_yaw_max_deg <= 180.0):
            raise ConfigError(f"vehicle_yaw_max_deg must be in (0, 180], got {self.vehicle_yaw_max_deg}")
        self.camera()  # camera/codec field validation

    def camera(self) -> CameraModel:
        return CameraModel(
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            width=self.width,
            height=self.height,
            depth_params=DepthCodecParams(self.near_m, self.far_m),
        )


# --- projection and cuboid geometry ---------------------------------------

# Corner index i = 4*(sx>0) + 2*(sy>0) + (sz>0) over local signs
# (sx*l/2, sy*h/2, sz*w/2).
_CORNER_SIGNS = np.array(
    [
        (-1, -1, -1),
        (-1, -1, +1),
        (-1, +1, -1),
        (-1, +1, +1),
        (+1, -1, -1),
        (+1, -1, +1),
        (+1, +1, -1),
        (+1, +1, +1),
    ],
    dtype=np.float64,
)

# Quads in perimeter order; winding is irrelevant (rasterizer normalizes
# orientation and never culls).
_FACE_QUADS = (
    (0, 1, 3, 2),  # -x
    (4, 5, 7, 6),  # +x
    (0, 1, 5, 4),  # -y (top; y grows downward)
    (2, 3, 7, 6),  # +y (bottom)
    (0, 2, 6, 4),  # -z (near)
    (1, 3, 7, 5),  # +z (far)
)

_FACE_TRIANGLES = tuple(
    tri for (a, b, c, d) in _FACE_QUADS for tri in ((a, b, c), (a, c, d))
)


def project_point(camera: CameraModel, p: Sequence[float]) -> tuple[float, float, float]:
    """Project a camera-space point to pixel coordinates; returns (u, v, depth)."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0.0:
        raise BehindCameraError(f"point at z={z} is behind the camera")
    return camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy, z


def cuboid_corners(obj: SceneObject) -> np.ndarray:
    """The 8 corners of an object's oriented cuboid, camera space, shape (8, 3)."""
    length, width, height = obj.size
    half = _CORNER_SIGNS * np.array([length / 2.0, height / 2.0, width / 2.0])
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return half @ rot.T + np.asarray(obj.center, dtype=np.float64)


def coarse_box(camera: CameraModel, obj: SceneObject) -> tuple[float, float, float, float]:
    """Axis-aligned hull of the 8 projected cuboid corners, NOT clipped to the
    image (truncation is measured from the un-clipped box).

    Raises :class:`BehindCameraError` if any corner sits at or behind the near
    plane; callers skip such objects from the records.
    """
    corners = cuboid_corners(obj)
    z = corners[:, 2]
    if z.min() <= camera.depth_params.near_m:
        raise BehindCameraError(
            f"object {obj.object_id} has a corner at z={z.min():.3f} <= near plane"
        )
    u = camera.fx * corners[:, 0] / z + camera.cx
    v = camera.fy * corners[:, 1] / z + camera.cy
    return float(u.min()), float(v.min()), float(u.max()), float(v.max())


def inflate_box(
    box: tuple[float, float, float, float], pct: float
) -> tuple[float, float, float, float]:
    """Grow a box's width and height by ``pct`` about its center."""
    left, top, right, bottom = box
    dx = (right - left) * pct / 2.0
    dy = (bottom - top) * pct / 2.0
    return left - dx, top - dy, right + dx, bottom + dy


# --- triangle rasterization core -------------------------------------------


def _edge_accepts(w: np.ndarray, ax: float, ay: float, bx: float, by: float) -> np.ndarray:
    """Half-plane test with the top-left tie rule for edge a->b of a
    positively oriented triangle (y-down): w > 0 inside, w == 0 counts only on
    top edges (dy == 0, dx > 0) and left edges (dy < 0)."""
    dy = by - ay
    if dy < 0.0 or (dy == 0.0 and bx - ax > 0.0):
        return w >= 0.0
    return w > 0.0


def triangle_coverage_depth(
    pts2d: np.ndarray, invz: np.ndarray, px: np.ndarray, py: np.ndarray
):
    """Coverage and camera-space depth of one projected triangle at pixel centers.

    ``pts2d`` is (3, 2) screen coordinates, ``invz`` the matching 1/z values,
    ``px``/``py`` broadcastable float64 arrays of pixel-center coordinates.
    Returns ``(covered, z)`` arrays, or None for degenerate (zero-area)
    triangles. Depth comes from barycentric interpolation of 1/z, which is
    exact for planar faces; ``z`` is meaningful only where ``covered``.

    This function is the single arithmetic path for rasterization: the
    renderer evaluates it per triangle over the triangle's pixel bounding box,
    and brute-force checkers may evaluate it over the full image and take a
    minimum; both see bit-identical values per pixel.
    """
    (x0, y0), (x1, y1), (x2, y2) = (
        (float(pts2d[0, 0]), float(pts2d[0, 1])),
        (float(pts2d[1, 0]), float(pts2d[1, 1])),
        (float(pts2d[2, 0]), float(pts2d[2, 1])),
    )
    i0, i1, i2 = float(invz[0]), float(invz[1]), float(invz[2])
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0.0:
        return None
    if area < 0.0:
        x1, y1, i1, x2, y2, i2 = x2, y2, i2, x1, y1, i1
    w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
    w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
    covered = (
        _edge_accepts(w0, x1, y1, x2, y2)
        & _edge_accepts(w1, x2, y2, x0, y0)
        & _edge_accepts(w2, x0, y0, x1, y1)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (w0 + w1 + w2) / (w0 * i0 + w1 * i1 + w2 * i2)
    return covered, z


def scene_screen_triangles(
    camera: CameraModel, scene: Iterable[SceneObject]
) -> Iterator[tuple[np.ndarray, np.ndarray, int, int]]:
    """Projected triangles of all renderable objects, in deterministic draw
    order (object_id ascending, fixed face/triangle enumeration).

    Yields ``(pts2d (3, 2), invz (3,), class_code, object_id)``. Objects with
    any corner at or behind the near plane are skipped and logged.
    """
    near = camera.depth_params.near_m
    for obj in sorted(scene, key=lambda o: o.object_id):
        corners = cuboid_corners(obj)
        z = corners[:, 2]
        if z.min() <= near:
            log.warning(
                "object %d: corner at z=%.3f behind near plane, skipped", obj.object_id, z.min()
            )
            continue
        u = camera.fx * corners[:, 0] / z + camera.cx
        v = camera.fy * corners[:, 1] / z + camera.cy
        pts = np.column_stack([u, v])
        invz = 1.0 / z
        for tri in _FACE_TRIANGLES:
            idx = list(tri)
            yield pts[idx], invz[idx], int(obj.cls), obj.object_id


def _rasterize_into(
    zbuf: np.ndarray,
    stencil: np.ndarray,
    instance: np.ndarray,
    pts2d: np.ndarray,
    invz: np.ndarray,
    class_code: int,
    object_id: int,
) -> None:
    height, width = zbuf.shape
    xs = pts2d[:, 0]
    ys = pts2d[:, 1]
    x0 = max(0, math.ceil(xs.min() - 0.5))
    x1 = min(width - 1, math.floor(xs.max() - 0.5))
    y0 = max(0, math.ceil(ys.min() - 0.5))
    y1 = min(height - 1, math.floor(ys.max() - 0.5))
    if x0 > x1 or y0 > y1:
        return
    px = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
    py = (np.arange(y0, y1 + 1, dtype=np.float64) + 0.5)[:, None]
    result = triangle_coverage_depth(pts2d, invz, px, py)
    if result is None:
        return
    covered, z = result
    zwin = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    hit = covered & (z < zwin)
    if not hit.any():
        return
    zwin[hit] = z[hit]
    stencil[y0 : y1 + 1, x0 : x1 + 1][hit] = class_code
    instance[y0 : y1 + 1, x0 : x1 + 1][hit] = object_id


_SKY_RGB = (96, 144, 200)


def _object_rgb(object_id: int, cls: ObjectClass) -> tuple[int, int, int]:
    if cls is ObjectClass.GROUND:
        return (104, 100, 94)
    h = mix64(object_id)
    base = 96 if cls is ObjectClass.VEHICLE else 48
    return (base + (h & 0x7F), base + ((h >> 8) & 0x7F), base + ((h >> 16) & 0x7F))


def _render_color(instance: np.ndarray, scene: Sequence[SceneObject]) -> np.ndarray:
    lut = np.zeros((max((o.object_id for o in scene), default=0) + 1, 3), dtype=np.uint8)
    lut[0] = _SKY_RGB
    for obj in scene:
        lut[obj.object_id] = _object_rgb(obj.object_id, obj.cls)
    return lut[instance]


def render_frame(
    camera: CameraModel,
    scene: Sequence[SceneObject],
    frame_id: int,
    *,
    inflate_pct: float = 0.0,
    record_max_range_m: float = 0.0,
    emit_color: bool = True,
) -> FrameBundle:
    """Z-buffered rasterization of a scene into a FrameBundle.

    Every covered pixel holds the log-encoded depth of the nearest surface,
    that surface's stencil class code, and its object id in the instance
    oracle. Uncovered pixels: depth exactly 1.0, stencil 0, instance 0.
    Records carry one EngineRecord per object whose coarse box succeeded
    (optionally inflated by ``inflate_pct`` to reproduce loose engine boxes),
    except objects beyond ``record_max_range_m`` when that limit is set.
    """
    if not scene:
        raise ValueError("scene must be nonempty")
    height, width = camera.height, camera.width
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    stencil = np.zeros((height, width), dtype=np.uint8)
    instance = np.zeros((height, width), dtype=np.uint16)

    for pts2d, invz, class_code, object_id in scene_screen_triangles(camera, scene):
        _rasterize_into(zbuf, stencil, instance, pts2d, invz, class_code, object_id)

    covered = np.isfinite(zbuf)
    encoded = np.ones((height, width), dtype=np.float64)
    if covered.any():
        encoded[covered] = encode_log_depth(zbuf[covered], camera.depth_params)
    depth = Raster(encoded.astype(np.float32))

    records = []
    for obj in sorted(scene, key=lambda o: o.object_id):
        try:
            box = coarse_box(camera, obj)
        except BehindCameraError:
            log.warning("object %d skipped from records: behind near plane", obj.object_id)
            continue
        range_m = float(np.linalg.norm(obj.center))
        if record_max_range_m > 0.0 and range_m > record_max_range_m:
            continue
        records.append(
            EngineRecord(
                object_id=obj.object_id,
                cls=obj.cls,
                coarse_box=inflate_box(box, inflate_pct),
                range_m=range_m,
                size=obj.size,
                yaw=obj.yaw,
                location_cam=obj.center,
            )
        )

    color = _render_color(instance, scene) if emit_color else None
    return FrameBundle(
        frame_id=frame_id,
        color=color,
        depth=depth,
        stencil=Raster(stencil),
        instance_oracle=Raster(instance),
        records=records,
    )


# --- procedural scene generation -------------------------------------------


def _boxes_intersect(a, b) -> float:
    """Intersection area of two boxes (0 when disjoint)."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return w * h if (w > 0 and h > 0) else 0.0


def _box_area(box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def _placement_ok(config: ScenarioConfig, box, z, placed: list[tuple[tuple, float]]) -> bool:
    for other_box, other_z in placed:
        inter = _boxes_intersect(box, other_box)
        if inter <= 0.0:
            continue
        if config.min_depth_gap_m > 0.0 and abs(z - other_z) < config.min_depth_gap_m:
            return False
        if inter / min(_box_area(box), _box_area(other_box)) > config.max_overlap_frac:
            return False
    return True


def _ground_object(config: ScenarioConfig) -> SceneObject:
    gx0 = config.region_x_min - GROUND_LATERAL_MARGIN_M
    gx1 = config.region_x_max + GROUND_LATERAL_MARGIN_M
    gz0 = GROUND_NEAR_Z_M
    gz1 = config.region_z_max + GROUND_FORWARD_MARGIN_M
    return SceneObject(
        object_id=GROUND_OBJECT_ID,
        cls=ObjectClass.GROUND,
        center=((gx0 + gx1) / 2.0, config.camera_height_m + GROUND_THICKNESS_M / 2.0, (gz0 + gz1) / 2.0),
        size=(gx1 - gx0, gz1 - gz0, GROUND_THICKNESS_M),
        yaw=0.0,
    )


def _place(
    rng: Xorshift64Star,
    config: ScenarioConfig,
    camera: CameraModel,
    cls: ObjectClass,
    object_id: int,
    placed: list[tuple[tuple, float]],
) -> SceneObject:
    """Rejection-sample one object; after the attempt budget the last candidate
    wins so the object count stays exact (constraints are best-effort)."""
    candidate = None
    for _ in range(_PLACEMENT_ATTEMPTS):
        if cls is ObjectClass.VEHICLE:
            length = rng.uniform(config.vehicle_length_min, config.vehicle_length_max)
            width = rng.uniform(config.vehicle_width_min, config.vehicle_width_max)
            height = rng.uniform(config.vehicle_height_min, config.vehicle_height_max)
            yaw_limit = math.radians(config.vehicle_yaw_max_deg)
        else:
            length = rng.uniform(config.distractor_size_min, config.distractor_size_max)
            width = rng.uniform(config.distractor_size_min, config.distractor_size_max)
            height = rng.uniform(config.distractor_size_min, config.distractor_size_max)
            yaw_limit = math.pi
        yaw = rng.uniform(-yaw_limit, yaw_limit)
        x = rng.uniform(config.region_x_min, config.region_x_max)
        z = rng.uniform(config.region_z_min, config.region_z_max)
        y = config.camera_height_m - height / 2.0 - GROUND_CLEARANCE_M
        candidate = SceneObject(object_id, cls, (x, y, z), (length, width, height), yaw)
        try:
            # constrain the boxes the annotator will actually see (inflated)
            box = inflate_box(coarse_box(camera, candidate), config.coarse_box_inflate_pct)
        except BehindCameraError:
            continue
        if _placement_ok(config, box, z, placed):
            placed.append((box, z))
            return candidate
    log.warning("placement constraints not met for object %d, accepting last candidate", object_id)
    placed.append(
        (inflate_box(coarse_box(camera, candidate), config.coarse_box_inflate_pct), candidate.center[2])
    )
    return candidate


def generate_scene(config: ScenarioConfig, frame_idx: int) -> list[SceneObject]:
    """Deterministic scene for (config.seed, frame_idx): ground slab plus
    sampled vehicles and distractors inside the placement region."""
    config.validate()
    if not (0 <= frame_idx < config.frames):
        raise ValueError(f"frame_idx {frame_idx} outside [0, {config.frames})")
    rng = Xorshift64Star.for_frame(config.seed, frame_idx)
    camera = config.camera()
    objects = [_ground_object(config)]
    placed: list[tuple[tuple, float]] = []
    n_vehicles = rng.randint(config.vehicle_count_min, config.vehicle_count_max)
    n_distractors = rng.randint(config.distractor_count_min, config.distractor_count_max)
    next_id = GROUND_OBJECT_ID + 1
    for _ in range(n_vehicles):
        objects.append(_place(rng, config, camera, ObjectClass.VEHICLE, next_id, placed))
        next_id += 1
    for _ in range(n_distractors):
        objects.append(_place(rng, config, camera, ObjectClass.DISTRACTOR, next_id, placed))
        next_id += 1
    return objects


def render_scenario_frame(config: ScenarioConfig, frame_idx: int) -> FrameBundle:
    """generate_scene + render_frame with the scenario's knobs applied."""
    scene = generate_scene(config, frame_idx)
    return render_frame(
        config.camera(),
        scene,
        frame_idx,
        inflate_pct=config.coarse_box_inflate_pct,
        record_max_range_m=config.record_max_range_m,
        emit_color=config.emit_color,
    )


# --- scenario and manifest text --------------------------------------------


def _parse_kv_lines(text: str, origin: str = "scenario") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{origin} line {lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{origin} line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


_BOOL_VALUES = {"0": False, "1": True, "false": False, "true": True}


def _convert(key: str, value: str, target_type: type):
    try:
        if target_type is bool:
            return _BOOL_VALUES[value.lower()]
        return target_type(value)
    except (ValueError, KeyError):
        raise ConfigError(f"key {key!r}: cannot parse {value!r} as {target_type.__name__}") from None


def scenario_from_mapping(pairs: dict[str, str]) -> ScenarioConfig:
    field_types = {f.name: f.type for f in dataclass_fields(ScenarioConfig)}
    type_map = {"int": int, "float": float, "bool": bool}
    kwargs = {}
    for key, value in pairs.items():
        if key not in field_types:
            raise ConfigError(f"unknown scenario key {key!r}")
        kwargs[key] = _convert(key, value, type_map[field_types[key]])
    for required in ("seed", "frames"):
        if required not in kwargs:
            raise ConfigError(f"scenario missing required key {required!r}")
    config = ScenarioConfig(**kwargs)
    config.validate()
    return config


def parse_scenario_text(text: str) -> ScenarioConfig:
    return scenario_from_mapping(_parse_kv_lines(text))


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario_text(Path(path).read_text())


def scenario_to_text(config: ScenarioConfig) -> str:
    lines = []
    for field in dataclass_fields(ScenarioConfig):
        value = getattr(config, field.name)
        if isinstance(value, bool):
            value = int(value)
        lines.append(f"{field.name}={value!r}" if isinstance(value, float) else f"{field.name}={value}")
    return "\n".join(lines) + "\n"


def manifest_text(config: ScenarioConfig) -> str:
    return f"format_version={FORMAT_VERSION}\n" + scenario_to_text(config)


def read_manifest(path: str | Path) -> ScenarioConfig:
    pairs = _parse_kv_lines(Path(path).read_text(), origin="manifest")
    version = pairs.pop("format_version", None)
    if version != str(FORMAT_VERSION):
        raise FormatError(f"manifest {path}: unsupported format_version {version!r}")
    return scenario_from_mapping(pairs)


# --- dataset directory layout ----------------------------------------------

MANIFEST_NAME = "manifest.txt"


def frame_prefix(frame_idx: int) -> str:
    return f"{frame_idx:06d}"


def frame_paths(dataset_dir: str | Path, frame_idx: int) -> dict[str, Path]:
    base = Path(dataset_dir) / frame_prefix(frame_idx)
    return {
        "color": base.with_name(base.name + "_color.ppm"),
        "depth": base.with_name(base.name + "_depth.mrb"),
        "stencil": base.with_name(base.name + "_stencil.mrb"),
        "instance": base.with_name(base.name + "_instance.mrb"),
        "meta": base.with_name(base.name + "_meta.txt"),
    }


def list_frame_indices(dataset_dir: str | Path) -> list[int]:
    """Frame indices present in a dataset directory, from the meta files."""
    indices = []
    for path in Path(dataset_dir).glob("*_meta.txt"):
        stem = path.name[: -len("_meta.txt")]
        if stem.isdigit():
            indices.append(int(stem))
    return sorted(indices)


def ppm_bytes(rgb: np.ndarray) -> bytes:
    """Binary PPM (P6) encoding of an (H, W, 3) uint8 image."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"PPM image must be (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(rgb).tobytes()


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(rgb))


def meta_text(records: Sequence[EngineRecord]) -> str:
    """One line per record: id class left top right bottom range_m h w l x y z yaw."""
    lines = []
    for r in records:
        left, top, right, bottom = r.coarse_box
        length, width, height = r.size
        x, y, z = r.location_cam
        lines.append(
            f"{r.object_id} {r.cls.label} "
            f"{left:.4f} {top:.4f} {right:.4f} {bottom:.4f} {r.range_m:.4f} "
            f"{height:.4f} {width:.4f} {length:.4f} {x:.4f} {y:.4f} {z:.4f} {r.yaw:.4f}"
        )
    return "".join(line + "\n" for line in lines)


def parse_meta_text(text: str) -> list[EngineRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 14:
            raise FormatError(f"meta line {lineno}: expected 14 fields, got {len(parts)}")
        try:
            object_id = int(parts[0])
            cls = _CLASS_BY_LABEL[parts[1].lower()]
            nums = [float(p) for p in parts[2:]]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"meta line {lineno}: {exc}") from None
        left, top, right, bottom, range_m, height, width, length, x, y, z, yaw = nums
        records.append(
            EngineRecord(
                object_id=object_id,
                cls=cls,
                coarse_box=(left, top, right, bottom),
                range_m=range_m,
                size=(length, width, height),
                yaw=yaw,
                location_cam=(x, y, z),
            )
        )
    return records


def write_frame_files(bundle: FrameBundle, dataset_dir: str | Path) -> None:
    paths = frame_paths(dataset_dir, bundle.frame_id)
    write_raster(bundle.depth, paths["depth"])
    write_raster(bundle.stencil, paths["stencil"])
    write_raster(bundle.instance_oracle, paths["instance"])
    paths["meta"].write_text(meta_text(bundle.records))
    if bundle.color is not None:
        write_ppm(paths["color"], bundle.color)


def read_frame_buffers(
    dataset_dir: str | Path, frame_idx: int, *, with_instance: bool = False
) -> tuple[Raster, Raster, list[EngineRecord], Optional[Raster]]:
    """Load (depth, stencil, records, instance?) for one frame.

    The annotation path never sets ``with_instance``; the instance raster is
    reserved for tests and oracle labels.
    """
    paths = frame_paths(dataset_dir, frame_idx)
    depth = read_raster(paths["depth"])
    stencil = read_raster(paths["stencil"])
    records = parse_meta_text(paths["meta"].read_text())
    instance = read_raster(paths["instance"]) if with_instance else None
    return depth, stencil, records, instance


def write_dataset_frame(config: ScenarioConfig, frame_idx: int, dataset_dir: str | Path) -> None:
    write_frame_files(render_scenario_frame(config, frame_idx), dataset_dir)


def generate_dataset(config: ScenarioConfig, dataset_dir: str | Path) -> None:
    """Render and write every frame plus the manifest (single process)."""
    config.validate()
    out = Path(dataset_dir)
    out.mkdir(parents=True, exist_ok=True)
    for frame_idx in range(config.frames):
        write_dataset_frame(config, frame_idx, out)
    (out / MANIFEST_NAME).write_text(manifest_text(config))
