"""Bit-exact KITTI label text I/O and Easy/Moderate/Hard classification.

One label per line::

    type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]

Floats carry exactly 2 decimals (score: 4), fields are space-separated, and
parse/write round-trip byte-exactly on conforming files. Boxes without 3D
information use the conventional sentinels: alpha and rotation_y -10,
dimensions -1, location -1000.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .annotator import TightAnnotation
from .errors import FormatError

CAR_TYPE = "Car"
DONTCARE_TYPE = "DontCare"

SENTINEL_ALPHA = -10.0
SENTINEL_DIMENSION = -1.0
SENTINEL_LOCATION = -1000.0


class Difficulty(enum.IntEnum):
    """Evaluation strata, ordered easiest first; UNKNOWN fails every stratum."""

    EASY = 0
    MODERATE = 1
    HARD = 2
    UNKNOWN = 3

    @property
    def label(self) -> str:
        return self.name.title()


@dataclass(frozen=True)
class DifficultyThresholds:
    """Per-level gates indexed by Difficulty value: minimum box height in
    pixels, maximum truncation fraction, maximum occlusion level."""

    min_height_px: tuple[float, float, float] = (40.0, 25.0, 25.0)
    max_truncation: tuple[float, float, float] = (0.15, 0.30, 0.50)
    max_occlusion: tuple[int, int, int] = (0, 1, 2)


DEFAULT_THRESHOLDS = DifficultyThresholds()


@dataclass
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]  # (left, top, right, bottom)
    dimensions: tuple[float, float, float]  # (height, width, length), meters
    location: tuple[float, float, float]  # (x, y, z), camera meters
    rotation_y: float
    score: Optional[float] = None


def classify_difficulty(
    label: KittiLabel, thresholds: DifficultyThresholds = DEFAULT_THRESHOLDS
) -> Difficulty:
    """Easiest level whose height/truncation/occlusion gates all pass."""
    left, top, right, bottom = label.bbox
    if not (left < right and top < bottom):
        raise ValueError(f"malformed bbox {label.bbox}")
    height = bottom - top
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if (
            height >= thresholds.min_height_px[level]
            and label.truncated <= thresholds.max_truncation[level]
            and label.occluded <= thresholds.max_occlusion[level]
        ):
            return level
    return Difficulty.UNKNOWN


def normalize_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def from_annotation(annotation: TightAnnotation) -> KittiLabel:
    """Convert a tight annotation to a Car label.

    Annotations backed by an engine record carry its 3D pose; the observation
    angle is rotation_y - atan2(x, z). Orphans get sentinel 3D fields.
    """
    if annotation.location_cam is not None and annotation.size is not None and annotation.yaw is not None:
        x, _, z = annotation.location_cam
        length, width, height = annotation.size
        alpha = normalize_angle(annotation.yaw - math.atan2(x, z))
        dimensions = (height, width, length)
        location = annotation.location_cam
        rotation_y = annotation.yaw
    else:
        alpha = SENTINEL_ALPHA
        dimensions = (SENTINEL_DIMENSION,) * 3
        location = (SENTINEL_LOCATION,) * 3
        rotation_y = SENTINEL_ALPHA
    return KittiLabel(
        type=CAR_TYPE,
        truncated=annotation.truncation,
        occluded=annotation.occlusion_level,
        alpha=alpha,
        bbox=annotation.tight_box,
        dimensions=dimensions,
        location=location,
        rotation_y=rotation_y,
    )


def format_label(label: KittiLabel) -> str:
    left, top, right, bottom = label.bbox
    h, w, length = label.dimensions
    x, y, z = label.location
    parts = [
        label.type,
        f"{label.truncated:.2f}",
        str(label.occluded),
        f"{label.alpha:.2f}",
        f"{left:.2f}",
        f"{top:.2f}",
        f"{right:.2f}",
        f"{bottom:.2f}",
        f"{h:.2f}",
        f"{w:.2f}",
        f"{length:.2f}",
        f"{x:.2f}",
        f"{y:.2f}",
        f"{z:.2f}",
        f"{label.rotation_y:.2f}",
    ]
    if label.score is not None:
        parts.append(f"{label.score:.4f}")
    return " ".join(parts)


def labels_to_text(labels: Sequence[KittiLabel]) -> str:
    return "".join(format_label(label) + "\n" for label in labels)


def parse_labels_text(text: str, origin: str = "labels") -> list[KittiLabel]:
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (15, 16):
            raise FormatError(f"{origin} line {lineno}: expected 15 or 16 fields, got {len(parts)}")
        try:
            truncated = float(parts[1])
            occluded = int(parts[2])
            nums = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise FormatError(f"{origin} line {lineno}: {exc}") from None
        labels.append(
            KittiLabel(
                type=parts[0],
                truncated=truncated,
                occluded=occluded,
                alpha=nums[0],
                bbox=(nums[1], nums[2], nums[3], nums[4]),
                dimensions=(nums[5], nums[6], nums[7]),
                location=(nums[8], nums[9], nums[10]),
                rotation_y=nums[11],
                score=nums[12] if len(parts) == 16 else None,
            )
        )
    return labels


def write_labels(labels: Sequence[KittiLabel], destination: str | Path) -> None:
    Path(destination).write_text(labels_to_text(labels))


def parse_labels(source: str | Path) -> list[KittiLabel]:
    path = Path(source)
    return parse_labels_text(path.read_text(), origin=path.name)


def label_path(labels_dir: str | Path, frame_idx: int) -> Path:
    return Path(labels_dir) / f"{frame_idx:06d}.txt"


def read_label_dir(labels_dir: str | Path) -> dict[str, list[KittiLabel]]:
    """All label files of a directory keyed by frame stem, sorted."""
    out: dict[str, list[KittiLabel]] = {}
    for path in sorted(Path(labels_dir).glob("*.txt")):
        out[path.stem] = parse_labels(path)
    return out
