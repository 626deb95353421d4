"""Engine-style buffer codecs and the MRB raster file format.

Three buffer kinds flow through the pipeline, all carried by :class:`Raster`:

* log-encoded depth (F32): the engine stores ``ln(z/near) / ln(far/near)``
  instead of metric depth, concentrating precision at range; it must be
  linearized before any metric use.
* packed stencil (U8): low 4 bits hold an object class code, high 4 bits
  hold flags.
* instance ids (U16): the withheld per-pixel oracle, tests only.

MRB is this repository's raw raster container (little-endian throughout)::

    magic "MRXB" | version u8 = 1 | sample_kind u8 (0=U8, 1=U16, 2=F32)
    | width u32 | height u32 | payload width*height samples, row-major,
    top-left origin

No compression, no padding, extension ".mrb". Two writes of equal rasters are
byte-identical, which is what makes golden-file tests trivial.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import ConfigError, FormatError, TruncatedFileError

MRB_MAGIC = b"MRXB"
MRB_VERSION = 1
MRB_EXTENSION = ".mrb"

DEFAULT_NEAR_M = 0.15
DEFAULT_FAR_M = 600.0

_KIND_TO_CODE = {"U8": 0, "U16": 1, "F32": 2}
_CODE_TO_KIND = {v: k for k, v in _KIND_TO_CODE.items()}
_KIND_TO_DTYPE = {"U8": np.dtype("<u1"), "U16": np.dtype("<u2"), "F32": np.dtype("<f4")}
_NATIVE_TO_KIND = {np.dtype(np.uint8): "U8", np.dtype(np.uint16): "U16", np.dtype(np.float32): "F32"}

PathOrIO = Union[str, Path, BinaryIO]


@dataclass(frozen=True)
class DepthCodecParams:
    """Near/far range of the logarithmic depth encoding, in meters."""

    near_m: float = DEFAULT_NEAR_M
    far_m: float = DEFAULT_FAR_M

    def __post_init__(self):
        if not (0.0 < self.near_m < self.far_m) or not math.isfinite(self.far_m):
            raise ConfigError(
                f"invalid depth codec params: need 0 < near < far, got near={self.near_m}, far={self.far_m}"
            )


@dataclass(frozen=True)
class StencilValue:
    """Unpacked stencil byte: 4-bit object class code plus 4 flag bits."""

    class_id: int
    flags: int

    def __post_init__(self):
        if not (0 <= self.class_id <= 15 and 0 <= self.flags <= 15):
            raise ValueError(f"stencil fields must fit in 4 bits: class_id={self.class_id}, flags={self.flags}")


class Raster:
    """Immutable width x height grid of U8, U16, or F32 samples.

    Wraps a locked, C-contiguous 2D numpy array (row-major, top-left origin).
    F32 samples must be finite.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"raster data must be 2D (height, width), got shape {arr.shape}")
        kind = _NATIVE_TO_KIND.get(arr.dtype)
        if kind is None:
            raise ValueError(f"unsupported raster dtype {arr.dtype}; use uint8, uint16, or float32")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"raster dimensions must be >= 1, got {arr.shape[1]}x{arr.shape[0]}")
        if kind == "F32" and not np.isfinite(arr).all():
            raise ValueError("F32 raster contains non-finite samples")
        arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def sample_kind(self) -> str:
        return _NATIVE_TO_KIND[self.data.dtype]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.sample_kind == other.sample_kind
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __hash__(self):
        return hash((self.sample_kind, self.data.shape, self.data.tobytes()))

    def __repr__(self):
        return f"Raster({self.width}x{self.height} {self.sample_kind})"


def encode_log_depth(z, params: DepthCodecParams):
    """Encode metric depth to the unit-interval log value d = ln(z/near)/ln(far/near).

    ``z`` values are clamped into [near, far] before encoding; accepts scalars
    or numpy arrays. Strictly increasing in z on the valid range.
    """
    z = np.clip(z, params.near_m, params.far_m)
    d = np.log(z / params.near_m) / math.log(params.far_m / params.near_m)
    return float(d) if d.ndim == 0 else d


def linearize_depth(d, params: DepthCodecParams):
    """Invert :func:`encode_log_depth`: z = near * (far/near)**d.

    ``d`` is clamped into [0, 1]; accepts scalars or numpy arrays. Use
    :func:`linearize_raster` when the clamp count matters.
    """
    d = np.clip(d, 0.0, 1.0)
    z = params.near_m * (params.far_m / params.near_m) ** np.asarray(d, dtype=np.float64)
    return float(z) if z.ndim == 0 else z


def linearize_raster(raster: Raster, params: DepthCodecParams) -> tuple[np.ndarray, int]:
    """Linearize an encoded F32 depth raster to metric float64 depths.

    Out-of-range samples are clamped into [0, 1] and counted rather than
    rejected (rasterizer background encodes the far plane; stray values come
    from quantization only). Returns ``(depth_m, clamped_count)``.
    """
    if raster.sample_kind != "F32":
        raise ValueError(f"depth raster must be F32, got {raster.sample_kind}")
    d = raster.data.astype(np.float64)
    clamped = int(np.count_nonzero((d < 0.0) | (d > 1.0)))
    return linearize_depth(d, params), clamped


def pack_stencil(v: StencilValue) -> int:
    """Pack class/flags into one byte: (flags << 4) | class_id."""
    return (v.flags << 4) | v.class_id


def unpack_stencil(b: int) -> StencilValue:
    """Unpack a stencil byte; total on 0-255 and the exact inverse of pack."""
    if not 0 <= b <= 255:
        raise ValueError(f"stencil byte out of range: {b}")
    return StencilValue(class_id=b & 0x0F, flags=b >> 4)


def stencil_class_ids(stencil: Raster) -> np.ndarray:
    """Vectorized class-code plane of a packed U8 stencil raster."""
    if stencil.sample_kind != "U8":
        raise ValueError(f"stencil raster must be U8, got {stencil.sample_kind}")
    return stencil.data & 0x0F


def _mrb_header(raster: Raster) -> bytes:
    return MRB_MAGIC + struct.pack(
        "<BBII", MRB_VERSION, _KIND_TO_CODE[raster.sample_kind], raster.width, raster.height
    )


def raster_to_bytes(raster: Raster) -> bytes:
    """Serialize to the MRB byte stream (deterministic: equal rasters, equal bytes)."""
    payload = np.ascontiguousarray(raster.data.astype(_KIND_TO_DTYPE[raster.sample_kind], copy=False))
    return _mrb_header(raster) + payload.tobytes()


def raster_from_bytes(blob: bytes) -> Raster:
    """Parse an MRB byte stream; exact inverse of :func:`raster_to_bytes`."""
    if len(blob) < 4 or blob[:4] != MRB_MAGIC:
        raise FormatError(f"bad MRB magic: expected {MRB_MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 14:
        raise TruncatedFileError(f"MRB header truncated: {len(blob)} bytes")
    version, kind_code, width, height = struct.unpack("<BBII", blob[4:14])
    if version != MRB_VERSION:
        raise FormatError(f"unsupported MRB version {version}")
    kind = _CODE_TO_KIND.get(kind_code)
    if kind is None:
        raise FormatError(f"unknown MRB sample_kind code {kind_code}")
    if width < 1 or height < 1:
        raise FormatError(f"invalid MRB dimensions {width}x{height}")
    dtype = _KIND_TO_DTYPE[kind]
    expected = width * height * dtype.itemsize
    payload = blob[14:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"MRB payload truncated: need {expected} bytes for {width}x{height} {kind}, got {len(payload)}"
        )
    if len(payload) > expected:
        raise FormatError(f"MRB trailing data: {len(payload) - expected} extra bytes")
    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return Raster(samples)


def write_raster(raster: Raster, destination: PathOrIO) -> None:
    """Write a raster to a path or binary stream in MRB format."""
    blob = raster_to_bytes(raster)
    if isinstance(destination, (str, Path)):
        Path(destination).write_bytes(blob)
    else:
        destination.write(blob)


def read_raster(source: PathOrIO) -> Raster:
    """Read an MRB raster from a path or binary stream."""
    if isinstance(source, (str, Path)):
        blob = Path(source).read_bytes()
    else:
        blob = source.read()
    return raster_from_bytes(blob)
