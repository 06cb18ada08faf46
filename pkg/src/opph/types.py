"""Core domain types shared by every stage of the pipeline.

All types validate their invariants on construction and are immutable
afterwards: array payloads are copied in and marked read-only, so instances
are safe to share between threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    """Return a C-contiguous read-only array with the given dtype.

    Already-frozen arrays are shared as-is; anything else is copied so the
    caller's buffer stays untouched.
    """
    a = np.asarray(arr)
    if a.dtype == dtype and a.flags.c_contiguous and not a.flags.writeable and a.base is None:
        return a
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Frame:
    """One 8-bit RGB video frame.

    Attributes:
        pixels: (height, width, 3) uint8 array, channel order R, G, B.
        index: 0-based frame number within the owning sequence.
        fps: frames per second of the owning sequence.
    """

    pixels: np.ndarray
    index: int
    fps: float

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"frame pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError(f"frame dimensions must be >= 1, got {px.shape[:2]}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise InvalidArgumentError("frame intensities must lie in 0..255")
        if self.index < 0:
            raise InvalidArgumentError(f"frame index must be >= 0, got {self.index}")
        if not (self.fps > 0):
            raise InvalidArgumentError(f"fps must be > 0, got {self.fps}")
        object.__setattr__(self, "pixels", _frozen(px, np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _validate_binary(values: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(values)
    if v.ndim != 2:
        raise InvalidArgumentError(f"{what} must be 2-D, got shape {v.shape}")
    if v.shape[0] < 1 or v.shape[1] < 1:
        raise InvalidArgumentError(f"{what} dimensions must be >= 1, got {v.shape}")
    out = _frozen(v, np.uint8)
    if out.size and int(out.max()) > 1:
        raise InvalidArgumentError(f"{what} values must be 0 or 1")
    return out


@dataclass(frozen=True)
class BinaryImage:
    """Per-pixel {0, 1} image (thresholded changes, prominent-motion maps)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _validate_binary(self.values, "binary image"))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def count(self) -> int:
        """Number of 1-pixels."""
        return int(self.values.sum())


@dataclass(frozen=True)
class BodyMask:
    """Binary mask of the observed person; 1 = body pixel."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _validate_binary(self.values, "body mask"))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def pixel_count(self) -> int:
        """N, the number of body pixels."""
        return int(self.values.sum())

    def union(self, other: "BodyMask") -> "BodyMask":
        """Pointwise OR of two masks of equal size."""
        if self.values.shape != other.values.shape:
            raise InvalidArgumentError(
                f"mask shapes differ: {self.values.shape} vs {other.values.shape}"
            )
        return BodyMask(self.values | other.values)


@dataclass(frozen=True)
class PartMask:
    """Per-pixel body-part labels; 0 = background, k >= 1 = part k.

    ``num_parts`` defaults to the largest label present; parts with no pixels
    are legal and simply contribute zero speed.
    """

    labels: np.ndarray
    num_parts: int = 0

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise InvalidArgumentError(f"part mask must be 2-D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise InvalidArgumentError("part labels must be integers")
        if lab.size and int(lab.min()) < 0:
            raise InvalidArgumentError("part labels must be >= 0")
        top = int(lab.max()) if lab.size else 0
        n = self.num_parts or top
        if top > n:
            raise InvalidArgumentError(f"label {top} exceeds num_parts={n}")
        object.__setattr__(self, "labels", _frozen(lab, np.int32))
        object.__setattr__(self, "num_parts", n)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def body_mask(self) -> BodyMask:
        """Union of all labelled parts."""
        return BodyMask((self.labels > 0).astype(np.uint8))


@dataclass(frozen=True)
class FlowField:
    """Dense 2-D motion field; vectors[i, j] = (v_x, v_y) in pixels/frame."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 3 or v.shape[2] != 2:
            raise InvalidArgumentError(f"flow field must be (H, W, 2), got {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgumentError(f"flow dimensions must be >= 1, got {v.shape[:2]}")
        out = _frozen(v, np.float64)
        if not np.isfinite(out).all():
            raise InvalidArgumentError("flow components must be finite")
        object.__setattr__(self, "vectors", out)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class PoseTrack:
    """2-D joint locations of one person over time.

    Attributes:
        xy: (frames, joints, 2) float array of pixel coordinates.
        present: (frames, joints) bool array; False marks a missing joint.
        fps: frames per second.
    """

    xy: np.ndarray
    present: np.ndarray
    fps: float

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64)
        pr = np.asarray(self.present, dtype=bool)
        if xy.ndim != 3 or xy.shape[2] != 2:
            raise InvalidArgumentError(f"pose xy must be (T, N, 2), got {xy.shape}")
        if pr.shape != xy.shape[:2]:
            raise InvalidArgumentError(
                f"presence shape {pr.shape} does not match xy {xy.shape[:2]}"
            )
        if xy.shape[0] < 1 or xy.shape[1] < 1:
            raise InvalidArgumentError("pose track needs at least 1 frame and 1 joint")
        if not (self.fps > 0):
            raise InvalidArgumentError(f"fps must be > 0, got {self.fps}")
        if pr.any() and not np.isfinite(xy[pr]).all():
            raise InvalidArgumentError("present joint coordinates must be finite")
        object.__setattr__(self, "xy", _frozen(xy, np.float64))
        object.__setattr__(self, "present", _frozen(pr, bool))

    @property
    def num_frames(self) -> int:
        return self.xy.shape[0]

    @property
    def num_joints(self) -> int:
        return self.xy.shape[1]


@dataclass(frozen=True)
class SpeedSeries:
    """Per-frame-pair scalar body speed in pixels/frame (length = frames - 1)."""

    values: np.ndarray
    fps: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise InvalidArgumentError(f"speed series must be 1-D and non-empty, got {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("speeds must be finite")
        if v.min() < 0:
            raise InvalidArgumentError("speeds must be >= 0")
        if not (self.fps > 0):
            raise InvalidArgumentError(f"fps must be > 0, got {self.fps}")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class GateSignal:
    """Per-frame-pair movement indicator before (s) and after (s_filtered)
    temporal filtering."""

    s: np.ndarray
    s_filtered: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.s)
        b = np.asarray(self.s_filtered)
        if a.ndim != 1 or b.shape != a.shape:
            raise InvalidArgumentError("gate signals must be 1-D with equal length")
        fa = _frozen(a, np.uint8)
        fb = _frozen(b, np.uint8)
        for name, arr in (("s", fa), ("s_filtered", fb)):
            if arr.size and int(arr.max()) > 1:
                raise InvalidArgumentError(f"gate signal {name} must be 0/1")
        object.__setattr__(self, "s", fa)
        object.__setattr__(self, "s_filtered", fb)

    def __len__(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class OpphConfig:
    """Parameters of the multi-stage motion gate.

    Attributes:
        theta: intensity difference threshold, 0..255.
        n: spatial median window side (odd).
        m: temporal median window length in frames.
        min_active_pixels: 1-pixels required in the filtered change image for
            a frame pair to count as movement. The default of 1 is the plain
            "non-zero sum" rule; larger values are an explicit extension knob.
    """

    theta: int = 20
    n: int = 5
    m: int = 15
    min_active_pixels: int = 1

    def __post_init__(self):
        if not (0 <= self.theta <= 255):
            raise InvalidArgumentError(f"theta must be in 0..255, got {self.theta}")
        if self.n < 1 or self.n % 2 == 0:
            raise InvalidArgumentError(f"n must be odd and >= 1, got {self.n}")
        if self.m < 1:
            raise InvalidArgumentError(f"m must be >= 1, got {self.m}")
        if self.min_active_pixels < 1:
            raise InvalidArgumentError(
                f"min_active_pixels must be >= 1, got {self.min_active_pixels}"
            )


def make_odd(k: int) -> int:
    """Next odd integer: k itself when odd, else k + 1."""
    return k if k % 2 == 1 else k + 1


def default_config(width: int, height: int, fps: float) -> OpphConfig:
    """Default gate parameters for a video of the given size and frame rate.

    theta is 20; the spatial window is 5 for VGA-sized frames and above
    (width * height >= 640 * 480) and 3 below that; the temporal window is
    fps / 2 rounded, forced odd so the binary median is always well defined.
    """
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"dimensions must be >= 1, got {width}x{height}")
    if not (fps > 0):
        raise InvalidArgumentError(f"fps must be > 0, got {fps}")
    n = 5 if width * height >= 640 * 480 else 3
    m = make_odd(max(1, round(fps / 2)))
    return OpphConfig(theta=20, n=n, m=m, min_active_pixels=1)
