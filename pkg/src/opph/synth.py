"""Synthetic sequence generator with exact ground truth.

A textured body (rectangle or ellipse) translates over a textured background
following a piecewise-constant motion program. Positions accumulate in float
but render at integers (rounded half-to-even), and the ground-truth flow and
speed reflect the rounded displacement, so ground truth is exact by
construction. Noise models real-world artifacts and touches the frames only,
never the ground truth.

All randomness flows through the counter generator in :mod:`opph.rng`; a
fixed seed reproduces byte-identical frames on any platform.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .errors import InvalidArgumentError
from .types import BodyMask, FlowField, Frame, SpeedSeries

_NOISE_KINDS = ("gaussian_sensor", "salt", "global_flicker", "background_motion")

# Irwin-Hall Gaussian approximation: sum of four 5-bit uniforms per channel.
# Mean 62, variance 4 * (32^2 - 1) / 12 = 341; tails truncate at +-3.36 sigma.
_IH_MEAN = 62.0
_IH_STD = math.sqrt(341.0)


@dataclass(frozen=True)
class NoiseSpec:
    """One noise source.

    kind-specific parameters:
        gaussian_sensor: sigma (px intensity std per channel); offsets are an
            Irwin-Hall approximation rounded to integers, tails cut at 3.36
            sigma.
        salt: rate; round(rate * pixels) seeded position draws (with
            replacement) flip to black or white per frame.
        global_flicker: amplitude added to every channel for ``duration``
            frames out of every ``period`` (active while t % period < duration).
        background_motion: the pixels inside ``region`` = (x, y, w, h) roll
            cyclically by the accumulated rounded displacement of (vx, vy).
    """

    kind: str
    sigma: float = 0.0
    rate: float = 0.0
    amplitude: int = 0
    duration: int = 1
    period: int = 1
    region: tuple[int, int, int, int] | None = None
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise InvalidArgumentError(
                f"unknown noise kind {self.kind!r}; expected one of {_NOISE_KINDS}"
            )
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if not (0.0 <= self.rate <= 1.0):
            raise InvalidArgumentError(f"salt rate must be in [0, 1], got {self.rate}")
        if self.duration < 1 or self.period < 1:
            raise InvalidArgumentError("flicker duration and period must be >= 1")
        if abs(self.amplitude) > 255:
            raise InvalidArgumentError(f"flicker amplitude must fit 8 bits, got {self.amplitude}")
        if self.kind == "background_motion" and self.region is None:
            raise InvalidArgumentError("background_motion needs a region (x, y, w, h)")


@dataclass(frozen=True)
class BodySpec:
    """The moving body: shape, size, start position and texture."""

    shape: str
    width: int
    height: int
    x: float
    y: float
    texture_seed: int = 0
    texture_amplitude: int = 60
    texture_smoothing: int = 0
    texture_mono: bool = False

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise InvalidArgumentError(f"body shape must be rectangle or ellipse, got {self.shape!r}")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"body size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.texture_amplitude <= 127):
            raise InvalidArgumentError("texture amplitude must be in 0..127")
        if self.texture_smoothing < 0:
            raise InvalidArgumentError("texture smoothing radius must be >= 0")


@dataclass(frozen=True)
class MotionSegment:
    """Move at (vx, vy) pixels/frame for ``frames`` frame pairs."""

    frames: int
    vx: float
    vy: float

    def __post_init__(self):
        if self.frames < 1:
            raise InvalidArgumentError(f"segment duration must be >= 1, got {self.frames}")


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic sequence."""

    identifier: str
    width: int
    height: int
    fps: float
    seed: int
    body: BodySpec
    motion: tuple[MotionSegment, ...]
    noise: tuple[NoiseSpec, ...] = ()
    background_seed: int = 0
    background_amplitude: int = 60
    background_smoothing: int = 0
    background_mono: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"canvas must be >= 1x1, got {self.width}x{self.height}")
        if not (self.fps > 0):
            raise InvalidArgumentError(f"fps must be > 0, got {self.fps}")
        if not self.motion:
            raise InvalidArgumentError("motion program must have at least one segment")
        if not (0 <= self.background_amplitude <= 127):
            raise InvalidArgumentError("background amplitude must be in 0..127")
        object.__setattr__(self, "motion", tuple(self.motion))
        object.__setattr__(self, "noise", tuple(self.noise))
        # Reject programs that take the body outside the canvas anywhere.
        for t, (px, py) in enumerate(self.positions()):
            if not (0 <= px <= self.width - self.body.width) or not (
                0 <= py <= self.height - self.body.height
            ):
                raise InvalidArgumentError(
                    f"body leaves the canvas at frame {t}: position ({px}, {py})"
                )

    @property
    def num_frames(self) -> int:
        return sum(seg.frames for seg in self.motion) + 1

    def positions(self) -> list[tuple[int, int]]:
        """Integer body positions per frame (accumulate float, round half-even)."""
        out = [(int(np.rint(self.body.x)), int(np.rint(self.body.y)))]
        fx, fy = self.body.x, self.body.y
        for seg in self.motion:
            for _ in range(seg.frames):
                fx += seg.vx
                fy += seg.vy
                out.append((int(np.rint(fx)), int(np.rint(fy))))
        return out


def texture(seed: int, height: int, width: int, amplitude: int, smoothing: int,
            mono: bool = False) -> np.ndarray:
    """Seeded RGB texture: 128 + uniform[-amplitude, amplitude] per channel,
    optionally box-blurred with the given radius. With ``mono`` one field is
    shared by all channels (gray texture, so channel changes are correlated).
    Returns (H, W, 3) uint8."""
    channels = 1 if mono else 3
    n = height * width * channels
    base = rng.substream(seed, 0)
    vals = rng.uniform_ints(base, 0, n, -amplitude, amplitude).reshape(
        height, width, channels
    )
    if smoothing > 0:
        size = 2 * smoothing + 1
        padded = np.pad(vals, ((smoothing, smoothing), (smoothing, smoothing), (0, 0)), mode="edge")
        cs = padded.cumsum(0).cumsum(1).astype(np.float64)
        cs = np.pad(cs, ((1, 0), (1, 0), (0, 0)))
        box = (
            cs[size:, size:] - cs[:-size, size:] - cs[size:, :-size] + cs[:-size, :-size]
        ) / (size * size)
        vals = np.rint(box).astype(np.int64)
    if mono:
        vals = np.repeat(vals, 3, axis=2)
    img = np.clip(vals + 128, 0, 255).astype(np.uint8)
    return img


def _body_stencil(body: BodySpec) -> np.ndarray:
    """(h, w) uint8 support of the body shape inside its bounding box."""
    if body.shape == "rectangle":
        return np.ones((body.height, body.width), np.uint8)
    yy = (np.arange(body.height) + 0.5 - body.height / 2.0) / (body.height / 2.0)
    xx = (np.arange(body.width) + 0.5 - body.width / 2.0) / (body.width / 2.0)
    return ((yy[:, None] ** 2 + xx[None, :] ** 2) <= 1.0).astype(np.uint8)


# SWAR masks for summing the twelve 5-bit chunks of one draw into the three
# per-channel Irwin-Hall sums (channel c uses chunks 4c..4c+3).
_SWAR_A = np.uint64(0x7C1F07C1F07C1F)
_SWAR_B = np.uint64(0x3FF003FF003FF)


@njit(cache=True, nogil=True)
def _gaussian_kernel(src, dst, base, offsets):
    H, W, _ = src.shape
    gold = np.uint64(0x9E3779B97F4B7C15)
    mask_a = _SWAR_A
    mask_b = _SWAR_B
    low10 = np.uint64(0x3FF)
    idx = np.uint64(0)
    one = np.uint64(1)
    five = np.uint64(5)
    ten = np.uint64(10)
    twenty = np.uint64(20)
    forty = np.uint64(40)
    for i in range(H):
        for j in range(W):
            idx += one
            z = rng.mix64_scalar(base + idx * gold)
            p = (z & mask_a) + ((z >> five) & mask_a)
            q = (p & mask_b) + ((p >> ten) & mask_b)
            for c in range(3):
                if c == 0:
                    s = q & low10
                elif c == 1:
                    s = (q >> twenty) & low10
                else:
                    s = (q >> forty) & low10
                val = np.int64(src[i, j, c]) + offsets[s]
                if val < 0:
                    val = 0
                elif val > 255:
                    val = 255
                dst[i, j, c] = np.uint8(val)


def _gaussian_offsets(sigma: float) -> np.ndarray:
    """Rounded noise offset per Irwin-Hall sum value (0..124)."""
    return np.rint(
        (np.arange(125, dtype=np.float64) - _IH_MEAN) * (sigma / _IH_STD)
    ).astype(np.int64)


def _apply_noise_pixels(pixels: np.ndarray, spec: NoiseSpec, seed: int, t: int) -> np.ndarray:
    """Apply one noise source to one frame's pixel array (returns a new array,
    or the input unchanged when the noise is a no-op for this frame)."""
    if spec.kind == "gaussian_sensor":
        if spec.sigma == 0.0:
            return pixels
        dst = np.empty_like(pixels)
        base = np.uint64(rng.substream(seed, t))
        _gaussian_kernel(pixels, dst, base, _gaussian_offsets(spec.sigma))
        return dst
    if spec.kind == "salt":
        n = pixels.shape[0] * pixels.shape[1]
        count = int(round(spec.rate * n))
        if count == 0:
            return pixels
        base = rng.substream(seed, t)
        d = rng.draws(base, 0, count)
        positions = (d % np.uint64(n)).astype(np.int64)
        white = ((d >> np.uint64(32)) & np.uint64(1)).astype(np.uint8) * 255
        out = pixels.copy()
        out.reshape(n, 3)[positions] = white[:, None]
        return out
    if spec.kind == "global_flicker":
        if spec.amplitude == 0 or (t % spec.period) >= spec.duration:
            return pixels
        shifted = pixels.astype(np.int16) + spec.amplitude
        return np.clip(shifted, 0, 255).astype(np.uint8)
    # background_motion
    x, y, w, h = spec.region
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > pixels.shape[1] or y + h > pixels.shape[0]:
        raise InvalidArgumentError(f"background_motion region {spec.region} outside the frame")
    dx = int(np.rint(t * spec.vx))
    dy = int(np.rint(t * spec.vy))
    if dx % w == 0 and dy % h == 0:
        return pixels
    out = pixels.copy()
    out[y : y + h, x : x + w] = np.roll(pixels[y : y + h, x : x + w], (dy, dx), axis=(0, 1))
    return out


def inject_noise(frames: list[Frame], spec: NoiseSpec, seed: int) -> list[Frame]:
    """Apply one noise source to every frame; deterministic under the seed."""
    out = []
    for t, f in enumerate(frames):
        px = _apply_noise_pixels(f.pixels, spec, seed, t)
        if px is f.pixels:
            out.append(f)
        else:
            px.setflags(write=False)
            out.append(Frame(px, f.index, f.fps))
    return out




class LazyFlowSequence:
    """Per-pair ground-truth flow, materialized on demand.

    Full-resolution float64 flow for hundreds of pairs would dominate memory;
    each field is rebuilt from the frame mask and the integer displacement
    when indexed.
    """

    def __init__(self, masks: list[BodyMask], displacements: list[tuple[int, int]]):
        self._masks = masks
        self._disp = displacements

    def __len__(self) -> int:
        return len(self._disp)

    def __getitem__(self, t: int) -> FlowField:
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        if t < 0:
            t += len(self)
        if not (0 <= t < len(self)):
            raise IndexError(t)
        dx, dy = self._disp[t]
        mask = self._masks[t].values
        field = np.zeros(mask.shape + (2,), np.float64)
        sel = mask.view(bool)
        field[sel, 0] = float(dx)
        field[sel, 1] = float(dy)
        return FlowField(field)

    def __iter__(self):
        return (self[t] for t in range(len(self)))


def generate(
    spec: SceneSpec,
) -> tuple[list[Frame], LazyFlowSequence, list[BodyMask], SpeedSeries]:
    """Render a scene: frames (noise applied), per-pair ground-truth flow,
    per-frame masks and the ground-truth speed series.

    The flow of pair t equals the body's rounded displacement inside the
    frame-t mask and zero outside; gt_speed[t] is that displacement's
    magnitude, so flow_speed(gt_flow[t], masks[t]) reproduces gt_speed[t]
    exactly.
    """
    positions = spec.positions()
    bg = texture(
        spec.background_seed, spec.height, spec.width,
        spec.background_amplitude, spec.background_smoothing, spec.background_mono,
    )
    texels = texture(
        spec.body.texture_seed, spec.body.height, spec.body.width,
        spec.body.texture_amplitude, spec.body.texture_smoothing,
        spec.body.texture_mono,
    )
    stencil = _body_stencil(spec.body)

    canvas_cache: dict[tuple[int, int], np.ndarray] = {}
    mask_cache: dict[tuple[int, int], BodyMask] = {}
    noise_seeds = [rng.substream(spec.seed, 16 + i) for i in range(len(spec.noise))]

    frames: list[Frame] = []
    masks: list[BodyMask] = []
    for t, pos in enumerate(positions):
        if pos not in canvas_cache:
            px, py = pos
            canvas = bg.copy()
            region = canvas[py : py + spec.body.height, px : px + spec.body.width]
            np.copyto(region, texels, where=stencil[..., None].astype(bool))
            canvas.setflags(write=False)
            canvas_cache[pos] = canvas
            m = np.zeros((spec.height, spec.width), np.uint8)
            m[py : py + spec.body.height, px : px + spec.body.width] = stencil
            mask_cache[pos] = BodyMask(m)
        pixels = canvas_cache[pos]
        for ns, ns_seed in zip(spec.noise, noise_seeds):
            nxt = _apply_noise_pixels(pixels, ns, ns_seed, t)
            if nxt is not pixels:
                nxt.setflags(write=False)
            pixels = nxt
        frames.append(Frame(pixels, t, spec.fps))
        masks.append(mask_cache[pos])

    disp = [
        (positions[t + 1][0] - positions[t][0], positions[t + 1][1] - positions[t][1])
        for t in range(len(positions) - 1)
    ]
    gt_speed = SpeedSeries(
        np.array([math.hypot(dx, dy) for dx, dy in disp], np.float64), spec.fps
    )
    gt_flow = LazyFlowSequence(masks[:-1], disp)
    return frames, gt_flow, masks, gt_speed


def scene_to_dict(spec: SceneSpec) -> dict:
    """Plain-data form of a scene, the JSON schema the CLI reads."""
    out = {
        "identifier": spec.identifier,
        "width": spec.width,
        "height": spec.height,
        "fps": spec.fps,
        "seed": spec.seed,
        "background_seed": spec.background_seed,
        "background_amplitude": spec.background_amplitude,
        "background_smoothing": spec.background_smoothing,
        "background_mono": spec.background_mono,
        "body": {
            "shape": spec.body.shape,
            "width": spec.body.width,
            "height": spec.body.height,
            "x": spec.body.x,
            "y": spec.body.y,
            "texture_seed": spec.body.texture_seed,
            "texture_amplitude": spec.body.texture_amplitude,
            "texture_smoothing": spec.body.texture_smoothing,
            "texture_mono": spec.body.texture_mono,
        },
        "motion": [{"frames": s.frames, "vx": s.vx, "vy": s.vy} for s in spec.motion],
        "noise": [],
    }
    for ns in spec.noise:
        d: dict = {"kind": ns.kind}
        if ns.kind == "gaussian_sensor":
            d["sigma"] = ns.sigma
        elif ns.kind == "salt":
            d["rate"] = ns.rate
        elif ns.kind == "global_flicker":
            d.update(amplitude=ns.amplitude, duration=ns.duration, period=ns.period)
        else:
            d.update(region=list(ns.region), vx=ns.vx, vy=ns.vy)
        out["noise"].append(d)
    return out


def scene_from_dict(data: dict) -> SceneSpec:
    """Inverse of :func:`scene_to_dict` with validation via the dataclasses."""
    try:
        body = BodySpec(**data["body"])
        motion = tuple(MotionSegment(**seg) for seg in data["motion"])
        noise = []
        for nd in data.get("noise", []):
            nd = dict(nd)
            if "region" in nd and nd["region"] is not None:
                nd["region"] = tuple(nd["region"])
            noise.append(NoiseSpec(**nd))
        return SceneSpec(
            identifier=data["identifier"],
            width=data["width"],
            height=data["height"],
            fps=data["fps"],
            seed=data["seed"],
            body=body,
            motion=motion,
            noise=tuple(noise),
            background_seed=data.get("background_seed", 0),
            background_amplitude=data.get("background_amplitude", 60),
            background_smoothing=data.get("background_smoothing", 0),
            background_mono=data.get("background_mono", False),
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"scene config is missing field {exc}") from exc
    except TypeError as exc:
        raise InvalidArgumentError(f"bad scene config: {exc}") from exc
