"""The multi-stage motion gate.

Five stages turn raw frame pairs into a per-frame movement decision that
gates the speed signal:

1. per-channel absolute frame difference, thresholded at theta (a pixel
   counts only when all three channels change by more than theta),
2. restriction to the body mask,
3. an n x n spatial median to drop isolated change pixels,
4. compression of the surviving pixels to one bit per frame pair, followed by
   a 1 x m temporal median over that bit sequence,
5. multiplication of the speed series by the filtered bit sequence.

Stages 1-3 use exact integer arithmetic so results are bit-reproducible.
"""

from collections.abc import Sequence as SequenceABC

import numpy as np
from numba import njit

from ._median import sliding_median_2d, _window_count_valid
from .errors import InvalidArgumentError
from .types import BinaryImage, BodyMask, Frame, GateSignal, OpphConfig, SpeedSeries


@njit(cache=True, nogil=True)
def _diff_threshold_kernel(a, b, theta, out):
    H, W = out.shape
    for i in range(H):
        for j in range(W):
            v = 1
            for c in range(3):
                d = np.int32(a[i, j, c]) - np.int32(b[i, j, c])
                if d < 0:
                    d = -d
                if d <= theta:
                    v = 0
                    break
            out[i, j] = v


def diff_threshold(frame_a: Frame, frame_b: Frame, theta: int) -> BinaryImage:
    """Pixels whose intensity changed by more than ``theta`` in every channel.

    Strict inequality: a channel difference equal to theta does not count.
    """
    if not (0 <= theta <= 255):
        raise InvalidArgumentError(f"theta must be in 0..255, got {theta}")
    if frame_a.pixels.shape != frame_b.pixels.shape:
        raise InvalidArgumentError(
            f"frame dimensions differ: {frame_a.pixels.shape} vs {frame_b.pixels.shape}"
        )
    out = np.empty((frame_a.height, frame_a.width), np.uint8)
    _diff_threshold_kernel(frame_a.pixels, frame_b.pixels, theta, out)
    return BinaryImage(out)


def apply_mask(img: BinaryImage, mask: BodyMask) -> BinaryImage:
    """Pointwise AND of a binary image with the body mask."""
    if img.values.shape != mask.values.shape:
        raise InvalidArgumentError(
            f"image {img.values.shape} and mask {mask.values.shape} dimensions differ"
        )
    return BinaryImage(img.values & mask.values)


def spatial_median(img: BinaryImage, n: int) -> BinaryImage:
    """n x n median of a binary image with zero padding at the borders.

    For 0/1 input the median equals "1 iff the window holds more ones than
    n*n/2"; isolated pixels vanish, solid regions keep their interior.
    """
    return BinaryImage(sliding_median_2d(img.values, n, "zero"))


def compress(p: BinaryImage, min_active_pixels: int = 1) -> int:
    """One movement bit for a prominent-motion image.

    Returns 1 iff at least ``min_active_pixels`` pixels survived the earlier
    stages; the default of 1 is the plain non-zero-sum rule.
    """
    if min_active_pixels < 1:
        raise InvalidArgumentError(
            f"min_active_pixels must be >= 1, got {min_active_pixels}"
        )
    return 1 if p.count() >= min_active_pixels else 0


def _as_bits(s) -> np.ndarray:
    if isinstance(s, GateSignal):
        arr = s.s
    else:
        arr = np.asarray(s)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError("bit sequence must be 1-D and non-empty")
    bits = arr.astype(np.int32)
    if not np.isin(bits, (0, 1)).all():
        raise InvalidArgumentError("bit sequence values must be 0 or 1")
    return bits


def _check_m(m: int) -> None:
    if m < 1 or m % 2 == 0:
        raise InvalidArgumentError(f"temporal window m must be odd and >= 1, got {m}")


def temporal_median(s, m: int) -> np.ndarray:
    """Centered 1 x m sliding median of a bit sequence, replicate padded.

    Output length equals input length. Any run of constant value shorter
    than ceil(m/2) that is surrounded by the opposite value is removed; runs
    touching either end are treated as extended by the padding and survive.
    """
    _check_m(m)
    bits = _as_bits(s)
    if m == 1:
        return bits.astype(np.uint8)
    h = m // 2
    padded = np.pad(bits, h, mode="edge")
    counts = np.convolve(padded, np.ones(m, np.int32), mode="valid")
    return (counts > m // 2).astype(np.uint8)


def temporal_median_causal(s, m: int) -> np.ndarray:
    """Causal variant: value t is the median of the m bits ending at t.

    Equals the centered median delayed by floor(m/2) frames wherever both
    windows lie inside the sequence; the start is replicate padded. Meant
    for parity with a live deployment that cannot look ahead.
    """
    _check_m(m)
    bits = _as_bits(s)
    if m == 1:
        return bits.astype(np.uint8)
    padded = np.concatenate([np.full(m - 1, bits[0], np.int32), bits])
    counts = np.convolve(padded, np.ones(m, np.int32), mode="valid")
    return (counts > m // 2).astype(np.uint8)


def gate_series(speeds: SpeedSeries, gate) -> SpeedSeries:
    """Multiply a speed series by the filtered movement bits.

    Where the bit is 0 the output is exactly 0.0.
    """
    bits = gate.s_filtered if isinstance(gate, GateSignal) else np.asarray(gate)
    if bits.ndim != 1 or bits.size != len(speeds):
        raise InvalidArgumentError(
            f"gate length {bits.size} does not match speed series length {len(speeds)}"
        )
    out = np.where(bits.astype(bool), speeds.values, 0.0)
    return SpeedSeries(out, speeds.fps)


def _pair_motion_bit(
    pix_a: np.ndarray, pix_b: np.ndarray, pair_mask: np.ndarray, cfg: OpphConfig
) -> int:
    """Movement bit for one frame pair, restricted to the mask bounding box.

    Equivalent to compress(spatial_median(apply_mask(diff_threshold(...))))
    over the full frame: the masked change image is zero outside the mask, so
    the median and the pixel count only need the mask bounding box grown by
    the median radius.
    """
    rows = np.flatnonzero(pair_mask.any(axis=1))
    if rows.size == 0:
        return 0
    cols = np.flatnonzero(pair_mask.any(axis=0))
    h = cfg.n // 2
    r0 = max(int(rows[0]) - h, 0)
    r1 = min(int(rows[-1]) + h, pair_mask.shape[0] - 1)
    c0 = max(int(cols[0]) - h, 0)
    c1 = min(int(cols[-1]) + h, pair_mask.shape[1] - 1)
    sub_a = pix_a[r0 : r1 + 1, c0 : c1 + 1]
    sub_b = pix_b[r0 : r1 + 1, c0 : c1 + 1]
    sub_m = pair_mask[r0 : r1 + 1, c0 : c1 + 1]

    changed = np.empty(sub_m.shape, np.uint8)
    _diff_threshold_kernel(np.ascontiguousarray(sub_a), np.ascontiguousarray(sub_b),
                           cfg.theta, changed)
    changed &= sub_m
    if cfg.n == 1 or min(changed.shape) < cfg.n:
        # Window would not fit the crop; fall back to the full frame.
        if cfg.n > 1:
            full = np.zeros(pair_mask.shape, np.uint8)
            full[r0 : r1 + 1, c0 : c1 + 1] = changed
            changed = sliding_median_2d(full, cfg.n, "zero")
        count = int(changed.sum())
    else:
        padded = np.pad(changed, h)
        counts = np.empty(changed.shape, np.int32)
        _window_count_valid(padded, cfg.n, counts)
        count = int((counts > (cfg.n * cfg.n) // 2).sum())
    return 1 if count >= cfg.min_active_pixels else 0


def pair_masks(masks: SequenceABC, num_frames: int) -> list[np.ndarray]:
    """Normalize masks to one uint8 array per frame pair.

    Accepts either one mask per frame (combined pairwise with OR: motion can
    occur wherever the body is in either frame) or one pre-combined mask per
    pair.
    """
    arrs = [m.values if isinstance(m, BodyMask) else np.asarray(m, np.uint8) for m in masks]
    if len(arrs) == num_frames:
        return [arrs[t] | arrs[t + 1] for t in range(num_frames - 1)]
    if len(arrs) == num_frames - 1:
        return list(arrs)
    raise InvalidArgumentError(
        f"got {len(arrs)} masks for {num_frames} frames; expected "
        f"{num_frames} (per frame) or {num_frames - 1} (per pair)"
    )


def run_opph(
    frames: SequenceABC,
    masks: SequenceABC,
    speeds: SpeedSeries,
    cfg: OpphConfig,
    stream: bool = False,
) -> tuple[SpeedSeries, GateSignal]:
    """Run all five stages over a frame sequence.

    Args:
        frames: at least two frames of identical dimensions.
        masks: per-frame or per-pair body masks (see :func:`pair_masks`).
        speeds: raw speed series aligned to the frame pairs.
        cfg: gate parameters.
        stream: use the causal temporal median instead of the centered one.

    Returns:
        The gated speed series and the gate signal (bits before and after
        temporal filtering).
    """
    if len(frames) < 2:
        raise InvalidArgumentError(f"need at least 2 frames, got {len(frames)}")
    n_pairs = len(frames) - 1
    if len(speeds) != n_pairs:
        raise InvalidArgumentError(
            f"speed series length {len(speeds)} does not match {n_pairs} frame pairs"
        )
    shape = frames[0].pixels.shape
    for f in frames[1:]:
        if f.pixels.shape != shape:
            raise InvalidArgumentError(
                f"frame dimensions drift: {shape} vs {f.pixels.shape} at index {f.index}"
            )
    pm = pair_masks(masks, len(frames))
    for t, m in enumerate(pm):
        if m.shape != shape[:2]:
            raise InvalidArgumentError(
                f"mask {t} shape {m.shape} does not match frames {shape[:2]}"
            )

    s = np.empty(n_pairs, np.uint8)
    for t in range(n_pairs):
        s[t] = _pair_motion_bit(frames[t].pixels, frames[t + 1].pixels, pm[t], cfg)
    filt = temporal_median_causal(s, cfg.m) if stream else temporal_median(s, cfg.m)
    signal = GateSignal(s, filt)
    return gate_series(speeds, signal), signal
