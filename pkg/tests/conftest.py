"""Shared helpers: brute-force oracles and scene builders."""

import numpy as np
import pytest

from opph import synth
from opph.types import Frame


def frame_pair(pix_a, pix_b, fps=30.0):
    return Frame(pix_a, 0, fps), Frame(pix_b, 1, fps)


def diff_threshold_oracle(a: np.ndarray, b: np.ndarray, theta: int) -> np.ndarray:
    """Direct per-channel comparison, exact integers."""
    d = np.abs(a.astype(np.int32) - b.astype(np.int32))
    return (d > theta).all(axis=2).astype(np.uint8)


def sliding_median_oracle(img: np.ndarray, n: int, border: str) -> np.ndarray:
    """Per-pixel window gather and sort; the slow reference for any dtype."""
    h = n // 2
    H, W = img.shape
    out = np.empty_like(img)
    for i in range(H):
        for j in range(W):
            vals = []
            for di in range(-h, h + 1):
                for dj in range(-h, h + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < H and 0 <= jj < W:
                        vals.append(img[ii, jj])
                    elif border == "zero":
                        vals.append(img.dtype.type(0))
                    else:
                        vals.append(img[min(max(ii, 0), H - 1), min(max(jj, 0), W - 1)])
            vals.sort()
            out[i, j] = vals[len(vals) // 2]
    return out


def temporal_median_oracle(bits, m: int) -> list[int]:
    """Sliding sorted-window median with replicate padding."""
    h = m // 2
    padded = [bits[0]] * h + list(bits) + [bits[-1]] * h
    out = []
    for i in range(len(bits)):
        window = sorted(padded[i : i + m])
        out.append(int(window[m // 2]))
    return out


def pearson_oracle(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    return float((dx * dy).sum() / np.sqrt((dx * dx).sum() * (dy * dy).sum()))


def static_noisy_scene(seed=1, width=160, height=120, frames=40, sigma=2.0,
                       extra_noise=(), body=60, fps=30.0, smoothing=1):
    """Small motionless scene with sensor noise, for unit tests."""
    noise = (synth.NoiseSpec(kind="gaussian_sensor", sigma=sigma),) + tuple(extra_noise)
    return synth.SceneSpec(
        identifier=f"static-{seed}", width=width, height=height, fps=fps, seed=seed,
        body=synth.BodySpec(shape="rectangle", width=body, height=body,
                            x=(width - body) // 2, y=(height - body) // 2,
                            texture_seed=seed + 7, texture_amplitude=60,
                            texture_smoothing=smoothing),
        motion=(synth.MotionSegment(frames=frames - 1, vx=0.0, vy=0.0),),
        noise=noise,
        background_seed=seed + 13, background_amplitude=60, background_smoothing=smoothing,
    )


def moving_block_scene(seed=2, height=150, vx=3.0, vy=0.0, move_frames=60,
                       pad_frames=40, body=40, fps=30.0):
    """Static -> moving -> static scene with a rough-textured block.

    The canvas is sized to the travel so the body never leaves it.
    """
    width = int(abs(vx) * move_frames + body + 24)
    height = int(max(height, abs(vy) * move_frames + body + 24))
    x0 = 10.0 if vx >= 0 else width - body - 10.0
    y0 = 10.0 if vy >= 0 else height - body - 10.0
    if vy == 0:
        y0 = (height - body) // 2
    return synth.SceneSpec(
        identifier=f"move-{seed}", width=width, height=height, fps=fps, seed=seed,
        body=synth.BodySpec(shape="rectangle", width=body, height=body,
                            x=x0, y=y0,
                            texture_seed=seed + 3, texture_amplitude=120,
                            texture_smoothing=0),
        motion=(
            synth.MotionSegment(frames=pad_frames, vx=0.0, vy=0.0),
            synth.MotionSegment(frames=move_frames, vx=vx, vy=vy),
            synth.MotionSegment(frames=pad_frames, vx=0.0, vy=0.0),
        ),
        background_seed=seed + 11, background_amplitude=120, background_smoothing=0,
    )
