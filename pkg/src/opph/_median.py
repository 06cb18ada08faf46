"""Shared sliding-window median kernel.

Both the binary change-image median in :mod:`opph.gate` and the per-component
flow median in :mod:`opph.filters` go through :func:`sliding_median_2d`, so a
single implementation (and a single brute-force oracle in the tests) covers
both. The caller chooses the border mode; binary uint8 inputs take an exact
counting shortcut (the median of 0/1 values is 1 iff the window holds more
ones than half its size), float inputs sort each window.
"""

import numpy as np
from numba import njit

from .errors import InvalidArgumentError


@njit(cache=True, nogil=True)
def _window_count_valid(padded, n, out):
    """out[i, j] = sum of the n*n window of ``padded`` at offset (i, j)."""
    H, W = out.shape
    rowsum = np.empty((H + n - 1, W), np.int32)
    for i in range(H + n - 1):
        acc = 0
        for j in range(n):
            acc += padded[i, j]
        rowsum[i, 0] = acc
        for j in range(1, W):
            acc += padded[i, j + n - 1] - padded[i, j - 1]
            rowsum[i, j] = acc
    for j in range(W):
        acc = 0
        for i in range(n):
            acc += rowsum[i, j]
        out[0, j] = acc
        for i in range(1, H):
            acc += rowsum[i + n - 1, j] - rowsum[i - 1, j]
            out[i, j] = acc


@njit(cache=True, nogil=True)
def _window_median_valid(padded, n, out):
    """out[i, j] = median of the n*n window of ``padded`` at offset (i, j)."""
    H, W = out.shape
    k = n * n
    mid = k // 2
    buf = np.empty(k, padded.dtype)
    for i in range(H):
        for j in range(W):
            idx = 0
            for di in range(n):
                for dj in range(n):
                    buf[idx] = padded[i + di, j + dj]
                    idx += 1
            # insertion sort: windows are tiny (9..49 values) and a library
            # sort call per pixel dominates the whole filter
            for a in range(1, k):
                key = buf[a]
                b = a - 1
                while b >= 0 and buf[b] > key:
                    buf[b + 1] = buf[b]
                    b -= 1
                buf[b + 1] = key
            out[i, j] = buf[mid]


def _check_window(arr: np.ndarray, n: int) -> None:
    if n < 1 or n % 2 == 0:
        raise InvalidArgumentError(f"median window side must be odd and >= 1, got {n}")
    if n > min(arr.shape[:2]):
        raise InvalidArgumentError(
            f"median window {n} exceeds image size {arr.shape[1]}x{arr.shape[0]}"
        )


def sliding_median_2d(arr: np.ndarray, n: int, border: str) -> np.ndarray:
    """Centered n x n sliding median of a 2-D array.

    border: "zero" pads with zeros outside the image, "replicate" extends the
    edge values. Binary uint8 input uses the exact counting form; anything
    else is treated as float64 and sorted per window.
    """
    _check_window(arr, n)
    if border not in ("zero", "replicate"):
        raise InvalidArgumentError(f"unknown border mode {border!r}")
    if n == 1:
        return arr.copy()
    h = n // 2
    mode = "constant" if border == "zero" else "edge"
    if arr.dtype == np.uint8:
        padded = np.pad(arr, h, mode=mode)
        counts = np.empty(arr.shape, np.int32)
        _window_count_valid(padded, n, counts)
        return (counts > (n * n) // 2).astype(np.uint8)
    padded = np.pad(np.ascontiguousarray(arr, dtype=np.float64), h, mode=mode)
    out = np.empty(arr.shape, np.float64)
    _window_median_valid(padded, n, out)
    return out
