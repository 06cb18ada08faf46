"""Built-in dense optical flow so the pipeline runs end-to-end on raw frames.

Coarse-to-fine iterative local least squares (Lucas-Kanade style) on the
rounded grayscale mean of the channels. This is deliberately simple plumbing:
the pipeline's claims concern the gate, not the flow backend, and any dense
estimator with documented accuracy would do. Internals run in float32 for
throughput; everything is deterministic.
"""

import numpy as np
from numba import njit

from ._median import sliding_median_2d
from .errors import InvalidArgumentError
from .types import FlowField, Frame

# A pixel is degenerate when the smaller eigenvalue of its window-averaged
# structure tensor (on intensities scaled to [0, 1]) falls below this; such
# pixels keep the estimate upsampled from the coarser level.
MIN_EIGENVALUE = 1e-4

# Damping added to the tensor diagonal before inversion, as a fraction of
# the trace. A raw inverse amplifies interpolation error by 1/lambda_min,
# which lets strongly anisotropic pixels drift one clamped step per
# iteration along their unconstrained direction; a trace-proportional floor
# bounds that amplification by ~1/(DAMPING*lambda_max) while costing
# well-conditioned pixels only ~10% convergence speed.
DAMPING = 0.05


@njit(cache=True, nogil=True)
def _gray_unit(pixels):
    """Grayscale as rint((R+G+B)/3) / 255, float32 in [0, 1]."""
    H, W, _ = pixels.shape
    out = np.empty((H, W), np.float32)
    for i in range(H):
        for j in range(W):
            s = (
                np.float64(pixels[i, j, 0])
                + np.float64(pixels[i, j, 1])
                + np.float64(pixels[i, j, 2])
            )
            out[i, j] = np.float32(np.rint(s / 3.0) / 255.0)
    return out


@njit(cache=True, nogil=True)
def _downsample2(a):
    """2x2 box mean; odd trailing rows/columns replicate the edge."""
    H, W = a.shape
    h = (H + 1) // 2
    w = (W + 1) // 2
    out = np.empty((h, w), np.float32)
    for i in range(h):
        i0 = 2 * i
        i1 = min(i0 + 1, H - 1)
        for j in range(w):
            j0 = 2 * j
            j1 = min(j0 + 1, W - 1)
            out[i, j] = np.float32(0.25) * (a[i0, j0] + a[i0, j1] + a[i1, j0] + a[i1, j1])
    return out


@njit(cache=True, nogil=True, inline="always")
def _box_cols(tmp, r, out):
    H, W = out.shape
    for j in range(W):
        acc = np.float32(0.0)
        for i in range(min(r + 1, H)):
            acc += tmp[i, j]
        out[0, j] = acc
        for i in range(1, H):
            hi = i + r
            if hi < H:
                acc += tmp[hi, j]
            lo = i - r - 1
            if lo >= 0:
                acc -= tmp[lo, j]
            out[i, j] = acc


@njit(cache=True, nogil=True)
def _box_sum_prod(a, b, r, tmp, out):
    """Window sum (clipped at the borders) of the elementwise product a*b."""
    H, W = a.shape
    for i in range(H):
        acc = np.float32(0.0)
        for j in range(min(r + 1, W)):
            acc += a[i, j] * b[i, j]
        tmp[i, 0] = acc
        for j in range(1, W):
            hi = j + r
            if hi < W:
                acc += a[i, hi] * b[i, hi]
            lo = j - r - 1
            if lo >= 0:
                acc -= a[i, lo] * b[i, lo]
            tmp[i, j] = acc
    _box_cols(tmp, r, out)


@njit(cache=True, nogil=True)
def _lk_refine(A, B, u, v, win, iters, tol, min_eig):
    """Iteratively refine the flow (u, v) from A to B at one pyramid level."""
    H, W = A.shape
    r = win // 2

    Ix = np.empty((H, W), np.float32)
    Iy = np.empty((H, W), np.float32)
    for i in range(H):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < H - 1 else H - 1
        for j in range(W):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < W - 1 else W - 1
            Ix[i, j] = np.float32(0.5) * (A[i, jp] - A[i, jm])
            Iy[i, j] = np.float32(0.5) * (A[ip, j] - A[im, j])

    cnt_x = np.empty(W, np.float32)
    for j in range(W):
        cnt_x[j] = min(W - 1, j + r) - max(0, j - r) + 1
    cnt_y = np.empty(H, np.float32)
    for i in range(H):
        cnt_y[i] = min(H - 1, i + r) - max(0, i - r) + 1

    tmp = np.empty((H, W), np.float32)
    sxx = np.empty((H, W), np.float32)
    sxy = np.empty((H, W), np.float32)
    syy = np.empty((H, W), np.float32)
    _box_sum_prod(Ix, Ix, r, tmp, sxx)
    _box_sum_prod(Ix, Iy, r, tmp, sxy)
    _box_sum_prod(Iy, Iy, r, tmp, syy)

    # Reuse sxx/sxy/syy as the rows of the inverted (window-mean) tensor.
    ok = np.empty((H, W), np.uint8)
    damp = np.float32(DAMPING)
    for i in range(H):
        for j in range(W):
            inv_cnt = np.float32(1.0) / (cnt_y[i] * cnt_x[j])
            a = sxx[i, j] * inv_cnt
            b = sxy[i, j] * inv_cnt
            c = syy[i, j] * inv_cnt
            tr = a + c
            d = a - c
            disc = np.sqrt(d * d + np.float32(4.0) * b * b)
            lmin = np.float32(0.5) * (tr - disc)
            if lmin < min_eig:
                ok[i, j] = 0
                sxx[i, j] = 0.0
                sxy[i, j] = 0.0
                syy[i, j] = 0.0
            else:
                ok[i, j] = 1
                floor = damp * tr
                a += floor
                c += floor
                det = a * c - b * b
                sxx[i, j] = c / det
                sxy[i, j] = -b / det
                syy[i, j] = a / det

    It = np.empty((H, W), np.float32)
    bx = np.empty((H, W), np.float32)
    by = np.empty((H, W), np.float32)
    for _ in range(iters):
        for i in range(H):
            for j in range(W):
                x = j + u[i, j]
                y = i + v[i, j]
                if x < 0.0 or x > W - 1 or y < 0.0 or y > H - 1:
                    # a sample outside the frame carries no evidence; clamping
                    # instead would fabricate differences that leak inward
                    # through the window sums, one half-window per iteration
                    It[i, j] = 0.0
                    continue
                x0 = int(x)
                y0 = int(y)
                x1 = x0 + 1 if x0 < W - 1 else x0
                y1 = y0 + 1 if y0 < H - 1 else y0
                fx = x - x0
                fy = y - y0
                warped = (
                    (np.float32(1.0) - fy)
                    * ((np.float32(1.0) - fx) * B[y0, x0] + fx * B[y0, x1])
                    + fy * ((np.float32(1.0) - fx) * B[y1, x0] + fx * B[y1, x1])
                )
                It[i, j] = warped - A[i, j]
        _box_sum_prod(Ix, It, r, tmp, bx)
        _box_sum_prod(Iy, It, r, tmp, by)
        total = 0.0
        one = np.float32(1.0)
        for i in range(H):
            for j in range(W):
                if ok[i, j] == 0:
                    continue
                inv_cnt = one / (cnt_y[i] * cnt_x[j])
                gx = bx[i, j] * inv_cnt
                gy = by[i, j] * inv_cnt
                du = -(sxx[i, j] * gx + sxy[i, j] * gy)
                dv = -(sxy[i, j] * gx + syy[i, j] * gy)
                # updates beyond 1 px/iteration are outside the linearization
                # range and would let ill-conditioned pixels run away
                if du > one:
                    du = one
                elif du < -one:
                    du = -one
                if dv > one:
                    dv = one
                elif dv < -one:
                    dv = -one
                u[i, j] += du
                v[i, j] += dv
                total += abs(np.float64(du)) + abs(np.float64(dv))
        if total < tol * H * W:
            break


@njit(cache=True, nogil=True)
def _upsample2(src, H, W):
    """Nearest-neighbor upsample of a flow component with values doubled."""
    out = np.empty((H, W), np.float32)
    sh, sw = src.shape
    for i in range(H):
        si = i // 2
        if si >= sh:
            si = sh - 1
        for j in range(W):
            sj = j // 2
            if sj >= sw:
                sj = sw - 1
            out[i, j] = np.float32(2.0) * src[si, sj]
    return out


def dense_flow(
    frame_a: Frame,
    frame_b: Frame,
    levels: int = 3,
    window: int = 15,
    iters: int = 3,
    tol: float = 1e-3,
) -> FlowField:
    """Dense flow from frame_a to frame_b, pixels/frame.

    Args:
        levels: pyramid depth; coarser levels are dropped once they get
            smaller than the window.
        window: odd side of the local least-squares window.
        iters: refinement iterations per level (fewer run when the mean
            absolute update falls below ``tol`` pixels).

    Degenerate pixels (structure tensor eigenvalue below MIN_EIGENVALUE)
    keep the estimate upsampled from the coarser level.
    """
    if frame_a.pixels.shape != frame_b.pixels.shape:
        raise InvalidArgumentError(
            f"frame dimensions differ: {frame_a.pixels.shape} vs {frame_b.pixels.shape}"
        )
    if levels < 1:
        raise InvalidArgumentError(f"levels must be >= 1, got {levels}")
    if window < 3 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be odd and >= 3, got {window}")
    if iters < 1:
        raise InvalidArgumentError(f"iters must be >= 1, got {iters}")
    if not (tol >= 0):
        raise InvalidArgumentError(f"tol must be >= 0, got {tol}")

    a = _gray_unit(frame_a.pixels)
    b = _gray_unit(frame_b.pixels)
    pyr_a = [a]
    pyr_b = [b]
    for _ in range(levels - 1):
        nh = (pyr_a[-1].shape[0] + 1) // 2
        nw = (pyr_a[-1].shape[1] + 1) // 2
        # a level needs a border-clean interior (at least a window's worth of
        # rows between the two window-wide border zones) or its estimates wander
        if min(nh, nw) < 3 * window:
            break
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))

    u = np.zeros(pyr_a[-1].shape, np.float32)
    v = np.zeros(pyr_a[-1].shape, np.float32)
    for lvl in range(len(pyr_a) - 1, -1, -1):
        if lvl < len(pyr_a) - 1:
            H, W = pyr_a[lvl].shape
            # Upsampling = nearest-neighbor x2 plus a 3x3 median clean-up;
            # stray coarse estimates would seed divergence at the next level.
            u = sliding_median_2d(_upsample2(u, H, W), 3, "replicate").astype(np.float32)
            v = sliding_median_2d(_upsample2(v, H, W), 3, "replicate").astype(np.float32)
        _lk_refine(
            pyr_a[lvl], pyr_b[lvl], u, v, window, iters,
            np.float64(tol), np.float32(MIN_EIGENVALUE),
        )
    return FlowField(np.stack([u, v], axis=-1).astype(np.float64))
