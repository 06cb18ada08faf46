"""Baseline denoising filters for the motion field comparison.

Median, bilateral and total-variation smoothing operate per flow component
on the dense motion field; the Kalman filter smooths the scalar speed
series. Parameter defaults follow the comparison harness configuration:
median n=3, bilateral sigma_s=3 px / sigma_r=1 px/frame, TV weight 0.1 with
100 iterations, Kalman process variance 1e-4 / measurement variance 1e-2.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._median import sliding_median_2d
from .errors import InvalidArgumentError
from .types import FlowField, SpeedSeries

# Range weights use an interpolated exp(-x) table over x in [0, 30); larger
# exponents underflow to 0 (true value < 1e-13). Worst-case absolute weight
# error is below 2e-6, far under the filter's own discretization effects.
_EXP_BINS = 8192
_EXP_XMAX = 30.0
_EXP_TABLE = np.exp(-np.linspace(0.0, _EXP_XMAX, _EXP_BINS + 1))
_EXP_SCALE = _EXP_BINS / _EXP_XMAX


@njit(cache=True, nogil=True)
def _bilateral_kernel(u, v, radius, inv2ss, inv2sr, exp_table, exp_scale, exp_xmax,
                      out_u, out_v):
    H, W = u.shape
    side = 2 * radius + 1
    spatial = np.empty((side, side))
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            spatial[di + radius, dj + radius] = math.exp(-(di * di + dj * dj) * inv2ss)
    nbins = exp_table.shape[0] - 1
    for i in range(H):
        for j in range(W):
            uc = u[i, j]
            vc = v[i, j]
            wsum = 0.0
            usum = 0.0
            vsum = 0.0
            for di in range(-radius, radius + 1):
                ii = i + di
                if ii < 0 or ii >= H:
                    continue
                for dj in range(-radius, radius + 1):
                    jj = j + dj
                    if jj < 0 or jj >= W:
                        continue
                    du = u[ii, jj] - uc
                    dv = v[ii, jj] - vc
                    x = (du * du + dv * dv) * inv2sr
                    if x >= exp_xmax:
                        continue
                    pos = x * exp_scale
                    k = int(pos)
                    if k >= nbins:
                        k = nbins - 1
                    frac = pos - k
                    w = spatial[di + radius, dj + radius] * (
                        exp_table[k] * (1.0 - frac) + exp_table[k + 1] * frac
                    )
                    wsum += w
                    usum += w * u[ii, jj]
                    vsum += w * v[ii, jj]
            out_u[i, j] = usum / wsum
            out_v[i, j] = vsum / wsum


@njit(cache=True, nogil=True)
def _tv_dual_iterate(f, lam, iters, tau):
    """Dual projection iterations for the per-component ROF model.

    Minimizes ||u - f||^2 / (2*lam) + TV(u) approximately; returns u after
    ``iters`` steps of p <- (p + tau*grad(div p - f/lam)) / (1 + tau*|grad|).
    """
    H, W = f.shape
    px = np.zeros((H, W))
    py = np.zeros((H, W))
    div = np.zeros((H, W))
    for _ in range(iters):
        for i in range(H):
            for j in range(W):
                d = 0.0
                if j < W - 1:
                    d += px[i, j]
                if j > 0:
                    d -= px[i, j - 1]
                if i < H - 1:
                    d += py[i, j]
                if i > 0:
                    d -= py[i - 1, j]
                div[i, j] = d - f[i, j] / lam
        for i in range(H):
            for j in range(W):
                gx = div[i, j + 1] - div[i, j] if j < W - 1 else 0.0
                gy = div[i + 1, j] - div[i, j] if i < H - 1 else 0.0
                nx = px[i, j] + tau * gx
                ny = py[i, j] + tau * gy
                denom = 1.0 + tau * math.sqrt(gx * gx + gy * gy)
                px[i, j] = nx / denom
                py[i, j] = ny / denom
    u = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            d = 0.0
            if j < W - 1:
                d += px[i, j]
            if j > 0:
                d -= px[i, j - 1]
            if i < H - 1:
                d += py[i, j]
            if i > 0:
                d -= py[i - 1, j]
            u[i, j] = f[i, j] - lam * d
    return u


def median_flow(flow: FlowField, n: int) -> FlowField:
    """Per-component n x n spatial median with replicate border padding."""
    u = sliding_median_2d(flow.vectors[..., 0], n, "replicate")
    v = sliding_median_2d(flow.vectors[..., 1], n, "replicate")
    return FlowField(np.stack([u, v], axis=-1))


def bilateral_flow(flow: FlowField, sigma_s: float, sigma_r: float) -> FlowField:
    """Edge-preserving smoothing of the motion field.

    Weights combine a spatial Gaussian (std sigma_s, window truncated at
    radius ceil(3*sigma_s)) with a range Gaussian on the flow-vector
    difference norm (std sigma_r). Normalization runs over the in-bounds
    neighbors, so a constant field passes through unchanged.
    """
    if not (sigma_s > 0) or not (sigma_r > 0):
        raise InvalidArgumentError(
            f"bilateral sigmas must be > 0, got sigma_s={sigma_s}, sigma_r={sigma_r}"
        )
    radius = int(math.ceil(3.0 * sigma_s))
    u = np.ascontiguousarray(flow.vectors[..., 0])
    v = np.ascontiguousarray(flow.vectors[..., 1])
    out_u = np.empty_like(u)
    out_v = np.empty_like(v)
    _bilateral_kernel(
        u, v, radius,
        1.0 / (2.0 * sigma_s * sigma_s),
        1.0 / (2.0 * sigma_r * sigma_r),
        _EXP_TABLE, _EXP_SCALE, _EXP_XMAX, out_u, out_v,
    )
    return FlowField(np.stack([out_u, out_v], axis=-1))


def tv_flow(flow: FlowField, weight: float, iters: int) -> FlowField:
    """Total-variation smoothing of the motion field (per component).

    Runs ``iters`` dual projection steps with step size 0.25 toward the
    minimizer of ||u - f||^2 / (2*weight) + TV(u).
    """
    if not (weight > 0):
        raise InvalidArgumentError(f"tv weight must be > 0, got {weight}")
    if iters < 1:
        raise InvalidArgumentError(f"tv iterations must be >= 1, got {iters}")
    u = _tv_dual_iterate(np.ascontiguousarray(flow.vectors[..., 0]), weight, iters, 0.25)
    v = _tv_dual_iterate(np.ascontiguousarray(flow.vectors[..., 1]), weight, iters, 0.25)
    return FlowField(np.stack([u, v], axis=-1))


def tv_objective(smoothed: FlowField, original: FlowField, weight: float) -> float:
    """ROF objective of a smoothed field: fidelity/(2*weight) + total variation.

    Summed over both flow components with forward-difference gradients, the
    quantity the dual iteration drives down.
    """
    total = 0.0
    for c in range(2):
        u = smoothed.vectors[..., c]
        f = original.vectors[..., c]
        gx = np.zeros_like(u)
        gy = np.zeros_like(u)
        gx[:, :-1] = u[:, 1:] - u[:, :-1]
        gy[:-1, :] = u[1:, :] - u[:-1, :]
        total += float(((u - f) ** 2).sum()) / (2.0 * weight)
        total += float(np.sqrt(gx * gx + gy * gy).sum())
    return total


def kalman_speed(series: SpeedSeries, q: float, r: float) -> SpeedSeries:
    """Constant-position 1-D Kalman smoothing of a speed series.

    The state starts at the first observation with variance r; each step
    adds process variance q before blending in the next observation. The
    emitted values are clamped at 0.
    """
    if not (q > 0) or not (r > 0):
        raise InvalidArgumentError(f"variances must be > 0, got q={q}, r={r}")
    z = series.values
    out = np.empty_like(z)
    x = z[0]
    p = r
    out[0] = max(x, 0.0)
    for t in range(1, z.size):
        p = p + q
        k = p / (p + r)
        x = x + k * (z[t] - x)
        p = (1.0 - k) * p
        out[t] = max(x, 0.0)
    return SpeedSeries(out, series.fps)


_KINDS = ("median", "bilateral", "tv", "kalman")


@dataclass(frozen=True)
class FilterSpec:
    """One configured baseline filter.

    kind selects the algorithm; only the parameters for that kind matter.
    ``label()`` round-trips through ``parse()`` and is embedded in reports so
    every run is self-describing.
    """

    kind: str
    window: int = 3
    sigma_s: float = 3.0
    sigma_r: float = 1.0
    tv_weight: float = 0.1
    tv_iters: int = 100
    q: float = 1e-4
    r: float = 1e-2

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgumentError(
                f"unknown filter kind {self.kind!r}; expected one of {_KINDS}"
            )
        if self.kind == "median" and (self.window < 1 or self.window % 2 == 0):
            raise InvalidArgumentError(f"median window must be odd, got {self.window}")
        if self.kind == "bilateral" and (self.sigma_s <= 0 or self.sigma_r <= 0):
            raise InvalidArgumentError("bilateral sigmas must be > 0")
        if self.kind == "tv" and (self.tv_weight <= 0 or self.tv_iters < 1):
            raise InvalidArgumentError("tv needs weight > 0 and iterations >= 1")
        if self.kind == "kalman" and (self.q <= 0 or self.r <= 0):
            raise InvalidArgumentError("kalman variances must be > 0")

    @property
    def smooths_flow(self) -> bool:
        """True for filters applied to the motion field (not the speed series)."""
        return self.kind != "kalman"

    def label(self) -> str:
        if self.kind == "median":
            return f"median:{self.window}"
        if self.kind == "bilateral":
            return f"bilateral:{self.sigma_s:g},{self.sigma_r:g}"
        if self.kind == "tv":
            return f"tv:{self.tv_weight:g},{self.tv_iters}"
        return f"kalman:{self.q:g},{self.r:g}"

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse "kind" or "kind:params" (e.g. "median:5", "tv:0.1,30")."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip()
        if kind not in _KINDS:
            raise InvalidArgumentError(
                f"unknown filter kind {kind!r} in {text!r}; expected one of {_KINDS}"
            )
        if not rest:
            return cls(kind=kind)
        parts = [p.strip() for p in rest.split(",")]
        try:
            if kind == "median":
                (w,) = parts
                return cls(kind=kind, window=int(w))
            if kind == "bilateral":
                ss, sr = parts
                return cls(kind=kind, sigma_s=float(ss), sigma_r=float(sr))
            if kind == "tv":
                lam, it = parts
                return cls(kind=kind, tv_weight=float(lam), tv_iters=int(it))
            q, r = parts
            return cls(kind=kind, q=float(q), r=float(r))
        except (ValueError, TypeError) as exc:
            raise InvalidArgumentError(f"bad parameters for filter {text!r}: {exc}") from exc

    def apply_flow(self, flow: FlowField) -> FlowField:
        if self.kind == "median":
            return median_flow(flow, self.window)
        if self.kind == "bilateral":
            return bilateral_flow(flow, self.sigma_s, self.sigma_r)
        if self.kind == "tv":
            return tv_flow(flow, self.tv_weight, self.tv_iters)
        raise InvalidArgumentError(f"filter {self.kind} does not apply to flow fields")

    def apply_series(self, series: SpeedSeries) -> SpeedSeries:
        if self.kind == "kalman":
            return kalman_speed(series, self.q, self.r)
        raise InvalidArgumentError(f"filter {self.kind} does not apply to speed series")
