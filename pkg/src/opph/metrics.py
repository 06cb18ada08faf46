"""Speed metrics: mean body speed, RMSE, aggregates, windowed correlation.

The mean 2-D body motion speed of a frame pair is the average Euclidean
magnitude of the motion vectors over the body pixels (flow input) or over
the joints present in both frames (pose input). All arithmetic is float64.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCorrelationError, InvalidArgumentError
from .types import BodyMask, FlowField, PartMask, PoseTrack, SpeedSeries

log = logging.getLogger(__name__)


def flow_speed(flow: FlowField, mask: BodyMask) -> float:
    """Mean flow magnitude over the mask pixels, in pixels/frame.

    An empty mask yields 0.0 (an absent person contributes no motion) and
    logs a warning.
    """
    if flow.vectors.shape[:2] != mask.values.shape:
        raise InvalidArgumentError(
            f"flow {flow.vectors.shape[:2]} and mask {mask.values.shape} dimensions differ"
        )
    sel = mask.values.view(bool)
    n = int(np.count_nonzero(sel))
    if n == 0:
        log.warning("flow_speed: empty body mask, returning 0")
        return 0.0
    v = flow.vectors[sel]
    return float(np.hypot(v[:, 0], v[:, 1]).sum() / n)


def part_speeds(flow: FlowField, parts: PartMask) -> dict[int, float]:
    """Mean flow magnitude per body part label (1..num_parts).

    A label with no pixels maps to 0.0.
    """
    if flow.vectors.shape[:2] != parts.labels.shape:
        raise InvalidArgumentError(
            f"flow {flow.vectors.shape[:2]} and part mask {parts.labels.shape} dimensions differ"
        )
    mags = np.hypot(flow.vectors[..., 0], flow.vectors[..., 1])
    out: dict[int, float] = {}
    for k in range(1, parts.num_parts + 1):
        sel = parts.labels == k
        n = int(np.count_nonzero(sel))
        out[k] = float(mags[sel].sum() / n) if n else 0.0
    return out


def pose_speed(track: PoseTrack, t: int) -> float:
    """Mean joint displacement magnitude between frames t and t+1.

    Joints missing in either frame are excluded and the joint count reduced
    accordingly; if no joint is present in both frames the speed is 0.0.
    """
    if not (0 <= t < track.num_frames - 1):
        raise InvalidArgumentError(
            f"frame pair index {t} out of range for {track.num_frames} frames"
        )
    both = track.present[t] & track.present[t + 1]
    n = int(np.count_nonzero(both))
    if n == 0:
        return 0.0
    d = track.xy[t + 1, both] - track.xy[t, both]
    return float(np.hypot(d[:, 0], d[:, 1]).sum() / n)


def pose_speed_series(track: PoseTrack) -> SpeedSeries:
    """Speed series over all consecutive frame pairs of a pose track."""
    if track.num_frames < 2:
        raise InvalidArgumentError("pose track needs at least 2 frames for speeds")
    vals = [pose_speed(track, t) for t in range(track.num_frames - 1)]
    return SpeedSeries(np.array(vals), track.fps)


def rmse(est: SpeedSeries, gt: SpeedSeries) -> float:
    """Root mean squared difference between two aligned speed series."""
    if len(est) != len(gt):
        raise InvalidArgumentError(
            f"series lengths differ: {len(est)} vs {len(gt)}"
        )
    d = est.values - gt.values
    return float(np.sqrt(np.mean(d * d)))


def aggregate(per_video: list[float]) -> tuple[float, float]:
    """Dataset mean RMSE and the median RMSE with Tukey-fence outliers removed.

    Values outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR] are excluded before taking
    the median; if that somehow removes everything the plain median is used.
    """
    if not per_video:
        raise InvalidArgumentError("aggregate needs at least one RMSE value")
    arr = np.asarray(per_video, dtype=np.float64)
    mean = float(arr.mean())
    q1, q3 = np.percentile(arr, [25, 75])
    iqr = q3 - q1
    kept = arr[(arr >= q1 - 1.5 * iqr) & (arr <= q3 + 1.5 * iqr)]
    median = float(np.median(kept)) if kept.size else float(np.median(arr))
    return mean, median


@dataclass(frozen=True)
class RmseReport:
    """Per-video RMSE values plus dataset aggregates for one variant."""

    variant: str
    videos: tuple[str, ...]
    values: tuple[float, ...]
    mean_rmse: float = field(init=False)
    median_rmse: float = field(init=False)
    outliers_excluded: bool = field(init=False)

    def __post_init__(self):
        if len(self.videos) != len(self.values) or not self.values:
            raise InvalidArgumentError("report needs matching, non-empty video/value lists")
        if any(v < 0 or not math.isfinite(v) for v in self.values):
            raise InvalidArgumentError("RMSE values must be finite and >= 0")
        mean, median = aggregate(list(self.values))
        arr = np.asarray(self.values)
        q1, q3 = np.percentile(arr, [25, 75])
        iqr = q3 - q1
        excluded = bool(((arr < q1 - 1.5 * iqr) | (arr > q3 + 1.5 * iqr)).any())
        object.__setattr__(self, "mean_rmse", mean)
        object.__setattr__(self, "median_rmse", median)
        object.__setattr__(self, "outliers_excluded", excluded)


def pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient, clamped to [-1, 1].

    Raises DegenerateCorrelationError when either input has zero variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidArgumentError("pearson_r needs two equal-length series of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateCorrelationError("a series with zero variance has no correlation")
    r = float((dx * dy).sum() / (sx * sy))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CorrelationReport:
    """Windowed speed totals for two series and their Pearson r.

    ``est_windows``/``gt_windows`` hold the mean speed of each window scaled
    to pixels per window (mean pixels/frame times frames per window).
    """

    window_seconds: float
    frames_per_window: int
    est_windows: tuple[float, ...]
    gt_windows: tuple[float, ...]
    r: float

    def __post_init__(self):
        if len(self.est_windows) != len(self.gt_windows) or len(self.est_windows) < 2:
            raise InvalidArgumentError("correlation report needs >= 2 aligned windows")
        if not (-1.0 <= self.r <= 1.0):
            raise InvalidArgumentError(f"r must be in [-1, 1], got {self.r}")


def windowed_correlation(
    est: SpeedSeries, gt: SpeedSeries, window_seconds: float
) -> CorrelationReport:
    """Correlation of per-window motion totals between two speed series.

    The series are cut into consecutive windows of floor(window_seconds*fps)
    frames (a trailing partial window is dropped); each window contributes
    its summed speed in pixels per window. At least two complete windows are
    required.
    """
    if len(est) != len(gt):
        raise InvalidArgumentError(f"series lengths differ: {len(est)} vs {len(gt)}")
    if est.fps != gt.fps:
        raise InvalidArgumentError(f"series frame rates differ: {est.fps} vs {gt.fps}")
    fpw = int(window_seconds * est.fps)
    if fpw < 1:
        raise InvalidArgumentError(
            f"window of {window_seconds}s covers no frame at {est.fps} fps"
        )
    nwin = len(est) // fpw
    if nwin < 2:
        need = 2 * fpw
        raise InvalidArgumentError(
            f"need >= 2 complete windows ({need} frames), series has {len(est)}"
        )
    cut = nwin * fpw
    ew = est.values[:cut].reshape(nwin, fpw).sum(axis=1)
    gw = gt.values[:cut].reshape(nwin, fpw).sum(axis=1)
    r = pearson_r(ew, gw)
    return CorrelationReport(
        window_seconds=window_seconds,
        frames_per_window=fpw,
        est_windows=tuple(float(v) for v in ew),
        gt_windows=tuple(float(v) for v in gw),
        r=r,
    )


def speed_histogram(
    series: SpeedSeries, bin_width: float, max_speed: float
) -> list[tuple[float, float, int]]:
    """Histogram of a speed series as (low, high, count) bins.

    Regular bins are half-open [k*w, (k+1)*w) covering [0, max_speed); a
    value exactly on an edge lands in the upper bin. Values >= max_speed go
    to a final overflow bin (max_speed, inf). Counts always sum to the
    series length.
    """
    if not (bin_width > 0):
        raise InvalidArgumentError(f"bin width must be > 0, got {bin_width}")
    if not (max_speed > 0):
        raise InvalidArgumentError(f"max speed must be > 0, got {max_speed}")
    nbins = int(math.ceil(max_speed / bin_width))
    counts = [0] * (nbins + 1)
    for v in series.values:
        if v >= max_speed:
            counts[nbins] += 1
        else:
            k = min(int(v // bin_width), nbins - 1)
            counts[k] += 1
    bins = [(k * bin_width, (k + 1) * bin_width, counts[k]) for k in range(nbins)]
    bins.append((max_speed, math.inf, counts[nbins]))
    return bins
