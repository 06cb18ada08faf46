"""End-to-end orchestration: sequences, speed sources, variants, benchmarks.

A Sequence bundles the in-memory inputs of one video. Speeds come from one
of three sources: pre-computed flow files, pose displacements, or the
built-in dense flow. The gate always derives from the frames and masks. The
evaluation entry points stream frame pairs so full-resolution flow for a
whole video never sits in memory at once.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gate as gate_mod
from .errors import InvalidArgumentError
from .filters import FilterSpec
from .flow import dense_flow
from .formats import SequenceManifest, read_flo, read_frames, read_gt_speed, read_mask, read_pose
from .metrics import CorrelationReport, RmseReport, flow_speed, pose_speed, rmse, windowed_correlation
from .types import BodyMask, Frame, FlowField, GateSignal, OpphConfig, SpeedSeries, default_config

log = logging.getLogger(__name__)

SOURCES = ("flo", "pose", "builtin-flow")


@dataclass(frozen=True)
class FlowParams:
    """Parameters of the built-in dense flow backend."""

    levels: int = 3
    window: int = 15
    iters: int = 3
    tol: float = 1e-3


def _filter_reach(spec: FilterSpec) -> int:
    """How far (pixels) a filter's output can depend on its input."""
    if spec.kind == "median":
        return spec.window // 2
    if spec.kind == "bilateral":
        return int(np.ceil(3.0 * spec.sigma_s))
    if spec.kind == "tv":
        return spec.tv_iters  # dual variables propagate one cell per iteration
    return 0


def _cropped_pair_speeds(
    frame_a: Frame,
    frame_b: Frame,
    mask_arr: np.ndarray,
    flow_params: "FlowParams",
    flow_filters: list[FilterSpec],
) -> tuple[float, dict[str, float]]:
    """Raw and filtered speeds of one pair with flow restricted to the mask
    bounding box grown by the flow window, the iteration spread and the
    filters' reach.

    With a single pyramid level every mask pixel's estimate only depends on
    image content within that margin, so for a fixed iteration count (tol=0)
    the result matches the full-frame computation to float32 accumulation
    noise (~1e-6 px; the running window sums traverse different extents).
    The adaptive early exit can additionally change iteration counts between
    the two modes.
    """
    rows = np.flatnonzero(mask_arr.any(axis=1))
    labels = [f.label() for f in flow_filters]
    if rows.size == 0:
        log.warning("empty mask for a frame pair; speeds default to 0")
        return 0.0, {k: 0.0 for k in labels}
    cols = np.flatnonzero(mask_arr.any(axis=0))
    margin = (
        flow_params.window
        + (flow_params.window // 2 + 2) * flow_params.iters
        + 8
        + max((_filter_reach(f) for f in flow_filters), default=0)
    )
    H, W = mask_arr.shape
    r0 = max(int(rows[0]) - margin, 0)
    r1 = min(int(rows[-1]) + margin, H - 1)
    c0 = max(int(cols[0]) - margin, 0)
    c1 = min(int(cols[-1]) + margin, W - 1)
    fa = Frame(frame_a.pixels[r0 : r1 + 1, c0 : c1 + 1], frame_a.index, frame_a.fps)
    fb = Frame(frame_b.pixels[r0 : r1 + 1, c0 : c1 + 1], frame_b.index, frame_b.fps)
    fl = dense_flow(fa, fb, flow_params.levels, flow_params.window,
                    flow_params.iters, flow_params.tol)
    mask = BodyMask(mask_arr[r0 : r1 + 1, c0 : c1 + 1])
    raw = flow_speed(fl, mask)
    return raw, {f.label(): flow_speed(f.apply_flow(fl), mask) for f in flow_filters}


class _FloFiles:
    """Flow fields backed by .flo files, read on demand."""

    def __init__(self, paths):
        self._paths = list(paths)

    def __len__(self):
        return len(self._paths)

    def __getitem__(self, t: int) -> FlowField:
        return read_flo(self._paths[t].read_bytes())


@dataclass
class Sequence:
    """One video's in-memory inputs."""

    identifier: str
    fps: float
    frames: list[Frame] | None = None
    masks: list[BodyMask] | None = None
    flows: object | None = None  # indexable collection of FlowField
    pose: object | None = None  # PoseTrack
    gt_speed: SpeedSeries | None = None

    @property
    def num_frames(self) -> int:
        if self.frames is not None:
            return len(self.frames)
        if self.flows is not None:
            return len(self.flows) + 1
        if self.pose is not None:
            return self.pose.num_frames
        raise InvalidArgumentError(f"sequence {self.identifier} has no frame-bearing input")


def load_sequence(manifest: SequenceManifest, need_frames: bool = True) -> Sequence:
    """Materialize a manifest: decode frames and masks, reference flow files
    lazily, parse pose and ground truth when present."""
    frames = read_frames(manifest) if (need_frames and manifest.frames) else None
    masks = [read_mask(manifest.path(p)) for p in manifest.masks] or None
    flows = _FloFiles([manifest.path(p) for p in manifest.flows]) if manifest.flows else None
    pose = read_pose(manifest.path(manifest.pose), manifest.fps) if manifest.pose else None
    gt = read_gt_speed(manifest.path(manifest.gt_speed), manifest.fps) if manifest.gt_speed else None
    return Sequence(
        identifier=manifest.identifier, fps=manifest.fps,
        frames=frames, masks=masks, flows=flows, pose=pose, gt_speed=gt,
    )


def _speed_masks(seq: Sequence, n_pairs: int, shape: tuple[int, int]) -> list[np.ndarray]:
    """Mask used for averaging the motion field of pair t.

    Per-frame masks align as mask[t] for pair t (the flow describes where
    frame t's pixels go); per-pair masks are used as given. Without masks the
    whole frame counts, with a warning.
    """
    if seq.masks is None:
        log.warning("sequence %s has no masks; averaging over the full frame", seq.identifier)
        full = np.ones(shape, np.uint8)
        return [full] * n_pairs
    arrs = [m.values for m in seq.masks]
    if len(arrs) == n_pairs + 1:
        return arrs[:n_pairs]
    if len(arrs) == n_pairs:
        return arrs
    raise InvalidArgumentError(
        f"sequence {seq.identifier}: {len(arrs)} masks for {n_pairs} frame pairs"
    )


@dataclass
class RunResult:
    """Speeds and gate of one sequence run."""

    identifier: str
    raw: SpeedSeries
    gate: GateSignal | None = None
    gated: SpeedSeries | None = None
    filtered: dict[str, SpeedSeries] = field(default_factory=dict)


def run_sequence(
    seq: Sequence,
    source: str,
    cfg: OpphConfig | None = None,
    flow_params: FlowParams = FlowParams(),
    filters: tuple[FilterSpec, ...] = (),
    with_opph: bool = True,
    stream: bool = False,
    flow_crop: bool = True,
) -> RunResult:
    """Compute raw, gated and filter-smoothed speed series for one sequence.

    Flow filters need a flow-bearing source; the Kalman filter smooths the
    raw speed series whatever the source. With ``flow_crop`` (single-level
    flow and masks present) the built-in flow runs on the mask neighborhood
    only; see _cropped_pair_speeds.
    """
    if source not in SOURCES:
        raise InvalidArgumentError(f"unknown source {source!r}; expected one of {SOURCES}")
    flow_filters = [f for f in filters if f.smooths_flow]
    series_filters = [f for f in filters if not f.smooths_flow]

    if source == "pose":
        if seq.pose is None:
            raise InvalidArgumentError(f"sequence {seq.identifier} has no pose input")
        if flow_filters:
            raise InvalidArgumentError(
                "flow filters cannot run on the pose source: "
                + ", ".join(f.label() for f in flow_filters)
            )
        n_pairs = seq.pose.num_frames - 1
        if n_pairs < 1:
            raise InvalidArgumentError(f"sequence {seq.identifier}: pose has a single frame")
        raw_vals = np.array([pose_speed(seq.pose, t) for t in range(n_pairs)])
    else:
        if source == "flo":
            if seq.flows is None:
                raise InvalidArgumentError(f"sequence {seq.identifier} has no flow files")
            n_pairs = len(seq.flows)
            get_flow = lambda t: seq.flows[t]
            shape = None
        else:
            if seq.frames is None or len(seq.frames) < 2:
                raise InvalidArgumentError(
                    f"sequence {seq.identifier} needs >= 2 frames for the built-in flow"
                )
            n_pairs = len(seq.frames) - 1
            get_flow = lambda t: dense_flow(
                seq.frames[t], seq.frames[t + 1],
                flow_params.levels, flow_params.window, flow_params.iters, flow_params.tol,
            )
            shape = (seq.frames[0].height, seq.frames[0].width)
        use_crop = (
            flow_crop
            and source == "builtin-flow"
            and flow_params.levels == 1
            and seq.masks is not None
        )
        raw_vals = np.empty(n_pairs)
        filt_vals = {f.label(): np.empty(n_pairs) for f in flow_filters}
        if use_crop:
            speed_masks = _speed_masks(seq, n_pairs, shape)
            for t in range(n_pairs):
                raw_vals[t], per_filter = _cropped_pair_speeds(
                    seq.frames[t], seq.frames[t + 1], speed_masks[t],
                    flow_params, flow_filters,
                )
                for label, value in per_filter.items():
                    filt_vals[label][t] = value
        else:
            first = get_flow(0)
            if shape is None:
                shape = (first.height, first.width)
            speed_masks = _speed_masks(seq, n_pairs, shape)
            for t in range(n_pairs):
                fl = first if t == 0 else get_flow(t)
                mask = BodyMask(speed_masks[t])
                raw_vals[t] = flow_speed(fl, mask)
                for f in flow_filters:
                    filt_vals[f.label()][t] = flow_speed(f.apply_flow(fl), mask)
            first = None

    raw = SpeedSeries(raw_vals, seq.fps)
    result = RunResult(identifier=seq.identifier, raw=raw)
    if source != "pose":
        result.filtered = {k: SpeedSeries(v, seq.fps) for k, v in filt_vals.items()}
    for f in series_filters:
        result.filtered[f.label()] = f.apply_series(raw)

    if with_opph:
        if seq.frames is None:
            raise InvalidArgumentError(
                f"sequence {seq.identifier} needs frames to compute the gate"
            )
        if len(seq.frames) - 1 != n_pairs:
            raise InvalidArgumentError(
                f"sequence {seq.identifier}: {len(seq.frames)} frames do not match "
                f"{n_pairs} speed pairs"
            )
        cfg = cfg or default_config(seq.frames[0].width, seq.frames[0].height, seq.fps)
        gate_masks = seq.masks
        if gate_masks is None:
            full = np.ones((seq.frames[0].height, seq.frames[0].width), np.uint8)
            gate_masks = [full] * n_pairs
        result.gated, result.gate = gate_mod.run_opph(
            seq.frames, gate_masks, raw, cfg, stream=stream
        )
    return result


def _require_gt(seq: Sequence) -> SpeedSeries:
    if seq.gt_speed is None:
        raise InvalidArgumentError(f"sequence {seq.identifier} has no ground-truth speeds")
    return seq.gt_speed


def evaluate_dataset(
    seqs: list[Sequence],
    source: str,
    cfg: OpphConfig | None = None,
    flow_params: FlowParams = FlowParams(),
    filters: tuple[FilterSpec, ...] = (),
    with_opph: bool = True,
    jobs: int = 1,
) -> list[RmseReport]:
    """Per-video RMSE against ground truth for every variant.

    Variants are "raw", "opph" (when enabled) and one per filter; videos are
    reported in lexicographic identifier order. Results do not depend on the
    level of parallelism.
    """
    if not seqs:
        raise InvalidArgumentError("evaluate_dataset needs at least one sequence")
    ordered = sorted(seqs, key=lambda s: s.identifier)

    def one(seq: Sequence) -> dict[str, float]:
        gt = _require_gt(seq)
        res = run_sequence(seq, source, cfg, flow_params, filters, with_opph)
        out = {"raw": rmse(res.raw, gt)}
        if with_opph:
            out["opph"] = rmse(res.gated, gt)
        for label, series in res.filtered.items():
            out[label] = rmse(series, gt)
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, ordered))
    else:
        rows = [one(s) for s in ordered]

    videos = tuple(s.identifier for s in ordered)
    variants = ["raw"] + (["opph"] if with_opph else []) + [f.label() for f in filters]
    return [
        RmseReport(variant=v, videos=videos, values=tuple(row[v] for row in rows))
        for v in variants
    ]


def correlate_dataset(
    seqs: list[Sequence],
    source: str,
    windows_seconds: list[float],
    cfg: OpphConfig | None = None,
    flow_params: FlowParams = FlowParams(),
    with_opph: bool = True,
    jobs: int = 1,
) -> list[tuple[str, CorrelationReport]]:
    """Windowed correlation between estimate and ground truth.

    Videos are stacked in lexicographic identifier order into one long
    series per variant before windowing; all sequences must share one frame
    rate. Returns (variant, report) pairs for every window length.
    """
    if not seqs:
        raise InvalidArgumentError("correlate_dataset needs at least one sequence")
    if not windows_seconds:
        raise InvalidArgumentError("need at least one window length")
    ordered = sorted(seqs, key=lambda s: s.identifier)
    fps = ordered[0].fps
    for s in ordered:
        if s.fps != fps:
            raise InvalidArgumentError(
                f"mixed frame rates in dataset: {fps} vs {s.fps} ({s.identifier})"
            )

    def one(seq: Sequence):
        gt = _require_gt(seq)
        res = run_sequence(seq, source, cfg, flow_params, (), with_opph)
        return res, gt

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, ordered))
    else:
        rows = [one(s) for s in ordered]

    gt_all = SpeedSeries(np.concatenate([gt.values for _, gt in rows]), fps)
    stacked = {"raw": SpeedSeries(np.concatenate([r.raw.values for r, _ in rows]), fps)}
    if with_opph:
        stacked["opph"] = SpeedSeries(np.concatenate([r.gated.values for r, _ in rows]), fps)

    out: list[tuple[str, CorrelationReport]] = []
    for window in windows_seconds:
        for variant, est in stacked.items():
            out.append((variant, windowed_correlation(est, gt_all, window)))
    return out


def bench_stages(
    width: int = 640,
    height: int = 480,
    frames: int = 110,
    warmup: int = 10,
    cfg: OpphConfig | None = None,
) -> dict[str, float]:
    """Median per-frame wall time of each gate stage, in milliseconds.

    Runs on a synthetic moving texture with an all-ones mask so every stage
    touches the full frame (no bounding-box shortcut). The first ``warmup``
    frames are discarded.
    """
    from . import synth

    if frames < 1:
        raise InvalidArgumentError(f"frames must be >= 1, got {frames}")
    cfg = cfg or default_config(width, height, 30.0)
    tex = synth.texture(7, height, 2 * width, 90, 0)
    fps = 30.0
    frame_list = [
        Frame(np.ascontiguousarray(tex[:, t % width : t % width + width]), t, fps)
        for t in range(frames + warmup + 1)
    ]
    mask = BodyMask(np.ones((height, width), np.uint8))

    stage_ms: dict[str, list[float]] = {
        "diff_threshold": [], "apply_mask": [], "spatial_median": [], "compress": [],
    }
    bits = np.empty(frames + warmup, np.uint8)
    for t in range(frames + warmup):
        t0 = time.perf_counter()
        d = gate_mod.diff_threshold(frame_list[t], frame_list[t + 1], cfg.theta)
        t1 = time.perf_counter()
        masked = gate_mod.apply_mask(d, mask)
        t2 = time.perf_counter()
        med = gate_mod.spatial_median(masked, cfg.n)
        t3 = time.perf_counter()
        bits[t] = gate_mod.compress(med, cfg.min_active_pixels)
        t4 = time.perf_counter()
        if t >= warmup:
            stage_ms["diff_threshold"].append((t1 - t0) * 1e3)
            stage_ms["apply_mask"].append((t2 - t1) * 1e3)
            stage_ms["spatial_median"].append((t3 - t2) * 1e3)
            stage_ms["compress"].append((t4 - t3) * 1e3)

    speeds = SpeedSeries(np.ones(frames + warmup), fps)
    t0 = time.perf_counter()
    filt = gate_mod.temporal_median(bits, cfg.m)
    t1 = time.perf_counter()
    gate_mod.gate_series(speeds, filt)
    t2 = time.perf_counter()

    report = {k: float(np.median(v)) for k, v in stage_ms.items()}
    report["temporal_median"] = (t1 - t0) * 1e3 / (frames + warmup)
    report["gate_series"] = (t2 - t1) * 1e3 / (frames + warmup)
    report["total"] = float(sum(report.values()))
    return report
