"""Body-motion speed gating: multi-stage filtering of vision-based motion
estimates, baseline filters, metrics, synthetic data and an evaluation CLI."""

from .errors import (
    DegenerateCorrelationError,
    FormatError,
    InvalidArgumentError,
    OpphError,
    ParseError,
    TruncationError,
)
from .filters import FilterSpec, bilateral_flow, kalman_speed, median_flow, tv_flow
from .flow import dense_flow
from .gate import (
    apply_mask,
    compress,
    diff_threshold,
    gate_series,
    run_opph,
    spatial_median,
    temporal_median,
    temporal_median_causal,
)
from .metrics import (
    CorrelationReport,
    RmseReport,
    aggregate,
    flow_speed,
    part_speeds,
    pearson_r,
    pose_speed,
    pose_speed_series,
    rmse,
    speed_histogram,
    windowed_correlation,
)
from .synth import BodySpec, MotionSegment, NoiseSpec, SceneSpec, generate, inject_noise
from .types import (
    BinaryImage,
    BodyMask,
    Frame,
    FlowField,
    GateSignal,
    OpphConfig,
    PartMask,
    PoseTrack,
    SpeedSeries,
    default_config,
    make_odd,
)

__version__ = "0.1.0"
