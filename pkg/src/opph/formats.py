"""Readers and writers for every external data format.

Flow interchange is the Middlebury ``.flo`` layout (magic "PIEH", little-
endian int32 dimensions, interleaved little-endian float32 vectors). Frames
are binary PPM (P6) or 8-bit RGB PNG; masks and part maps are binary PGM
(P5) or 8-bit grayscale PNG. Poses, ground-truth speeds and reports are CSV.
Readers reject malformed input with errors naming the offending file or
line; writers produce byte-stable output their readers round-trip.
"""

import csv
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, InvalidArgumentError, ParseError, TruncationError
from .metrics import CorrelationReport, RmseReport
from .types import BodyMask, FlowField, Frame, PartMask, PoseTrack, SpeedSeries

log = logging.getLogger(__name__)

FLO_MAGIC = b"PIEH"  # == struct.pack("<f", 202021.25)
FLO_UNKNOWN_THRESHOLD = 1e9


def read_flo(data: bytes) -> FlowField:
    """Parse a .flo byte stream into a flow field.

    Components with magnitude above 1e9 (the "unknown flow" sentinel) or
    non-finite values are zeroed with a warning.
    """
    if len(data) < 4 or data[:4] != FLO_MAGIC:
        raise FormatError(
            f"bad flow magic {data[:4]!r}; expected {FLO_MAGIC!r} (float 202021.25)"
        )
    if len(data) < 12:
        raise TruncationError(f"flow header truncated: {len(data)} bytes")
    width, height = struct.unpack_from("<ii", data, 4)
    if width <= 0 or height <= 0:
        raise FormatError(f"non-positive flow dimensions {width}x{height}")
    expected = 12 + width * height * 8
    if len(data) < expected:
        raise TruncationError(
            f"flow payload truncated: have {len(data)} bytes, need {expected} "
            f"for {width}x{height}"
        )
    if len(data) > expected:
        raise FormatError(f"trailing data after flow payload: {len(data) - expected} bytes")
    raw = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    vec = raw.astype(np.float64)
    bad = ~np.isfinite(vec) | (np.abs(vec) > FLO_UNKNOWN_THRESHOLD)
    if bad.any():
        log.warning("read_flo: zeroing %d unknown-flow components", int(bad.sum()))
        vec[bad] = 0.0
    return FlowField(vec)


def write_flo(flow: FlowField) -> bytes:
    """Serialize a flow field to .flo bytes (inverse of read_flo)."""
    h, w = flow.height, flow.width
    out = io.BytesIO()
    out.write(FLO_MAGIC)
    out.write(struct.pack("<ii", w, h))
    out.write(np.ascontiguousarray(flow.vectors, dtype="<f4").tobytes())
    return out.getvalue()


def _read_pnm(path: Path) -> np.ndarray:
    """Binary PPM (P6) or PGM (P5) with maxval 255."""
    data = path.read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file (magic {data[:2]!r})")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncationError(f"{path}: header ended early")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise FormatError(f"{path}: bad header token {data[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported bit depth (maxval {maxval}, want 255)")
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise TruncationError(f"{path}: pixel payload truncated ({len(payload)}/{need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(height, width, 3) if channels == 3 else arr.reshape(height, width)


def write_pnm(path: Path, arr: np.ndarray) -> None:
    """Write (H, W, 3) as binary PPM or (H, W) as binary PGM."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise InvalidArgumentError(f"cannot write array of shape {arr.shape} as PNM")
    header = magic + f"\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    path.write_bytes(header + arr.tobytes())


def _read_image(path: Path, want: str) -> np.ndarray:
    """Decode one image file as 8-bit RGB ("rgb") or grayscale ("gray")."""
    if not path.exists():
        raise FormatError(f"{path}: file does not exist")
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        arr = _read_pnm(path)
        if want == "rgb" and arr.ndim != 3:
            raise FormatError(f"{path}: expected an RGB image, got grayscale")
        if want == "gray" and arr.ndim != 2:
            raise FormatError(f"{path}: expected a grayscale image, got RGB")
        return arr
    try:
        with Image.open(path) as img:
            if want == "rgb":
                if img.mode != "RGB":
                    raise FormatError(
                        f"{path}: unsupported image mode {img.mode!r} (need 8-bit RGB)"
                    )
                return np.asarray(img, dtype=np.uint8)
            if img.mode != "L":
                raise FormatError(
                    f"{path}: unsupported image mode {img.mode!r} (need 8-bit grayscale)"
                )
            return np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError:
        raise FormatError(f"{path}: not a decodable image file") from None


@dataclass(frozen=True)
class SequenceManifest:
    """Index of one video's files; all paths are relative to ``root``.

    Flow file k describes the motion from frame k to frame k+1, so a T-frame
    sequence carries T-1 flow files and either T per-frame masks or T-1
    pre-combined per-pair masks.
    """

    identifier: str
    fps: float
    frames: tuple[str, ...]
    masks: tuple[str, ...] = ()
    flows: tuple[str, ...] = ()
    pose: str | None = None
    gt_speed: str | None = None
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if not self.identifier:
            raise InvalidArgumentError("manifest needs a non-empty identifier")
        if not (self.fps > 0):
            raise InvalidArgumentError(f"manifest fps must be > 0, got {self.fps}")
        if len(self.frames) < 1:
            raise InvalidArgumentError(f"manifest {self.identifier}: no frame files")
        t = len(self.frames)
        if self.masks and len(self.masks) not in (t, t - 1):
            raise InvalidArgumentError(
                f"manifest {self.identifier}: {len(self.masks)} masks for {t} frames "
                f"(expected {t} or {t - 1})"
            )
        if self.flows and len(self.flows) != t - 1:
            raise InvalidArgumentError(
                f"manifest {self.identifier}: {len(self.flows)} flow files for {t} frames "
                f"(expected {t - 1})"
            )
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "root", Path(self.root))

    def path(self, rel: str) -> Path:
        return self.root / rel


def load_manifest(path: str | Path) -> SequenceManifest:
    """Read a manifest JSON file."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: manifest does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    try:
        return SequenceManifest(
            identifier=data["identifier"],
            fps=data["fps"],
            frames=tuple(data["frames"]),
            masks=tuple(data.get("masks", ())),
            flows=tuple(data.get("flows", ())),
            pose=data.get("pose"),
            gt_speed=data.get("gt_speed"),
            root=path.parent,
        )
    except KeyError as exc:
        raise FormatError(f"{path}: manifest is missing field {exc}") from exc


def save_manifest(manifest: SequenceManifest, path: str | Path) -> None:
    """Write a manifest as JSON (paths stay relative to the file)."""
    data = {
        "identifier": manifest.identifier,
        "fps": manifest.fps,
        "frames": list(manifest.frames),
    }
    if manifest.masks:
        data["masks"] = list(manifest.masks)
    if manifest.flows:
        data["flows"] = list(manifest.flows)
    if manifest.pose is not None:
        data["pose"] = manifest.pose
    if manifest.gt_speed is not None:
        data["gt_speed"] = manifest.gt_speed
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def read_frames(manifest: SequenceManifest) -> list[Frame]:
    """Decode all frames of a sequence; dimensions must not drift."""
    frames: list[Frame] = []
    shape = None
    for idx, rel in enumerate(manifest.frames):
        path = manifest.path(rel)
        arr = _read_image(path, "rgb")
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise FormatError(
                f"{path}: frame dimensions {arr.shape[1]}x{arr.shape[0]} differ from "
                f"first frame {shape[1]}x{shape[0]}"
            )
        frames.append(Frame(arr, idx, manifest.fps))
    return frames


def read_mask(path: str | Path) -> BodyMask:
    """Grayscale image to body mask: any nonzero pixel counts as body."""
    arr = _read_image(Path(path), "gray")
    return BodyMask((arr > 0).astype(np.uint8))


def read_parts(path: str | Path) -> PartMask:
    """Grayscale image to part mask: the raw pixel value is the part label."""
    arr = _read_image(Path(path), "gray")
    return PartMask(arr.astype(np.int32))


def read_pose(path: str | Path, fps: float) -> PoseTrack:
    """Parse a pose CSV: header ``frame,joint,x,y,present`` then one record
    per (frame, joint). Every frame must carry the same joints."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: pose file does not exist")
    records: dict[tuple[int, int], tuple[float, float, bool]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "joint", "x", "y", "present"]:
            raise ParseError(f"bad header {header}", line=1, path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", lineno, str(path))
            try:
                t, j = int(row[0]), int(row[1])
                x, y = float(row[2]), float(row[3])
                present = int(row[4])
            except ValueError as exc:
                raise ParseError(f"non-numeric field: {exc}", lineno, str(path)) from exc
            if t < 0 or j < 0:
                raise ParseError(f"negative frame/joint index {t},{j}", lineno, str(path))
            if present not in (0, 1):
                raise ParseError(f"present flag must be 0/1, got {row[4]}", lineno, str(path))
            if (t, j) in records:
                raise ParseError(f"duplicate record for frame {t} joint {j}", lineno, str(path))
            records[(t, j)] = (x, y, bool(present))
    if not records:
        raise ParseError("pose file has no records", line=2, path=str(path))
    num_frames = max(t for t, _ in records) + 1
    num_joints = max(j for _, j in records) + 1
    xy = np.zeros((num_frames, num_joints, 2))
    present = np.zeros((num_frames, num_joints), bool)
    for t in range(num_frames):
        for j in range(num_joints):
            if (t, j) not in records:
                raise ParseError(
                    f"missing record for frame {t} joint {j} "
                    f"(frames must be contiguous with a constant joint count)",
                    path=str(path),
                )
            x, y, p = records[(t, j)]
            xy[t, j] = (x, y)
            present[t, j] = p
    return PoseTrack(xy, present, fps)


def write_pose(track: PoseTrack, path: str | Path) -> None:
    """Inverse of read_pose."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "joint", "x", "y", "present"])
        for t in range(track.num_frames):
            for j in range(track.num_joints):
                writer.writerow([
                    t, j, repr(float(track.xy[t, j, 0])), repr(float(track.xy[t, j, 1])),
                    int(track.present[t, j]),
                ])


def read_gt_speed(path: str | Path, fps: float) -> SpeedSeries:
    """Parse a two-column ground-truth speed CSV (header ``frame,speed``)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: ground-truth speed file does not exist")
    values: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "speed"]:
            raise ParseError(f"bad header {header}, expected frame,speed", 1, str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", lineno, str(path))
            try:
                idx = int(row[0])
                v = float(row[1])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell: {exc}", lineno, str(path)) from exc
            if idx != len(values):
                raise ParseError(f"frame index {idx}, expected {len(values)}", lineno, str(path))
            if not math.isfinite(v) or v < 0:
                raise ParseError(f"speed must be finite and >= 0, got {row[1]}", lineno, str(path))
            values.append(v)
    if not values:
        raise ParseError("speed file has no rows", line=2, path=str(path))
    return SpeedSeries(np.array(values), fps)


def write_gt_speed(series: SpeedSeries, path: str | Path) -> None:
    """Inverse of read_gt_speed."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "speed"])
        for t, v in enumerate(series.values):
            writer.writerow([t, repr(float(v))])


def _config_columns(config: dict[str, object]) -> tuple[list[str], list[str]]:
    names = list(config.keys())
    values = [str(config[k]) for k in names]
    return names, values


def write_speeds_csv(
    path: str | Path,
    raw: SpeedSeries,
    gated: SpeedSeries | None,
    config: dict[str, object],
) -> None:
    """Per-pair raw (and gated) speeds with the run configuration inlined."""
    names, values = _config_columns(config)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["pair", "raw_speed"] + (["gated_speed"] if gated is not None else [])
        writer.writerow(cols + names)
        for t in range(len(raw)):
            row = [t, repr(float(raw.values[t]))]
            if gated is not None:
                row.append(repr(float(gated.values[t])))
            writer.writerow(row + values)


def write_gate_csv(path: str | Path, s: np.ndarray, s_filtered: np.ndarray,
                   config: dict[str, object]) -> None:
    """Per-pair movement bits before and after temporal filtering."""
    names, values = _config_columns(config)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "s", "s_filtered"] + names)
        for t in range(len(s)):
            writer.writerow([t, int(s[t]), int(s_filtered[t])] + values)


def write_report_csv(
    path: str | Path, reports: list[RmseReport], config: dict[str, object]
) -> None:
    """RMSE report: per-video rows plus one dataset aggregate row per variant.

    Every row repeats the run configuration so reports are self-describing.
    """
    names, values = _config_columns(config)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "variant", "video", "rmse", "mean_rmse", "median_rmse",
             "outliers_excluded"] + names
        )
        for rep in reports:
            for video, value in zip(rep.videos, rep.values):
                writer.writerow(
                    ["video", rep.variant, video, repr(float(value)), "", "", ""] + values
                )
        for rep in reports:
            writer.writerow(
                ["dataset", rep.variant, "", "", repr(rep.mean_rmse),
                 repr(rep.median_rmse), int(rep.outliers_excluded)] + values
            )


def write_correlation_csv(
    path: str | Path,
    reports: list[tuple[str, CorrelationReport]],
    config: dict[str, object],
) -> None:
    """Correlation summary: one row per (variant, window length)."""
    names, values = _config_columns(config)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "window_seconds", "frames_per_window", "num_windows", "pearson_r"]
            + names
        )
        for variant, rep in reports:
            writer.writerow(
                [variant, repr(float(rep.window_seconds)), rep.frames_per_window,
                 len(rep.est_windows), repr(rep.r)] + values
            )


def write_histogram_csv(
    path: str | Path, bins: list[tuple[float, float, int]], config: dict[str, object]
) -> None:
    """Speed distribution bins as (low, high, count) rows."""
    names, values = _config_columns(config)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"] + names)
        for lo, hi, count in bins:
            writer.writerow([repr(float(lo)), "inf" if math.isinf(hi) else repr(float(hi)),
                             count] + values)
