"""File formats: flow interchange, images, CSV schemas, manifests."""

import math
import struct

import numpy as np
import pytest
from PIL import Image

from opph.errors import FormatError, InvalidArgumentError, ParseError, TruncationError
from opph.formats import (
    FLO_MAGIC,
    SequenceManifest,
    load_manifest,
    read_flo,
    read_frames,
    read_gt_speed,
    read_mask,
    read_parts,
    read_pose,
    save_manifest,
    write_flo,
    write_gt_speed,
    write_pnm,
    write_pose,
    write_report_csv,
)
from opph.metrics import RmseReport
from opph.types import FlowField, PoseTrack, SpeedSeries


def flo_bytes(width, height, values):
    payload = np.asarray(values, dtype="<f4").tobytes()
    return FLO_MAGIC + struct.pack("<ii", width, height) + payload


class TestFlo:
    def test_hand_assembled_single_pixel(self):
        data = flo_bytes(1, 1, [3.0, 4.0])
        assert len(data) == 20
        flow = read_flo(data)
        assert flow.vectors[0, 0].tolist() == [3.0, 4.0]
        assert write_flo(flow) == data

    def test_round_trip_random_fields(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h, w = rng.integers(1, 20, 2)
            raw = (rng.standard_normal((h, w, 2)) * 100).astype(np.float32)
            data = flo_bytes(w, h, raw)
            assert write_flo(read_flo(data)) == data

    def test_zero_and_extreme_fields(self):
        for values in (np.zeros((2, 3, 2), np.float32),
                       np.full((2, 3, 2), 1e8, np.float32),
                       np.full((2, 3, 2), -3.4e38 / 1e30, np.float32)):
            data = flo_bytes(3, 2, values)
            assert write_flo(read_flo(data)) == data

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            read_flo(b"XXXX" + struct.pack("<ii", 1, 1) + b"\0" * 8)

    def test_truncated_header_and_payload(self):
        with pytest.raises(TruncationError):
            read_flo(FLO_MAGIC + b"\x01\x00")
        with pytest.raises(TruncationError):
            read_flo(flo_bytes(2, 2, np.zeros((2, 2, 2), np.float32))[:-4])

    def test_nonpositive_dimensions(self):
        for w, h in ((0, 1), (1, -2)):
            with pytest.raises(FormatError):
                read_flo(FLO_MAGIC + struct.pack("<ii", w, h))

    def test_trailing_data_rejected(self):
        data = flo_bytes(1, 1, [0.0, 0.0]) + b"junk"
        with pytest.raises(FormatError):
            read_flo(data)

    def test_unknown_sentinel_zeroed(self, caplog):
        data = flo_bytes(1, 1, [1e10, 2.0])
        with caplog.at_level("WARNING"):
            flow = read_flo(data)
        assert flow.vectors[0, 0, 0] == 0.0
        assert flow.vectors[0, 0, 1] == 2.0
        assert any("unknown" in r.message for r in caplog.records)

    def test_nan_zeroed(self):
        data = flo_bytes(1, 1, [math.nan, 1.0])
        assert read_flo(data).vectors[0, 0, 0] == 0.0


class TestPnm:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, (5, 7, 3), np.uint8)
        path = tmp_path / "img.ppm"
        write_pnm(path, arr)
        manifest = SequenceManifest(identifier="x", fps=30.0, frames=("img.ppm",),
                                    root=tmp_path)
        frames = read_frames(manifest)
        np.testing.assert_array_equal(frames[0].pixels, arr)

    def test_hand_crafted_ppm_bytes(self, tmp_path):
        raw = b"P6\n# a comment\n2 2\n255\n" + bytes(range(12))
        path = tmp_path / "hand.ppm"
        path.write_bytes(raw)
        manifest = SequenceManifest(identifier="x", fps=30.0, frames=("hand.ppm",),
                                    root=tmp_path)
        frames = read_frames(manifest)
        expected = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        np.testing.assert_array_equal(frames[0].pixels, expected)

    def test_pgm_mask_and_parts(self, tmp_path):
        arr = np.array([[0, 255], [0, 2]], np.uint8)
        path = tmp_path / "m.pgm"
        write_pnm(path, arr)
        mask = read_mask(path)
        assert mask.values.tolist() == [[0, 1], [0, 1]]
        parts = read_parts(path)
        assert parts.labels.tolist() == [[0, 255], [0, 2]]

    def test_all_black_mask_is_empty(self, tmp_path):
        path = tmp_path / "black.pgm"
        write_pnm(path, np.zeros((3, 3), np.uint8))
        assert read_mask(path).pixel_count == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + b"\0" * 10)
        with pytest.raises(TruncationError):
            read_frames(SequenceManifest(identifier="x", fps=30.0,
                                         frames=("trunc.ppm",), root=tmp_path))

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + b"\0" * 6)
        with pytest.raises(FormatError, match="bit depth"):
            read_frames(SequenceManifest(identifier="x", fps=30.0,
                                         frames=("deep.ppm",), root=tmp_path))


class TestPng:
    def test_rgb_png(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.integers(0, 256, (6, 5, 3), np.uint8)
        path = tmp_path / "f.png"
        Image.fromarray(arr).save(path)
        frames = read_frames(SequenceManifest(identifier="x", fps=30.0,
                                              frames=("f.png",), root=tmp_path))
        np.testing.assert_array_equal(frames[0].pixels, arr)

    def test_grayscale_png_mask(self, tmp_path):
        arr = np.array([[0, 7], [255, 0]], np.uint8)
        path = tmp_path / "m.png"
        Image.fromarray(arr, mode="L").save(path)
        assert read_mask(path).values.tolist() == [[0, 1], [1, 0]]

    def test_wrong_mode_rejected(self, tmp_path):
        arr = np.zeros((4, 4, 4), np.uint8)
        path = tmp_path / "rgba.png"
        Image.fromarray(arr, mode="RGBA").save(path)
        with pytest.raises(FormatError, match="mode"):
            read_frames(SequenceManifest(identifier="x", fps=30.0,
                                         frames=("rgba.png",), root=tmp_path))

    def test_sixteen_bit_png_rejected(self, tmp_path):
        img = Image.new("I;16", (4, 4))
        path = tmp_path / "deep.png"
        img.save(path)
        with pytest.raises(FormatError):
            read_mask(path)

    def test_not_an_image(self, tmp_path):
        path = tmp_path / "nope.png"
        path.write_bytes(b"hello world")
        with pytest.raises(FormatError, match="nope.png"):
            read_mask(path)


class TestFrameSequences:
    def test_dimension_drift_names_file(self, tmp_path):
        write_pnm(tmp_path / "a.ppm", np.zeros((4, 4, 3), np.uint8))
        write_pnm(tmp_path / "b.ppm", np.zeros((5, 4, 3), np.uint8))
        manifest = SequenceManifest(identifier="x", fps=30.0,
                                    frames=("a.ppm", "b.ppm"), root=tmp_path)
        with pytest.raises(FormatError, match="b.ppm"):
            read_frames(manifest)

    def test_missing_file_named(self, tmp_path):
        manifest = SequenceManifest(identifier="x", fps=30.0,
                                    frames=("gone.ppm",), root=tmp_path)
        with pytest.raises(FormatError, match="gone.ppm"):
            read_frames(manifest)

    def test_empty_manifest_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            SequenceManifest(identifier="x", fps=30.0, frames=(), root=tmp_path)


class TestPoseCsv:
    def track(self):
        xy = np.zeros((2, 3, 2))
        xy[1] = [[1.5, 0.0], [0.0, 2.5], [3.0, 4.0]]
        present = np.array([[True, True, False], [True, True, True]])
        return PoseTrack(xy, present, 25.0)

    def test_round_trip(self, tmp_path):
        track = self.track()
        path = tmp_path / "pose.csv"
        write_pose(track, path)
        back = read_pose(path, 25.0)
        np.testing.assert_array_equal(back.xy, track.xy)
        np.testing.assert_array_equal(back.present, track.present)

    def test_static_single_joint(self, tmp_path):
        path = tmp_path / "pose.csv"
        path.write_text("frame,joint,x,y,present\n0,0,5.0,5.0,1\n1,0,5.0,5.0,1\n")
        track = read_pose(path, 30.0)
        from opph.metrics import pose_speed
        assert pose_speed(track, 0) == 0.0

    def test_missing_record_rejected(self, tmp_path):
        path = tmp_path / "pose.csv"
        path.write_text("frame,joint,x,y,present\n0,0,1,1,1\n1,1,1,1,1\n")
        with pytest.raises(ParseError, match="missing record"):
            read_pose(path, 30.0)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "pose.csv"
        path.write_text("frame,x,y\n")
        with pytest.raises(ParseError):
            read_pose(path, 30.0)

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "pose.csv"
        path.write_text("frame,joint,x,y,present\n0,0,oops,1,1\n")
        with pytest.raises(ParseError, match="pose.csv:2"):
            read_pose(path, 30.0)

    def test_duplicate_record(self, tmp_path):
        path = tmp_path / "pose.csv"
        path.write_text("frame,joint,x,y,present\n0,0,1,1,1\n0,0,2,2,1\n")
        with pytest.raises(ParseError, match="duplicate"):
            read_pose(path, 30.0)


class TestGtSpeedCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        series = SpeedSeries(rng.random(17) * 4, 30.0)
        path = tmp_path / "gt.csv"
        write_gt_speed(series, path)
        back = read_gt_speed(path, 30.0)
        np.testing.assert_array_equal(back.values, series.values)

    def test_negative_speed_rejected(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("frame,speed\n0,-1.0\n")
        with pytest.raises(ParseError, match="gt.csv:2"):
            read_gt_speed(path, 30.0)

    def test_non_numeric_rejected(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("frame,speed\n0,fast\n")
        with pytest.raises(ParseError):
            read_gt_speed(path, 30.0)

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("t,v\n0,1.0\n")
        with pytest.raises(ParseError, match="header"):
            read_gt_speed(path, 30.0)

    def test_gap_in_frames_rejected(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("frame,speed\n0,1.0\n2,1.0\n")
        with pytest.raises(ParseError):
            read_gt_speed(path, 30.0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = SequenceManifest(
            identifier="vid1", fps=24.0,
            frames=("frames/a.ppm", "frames/b.ppm"),
            masks=("masks/a.pgm", "masks/b.pgm"),
            flows=("flows/0.flo",),
            gt_speed="gt.csv", root=tmp_path,
        )
        save_manifest(manifest, tmp_path / "manifest.json")
        back = load_manifest(tmp_path / "manifest.json")
        assert back.identifier == "vid1"
        assert back.frames == manifest.frames
        assert back.flows == manifest.flows
        assert back.root == tmp_path

    def test_count_validation(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            SequenceManifest(identifier="x", fps=30.0, frames=("a", "b", "c"),
                             flows=("f0",), root=tmp_path)
        with pytest.raises(InvalidArgumentError):
            SequenceManifest(identifier="x", fps=30.0, frames=("a", "b", "c"),
                             masks=("m0",), root=tmp_path)

    def test_bad_json_named(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(ParseError, match="manifest.json"):
            load_manifest(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text('{"identifier": "x"}')
        with pytest.raises(FormatError, match="missing"):
            load_manifest(path)


class TestReportCsv:
    def test_deterministic_and_self_describing(self, tmp_path):
        reports = [RmseReport(variant="raw", videos=("a", "b"), values=(0.5, 1.5)),
                   RmseReport(variant="opph", videos=("a", "b"), values=(0.0, 0.25))]
        config = {"theta": 20, "n": 5, "m": 15, "min_active_pixels": 1,
                  "source": "builtin-flow", "filters": "median:3"}
        p1 = tmp_path / "r1.csv"
        p2 = tmp_path / "r2.csv"
        write_report_csv(p1, reports, config)
        write_report_csv(p2, reports, config)
        assert p1.read_bytes() == p2.read_bytes()
        text = p1.read_text()
        header = text.splitlines()[0]
        for key in config:
            assert key in header.split(",")
        assert "opph" in text and "0.25" in text
