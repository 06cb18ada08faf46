"""Baseline filters: oracle checks, limit cases, invariants."""

import math

import numpy as np
import pytest

from conftest import sliding_median_oracle
from opph._median import sliding_median_2d
from opph.errors import InvalidArgumentError
from opph.filters import (
    FilterSpec,
    bilateral_flow,
    kalman_speed,
    median_flow,
    tv_flow,
    tv_objective,
)
from opph.types import FlowField, SpeedSeries


def constant_field(vx, vy, shape=(10, 12)):
    v = np.empty(shape + (2,))
    v[..., 0] = vx
    v[..., 1] = vy
    return FlowField(v)


def random_field(rng, shape=(10, 12), scale=1.0):
    return FlowField(rng.normal(size=shape + (2,)) * scale)


class TestMedianFlow:
    def test_constant_unchanged(self):
        f = constant_field(2.0, -1.0)
        out = median_flow(f, 3)
        np.testing.assert_array_equal(out.vectors, f.vectors)

    def test_outlier_replaced(self):
        v = np.full((7, 7, 2), 1.5)
        v[3, 3] = (40.0, -40.0)
        out = median_flow(FlowField(v), 3)
        assert out.vectors[3, 3, 0] == 1.5
        assert out.vectors[3, 3, 1] == 1.5

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(7, 7, 2))
        out = median_flow(FlowField(v), 3)
        for c in range(2):
            np.testing.assert_allclose(
                out.vectors[..., c], sliding_median_oracle(v[..., c], 3, "replicate")
            )

    def test_even_window_rejected(self):
        with pytest.raises(InvalidArgumentError):
            median_flow(constant_field(0, 0), 4)


class TestSharedMedianKernel:
    """The gate's binary median and the flow median run through one kernel;
    both dtype paths must match the same brute-force oracle."""

    def test_binary_and_float_paths_agree_with_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            h, w = rng.integers(5, 15, 2)
            n = int(rng.choice([1, 3, 5]))
            binary = (rng.random((h, w)) < 0.5).astype(np.uint8)
            for border in ("zero", "replicate"):
                got = sliding_median_2d(binary, n, border)
                np.testing.assert_array_equal(got, sliding_median_oracle(binary, n, border))
                as_float = sliding_median_2d(binary.astype(np.float64), n, border)
                np.testing.assert_array_equal(as_float.astype(np.uint8), got)

    def test_float_path_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(15):
            arr = rng.normal(size=(9, 11))
            for border in ("zero", "replicate"):
                np.testing.assert_array_equal(
                    sliding_median_2d(arr, 3, border), sliding_median_oracle(arr, 3, border)
                )

    def test_bad_border(self):
        with pytest.raises(InvalidArgumentError):
            sliding_median_2d(np.zeros((5, 5)), 3, "wrap")


class TestBilateralFlow:
    def test_constant_unchanged(self):
        f = constant_field(1.0, 2.0)
        out = bilateral_flow(f, 2.0, 0.5)
        np.testing.assert_allclose(out.vectors, f.vectors, atol=1e-9)

    def test_large_sigma_r_converges_to_gaussian(self):
        rng = np.random.default_rng(3)
        f = random_field(rng, (12, 14))
        sigma_s = 1.5
        out = bilateral_flow(f, sigma_s, 1e9)

        # direct truncated, normalized Gaussian with the same border handling
        radius = math.ceil(3 * sigma_s)
        H, W = 12, 14
        expected = np.zeros_like(f.vectors)
        for i in range(H):
            for j in range(W):
                wsum = 0.0
                acc = np.zeros(2)
                for di in range(-radius, radius + 1):
                    for dj in range(-radius, radius + 1):
                        ii, jj = i + di, j + dj
                        if 0 <= ii < H and 0 <= jj < W:
                            w = math.exp(-(di * di + dj * dj) / (2 * sigma_s**2))
                            wsum += w
                            acc += w * f.vectors[ii, jj]
                expected[i, j] = acc / wsum
        np.testing.assert_allclose(out.vectors, expected, atol=1e-6)

    def test_sharp_boundary_preserved(self):
        v = np.zeros((10, 20, 2))
        v[:, 10:, 0] = 4.0  # motion step of 4 px/frame
        out = bilateral_flow(FlowField(v), 2.0, 0.2)
        deviation = np.abs(out.vectors - v).max()
        assert deviation < 0.4, f"step smeared by {deviation}"

    def test_bad_sigmas(self):
        with pytest.raises(InvalidArgumentError):
            bilateral_flow(constant_field(0, 0), 0.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            bilateral_flow(constant_field(0, 0), 1.0, -1.0)


class TestTvFlow:
    def test_constant_unchanged(self):
        f = constant_field(3.0, -2.0)
        for lam in (0.01, 0.1, 10.0):
            out = tv_flow(f, lam, 20)
            np.testing.assert_allclose(out.vectors, f.vectors, atol=1e-9)

    def test_energy_nonincreasing(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            f = random_field(rng, (8, 9))
            energies = []
            for iters in range(1, 12):
                u = tv_flow(f, 0.2, iters)
                energies.append(tv_objective(u, f, 0.2))
            for e0, e1 in zip(energies, energies[1:]):
                assert e1 <= e0 + 1e-9 * max(1.0, abs(e0))

    def test_small_weight_returns_input(self):
        rng = np.random.default_rng(5)
        f = random_field(rng, (8, 8))
        out = tv_flow(f, 1e-6, 50)
        assert np.abs(out.vectors - f.vectors).max() < 1e-3

    def test_smooths_noise(self):
        rng = np.random.default_rng(6)
        clean = constant_field(1.0, 0.0, (12, 12))
        noisy = FlowField(clean.vectors + rng.normal(size=(12, 12, 2)) * 0.5)
        out = tv_flow(noisy, 0.5, 60)
        err_before = np.abs(noisy.vectors - clean.vectors).mean()
        err_after = np.abs(out.vectors - clean.vectors).mean()
        assert err_after < err_before

    def test_bad_parameters(self):
        with pytest.raises(InvalidArgumentError):
            tv_flow(constant_field(0, 0), 0.0, 10)
        with pytest.raises(InvalidArgumentError):
            tv_flow(constant_field(0, 0), 0.1, 0)


class TestKalmanSpeed:
    def test_constant_series_fixed_point(self):
        s = SpeedSeries(np.full(30, 2.5), 30.0)
        out = kalman_speed(s, 1e-4, 1e-2)
        np.testing.assert_allclose(out.values, s.values, atol=1e-12)

    def test_tiny_measurement_variance_tracks_input(self):
        rng = np.random.default_rng(7)
        s = SpeedSeries(rng.random(50) * 5, 30.0)
        out = kalman_speed(s, 1e-2, 1e-12)
        assert np.abs(out.values - s.values).max() < 1e-9

    def test_step_between_running_min_max(self):
        s = SpeedSeries(np.concatenate([np.zeros(20), np.full(20, 4.0)]), 30.0)
        out = kalman_speed(s, 1e-4, 1.0)
        running_min = np.minimum.accumulate(s.values)
        running_max = np.maximum.accumulate(s.values)
        assert (out.values >= running_min - 1e-12).all()
        assert (out.values <= running_max + 1e-12).all()
        # heavy measurement noise -> clearly lagged response
        assert out.values[21] < 2.0

    def test_bad_variances(self):
        s = SpeedSeries([1.0, 2.0], 30.0)
        with pytest.raises(InvalidArgumentError):
            kalman_speed(s, 0.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            kalman_speed(s, 1.0, 0.0)


class TestFilterSpec:
    def test_parse_and_label_roundtrip(self):
        for text in ("median:5", "bilateral:1.5,0.5", "tv:0.2,30", "kalman:0.001,0.1"):
            spec = FilterSpec.parse(text)
            assert FilterSpec.parse(spec.label()) == spec

    def test_defaults(self):
        assert FilterSpec.parse("median").window == 3
        b = FilterSpec.parse("bilateral")
        assert (b.sigma_s, b.sigma_r) == (3.0, 1.0)
        t = FilterSpec.parse("tv")
        assert (t.tv_weight, t.tv_iters) == (0.1, 100)
        k = FilterSpec.parse("kalman")
        assert (k.q, k.r) == (1e-4, 1e-2)

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("blur:3")
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("median:4")
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("tv:0,10")
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("kalman:1e-4")

    def test_apply_dispatch(self):
        rng = np.random.default_rng(8)
        f = random_field(rng, (6, 6))
        s = SpeedSeries(rng.random(10), 30.0)
        assert FilterSpec.parse("median:3").apply_flow(f).vectors.shape == (6, 6, 2)
        assert len(FilterSpec.parse("kalman").apply_series(s)) == 10
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("kalman").apply_flow(f)
        with pytest.raises(InvalidArgumentError):
            FilterSpec.parse("median:3").apply_series(s)


class TestDeterminism:
    def test_filters_are_deterministic(self):
        rng = np.random.default_rng(9)
        f = random_field(rng, (9, 9))
        s = SpeedSeries(rng.random(20), 30.0)
        for spec in (FilterSpec.parse("median:3"), FilterSpec.parse("bilateral:1,0.5"),
                     FilterSpec.parse("tv:0.1,15")):
            a = spec.apply_flow(f).vectors
            b = spec.apply_flow(f).vectors
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(
            FilterSpec.parse("kalman").apply_series(s).values,
            FilterSpec.parse("kalman").apply_series(s).values,
        )
