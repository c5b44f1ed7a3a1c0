import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskavatar.pose import (
    BodyPartScales,
    Skeleton2D,
    apply_scales,
    compute_scales,
    load_skeletons_jsonl,
    momentum_smooth,
    quat_continuity,
    savgol,
    save_skeletons_jsonl,
    sliding_windows,
)


def base_skeleton():
    """Generic confident skeleton, left/right symmetric, no collinear parts."""
    pts = {
        0: (0.0, -62.0), 1: (0.0, -50.0),
        2: (-16.0, -48.0), 3: (-42.0, -47.0), 4: (-66.0, -45.0),
        5: (16.0, -48.0), 6: (42.0, -47.0), 7: (66.0, -45.0),
        8: (-9.0, 2.0), 9: (-11.0, 42.0), 10: (-12.0, 80.0),
        11: (9.0, 2.0), 12: (11.0, 42.0), 13: (12.0, 80.0),
        14: (-4.0, -66.0), 15: (4.0, -66.0), 16: (0.0, -70.0),
    }
    kps = np.zeros((17, 3))
    for i, (x, y) in pts.items():
        kps[i] = [x + 100.0, y + 100.0, 1.0]
    return Skeleton2D(kps)


class TestComputeScales:
    def test_identity_skeleton_unit_scales(self):
        s = base_skeleton()
        scales = compute_scales(s, s)
        for part, value in scales.as_dict().items():
            if part in ("hands", "feet"):
                assert value == 1.0 and part in scales.fallback_parts
            else:
                assert value == pytest.approx(1.0, abs=1e-12)

    def test_bilateral_average(self):
        ref = base_skeleton()
        src = base_skeleton()
        # right upper arm (2-3): ref length 2, src length 1
        ref.keypoints[2, :2] = [0.0, 0.0]
        ref.keypoints[3, :2] = [2.0, 0.0]
        src.keypoints[2, :2] = [0.0, 0.0]
        src.keypoints[3, :2] = [1.0, 0.0]
        # left upper arm (5-6): ref length 4, src length 2
        ref.keypoints[5, :2] = [10.0, 0.0]
        ref.keypoints[6, :2] = [14.0, 0.0]
        src.keypoints[5, :2] = [10.0, 0.0]
        src.keypoints[6, :2] = [12.0, 0.0]
        assert compute_scales(ref, src).arm_upper == pytest.approx(2.0)

    def test_zero_length_source_falls_back(self):
        ref = base_skeleton()
        src = base_skeleton()
        src.keypoints[3, :2] = src.keypoints[2, :2]
        src.keypoints[6, :2] = src.keypoints[5, :2]
        scales = compute_scales(ref, src)
        assert scales.arm_upper == 1.0
        assert "arm_upper" in scales.fallback_parts

    def test_low_confidence_falls_back(self):
        ref = base_skeleton()
        src = base_skeleton()
        src.keypoints[[2, 5], 2] = 0.1
        scales = compute_scales(ref, src)
        assert scales.shoulders == 1.0 and "shoulders" in scales.fallback_parts
        assert scales.arm_upper == 1.0 and "arm_upper" in scales.fallback_parts


class TestApplyScales:
    def test_unit_scales_identity(self):
        src = base_skeleton()
        out = apply_scales(src, BodyPartScales())
        assert np.allclose(out.keypoints, src.keypoints)

    def test_anchor_formula(self):
        src = base_skeleton()
        src.keypoints[2, :2] = [0.0, 0.0]  # r_shoulder: anchor of arm_upper
        src.keypoints[3, :2] = [1.0, 1.0]  # r_elbow
        out = apply_scales(src, BodyPartScales(arm_upper=2.0))
        assert np.allclose(out.keypoints[3, :2], [2.0, 2.0])

    def test_distal_scaling_keeps_anchor(self):
        src = base_skeleton()
        out = apply_scales(src, BodyPartScales(arm_lower=3.0))
        assert np.allclose(out.keypoints[3, :2], src.keypoints[3, :2])
        assert np.allclose(out.keypoints[2, :2], src.keypoints[2, :2])

    def test_descendants_translate_rigidly(self):
        src = base_skeleton()
        out = apply_scales(src, BodyPartScales(arm_upper=2.0))
        # wrist keeps its offset from the elbow
        assert np.allclose(out.keypoints[4, :2] - out.keypoints[3, :2],
                           src.keypoints[4, :2] - src.keypoints[3, :2])

    def test_roundtrip_reproduces_reference_lengths(self):
        src = base_skeleton()
        planted = BodyPartScales(neck=0.9, face=0.9, shoulders=1.15,
                                 arm_upper=1.3, arm_lower=0.8, torso=1.2,
                                 leg_upper=1.25, leg_lower=0.7)
        ref = apply_scales(src, planted)
        computed = compute_scales(ref, src)
        for part in ("neck", "face", "shoulders", "arm_upper", "arm_lower",
                     "torso", "leg_upper", "leg_lower"):
            assert computed[part] == pytest.approx(planted[part], abs=1e-9)
        aligned = apply_scales(src, computed)
        assert np.abs(aligned.keypoints[:, :2] - ref.keypoints[:, :2]).max() < 1e-6


class TestSavgol:
    def test_constant_series(self):
        out = savgol(np.full(20, 3.7))
        assert np.allclose(out, 3.7, atol=1e-12)

    def test_quadratic_reproduced_everywhere(self):
        t = np.arange(25, dtype=float)
        series = 0.3 * t * t - 2.0 * t + 5.0
        assert np.abs(savgol(series) - series).max() < 1e-9

    def test_noise_variance_reduced(self):
        shrunk = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            t = np.arange(60, dtype=float)
            noisy = 0.5 * t + rng.normal(0, 1.0, 60)
            resid_in = noisy - 0.5 * t
            resid_out = savgol(noisy) - 0.5 * t
            if resid_out.var() < resid_in.var():
                shrunk += 1
        assert shrunk == 100

    def test_linearity(self, rng):
        a = rng.normal(size=40)
        b = rng.normal(size=40)
        lhs = savgol(a + b)
        rhs = savgol(a) + savgol(b)
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_short_series(self):
        assert np.allclose(savgol(np.array([2.0])), [2.0])
        out = savgol(np.array([1.0, 2.0, 3.0]))
        assert np.abs(out - [1.0, 2.0, 3.0]).max() < 1e-9  # linear, exactly fit


class TestQuatContinuity:
    def test_flips_negative_dot(self):
        q0 = np.array([1.0, 0.0, 0.0, 0.0])
        q1 = np.array([-0.99, 0.1, 0.0, 0.0])
        q1 /= np.linalg.norm(q1)
        out = quat_continuity(np.stack([q0, q1]))
        assert out[0] @ out[1] > 0
        assert np.allclose(out[1], -q1)

    def test_already_continuous_unchanged(self, rng):
        quats = rng.normal(size=(10, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        for t in range(1, 10):
            if quats[t - 1] @ quats[t] < 0:
                quats[t] = -quats[t]
        assert np.array_equal(quat_continuity(quats), quats)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 40))
    def test_postconditions(self, seed, length):
        rng = np.random.default_rng(seed)
        quats = rng.normal(size=(length, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        out = quat_continuity(quats)
        dots = np.einsum("td,td->t", out[:-1], out[1:])
        assert np.all(dots >= 0)
        signs = np.einsum("td,td->t", out, quats)
        assert np.allclose(np.abs(signs), 1.0)


class TestMomentumSmooth:
    def test_tiny_alpha_is_identity(self, rng):
        x = rng.normal(size=(30, 4))
        out = momentum_smooth(x, 1e-9)
        assert np.abs(out - x).max() < 1e-6

    def test_constant_fixed_point(self):
        x = np.full((15, 2), 0.42)
        for alpha in (0.3, 0.6, 0.99):
            assert np.allclose(momentum_smooth(x, alpha), x)

    def test_step_response_closed_form(self):
        k = 5
        x = np.zeros(20)
        x[k:] = 1.0
        out = momentum_smooth(x, 0.6)
        t = np.arange(k, 20)
        expected = 1.0 - 0.6 ** (t - k + 1)
        assert np.allclose(out[k:], expected, atol=1e-12)
        assert np.allclose(out[:k], 0.0)


class TestSlidingWindows:
    def test_exact_fit_single_window(self):
        windows, weights = sliding_windows(48)
        assert windows == [(0, 48)]
        assert np.allclose(weights, 1.0)

    def test_layout_for_100_frames(self):
        windows, _ = sliding_windows(100)
        assert windows == [(0, 48), (44, 92), (52, 100)]

    def test_weights_sum_to_one(self):
        for t_len in (1, 10, 48, 49, 100, 189, 200):
            windows, weights = sliding_windows(t_len)
            assert np.allclose(weights.sum(axis=0), 1.0, atol=1e-12)
            covered = np.zeros(t_len, dtype=bool)
            for s, e in windows:
                covered[s:e] = True
            assert covered.all()

    def test_crossfade_is_linear(self):
        windows, weights = sliding_windows(100)
        s = windows[1][0]
        ov = windows[0][1] - s
        ramp = weights[1, s:s + ov]
        assert np.allclose(ramp, np.arange(1, ov + 1) / (ov + 1))


def test_skeleton_jsonl_roundtrip(tmp_path, rng):
    skels = []
    for _ in range(4):
        kp = rng.uniform(0, 100, (17, 3))
        kp[:, 2] = rng.uniform(0, 1, 17)
        skels.append(Skeleton2D(kp))
    path = tmp_path / "skels.jsonl"
    save_skeletons_jsonl(path, skels)
    back = load_skeletons_jsonl(path)
    assert len(back) == 4
    for a, b in zip(skels, back):
        assert np.array_equal(a.keypoints, b.keypoints)


class TestArgumentValidation:
    def test_savgol_rejects_even_window(self):
        with pytest.raises(ValueError):
            savgol(np.zeros(10), window=8)

    def test_savgol_rejects_order_ge_window(self):
        with pytest.raises(ValueError):
            savgol(np.zeros(10), window=5, order=5)

    def test_momentum_alpha_range(self):
        with pytest.raises(ValueError):
            momentum_smooth(np.zeros(5), 0.0)
        with pytest.raises(ValueError):
            momentum_smooth(np.zeros(5), 1.5)

    def test_sliding_windows_bad_args(self):
        with pytest.raises(ValueError):
            sliding_windows(0)
        with pytest.raises(ValueError):
            sliding_windows(10, size=4, overlap=4)

    def test_quat_continuity_rejects_non_unit(self):
        with pytest.raises(ValueError):
            quat_continuity(np.array([[2.0, 0.0, 0.0, 0.0]]))
