"""2D skeleton alignment and temporal parameter smoothing.

Keypoint indexing (17 points):
  0 nose, 1 neck, 2 r_shoulder, 3 r_elbow, 4 r_wrist, 5 l_shoulder,
  6 l_elbow, 7 l_wrist, 8 r_hip, 9 r_knee, 10 r_ankle, 11 l_hip,
  12 l_knee, 13 l_ankle, 14 r_eye, 15 l_eye, 16 face_aux.

Body-part segment table (measurement endpoints per side; bilateral sides are
averaged). `hands` and `feet` have no keypoints in this indexing and always
fall back to scale 1 (flagged):

  neck       (1, 0)
  face       (0, 14) | (0, 15)
  shoulders  (1, 2) | (1, 5)
  arm_upper  (2, 3) | (5, 6)
  arm_lower  (3, 4) | (6, 7)
  torso      (1, mid-hip)
  leg_upper  (8, 9) | (11, 12)
  leg_lower  (9, 10) | (12, 13)

Scales are applied hierarchically (torso outward): each segment's distal
point moves to anchor + s * (point - anchor) and its descendant keypoints
translate rigidly with it, so each part controls exactly its own length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rotations import axis_angle_to_quat, quat_normalize, quat_to_axis_angle

N_KEYPOINTS = 17

KEYPOINT_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
    "l_elbow", "l_wrist", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee",
    "l_ankle", "r_eye", "l_eye", "face_aux",
)

PART_NAMES = ("neck", "face", "shoulders", "arm_upper", "arm_lower", "hands",
              "torso", "leg_upper", "leg_lower", "feet")

MIDHIP = "midhip"

# measurement segments per part, one tuple per side
_MEASURE = {
    "neck": [(1, 0)],
    "face": [(0, 14), (0, 15)],
    "shoulders": [(1, 2), (1, 5)],
    "arm_upper": [(2, 3), (5, 6)],
    "arm_lower": [(3, 4), (6, 7)],
    "hands": [],
    "torso": [(1, MIDHIP)],
    "leg_upper": [(8, 9), (11, 12)],
    "leg_lower": [(9, 10), (12, 13)],
    "feet": [],
}

# application order: (part, [(anchor, distal, descendants), ...])
_APPLY = (
    ("torso", [(MIDHIP, 1, (0, 2, 3, 4, 5, 6, 7, 14, 15, 16))]),
    ("neck", [(1, 0, ())]),
    ("face", [(1, 14, ()), (1, 15, ()), (1, 16, ())]),
    ("shoulders", [(1, 2, (3, 4)), (1, 5, (6, 7))]),
    ("arm_upper", [(2, 3, (4,)), (5, 6, (7,))]),
    ("arm_lower", [(3, 4, ()), (6, 7, ())]),
    ("hands", []),
    ("leg_upper", [(8, 9, (10,)), (11, 12, (13,))]),
    ("leg_lower", [(9, 10, ()), (12, 13, ())]),
    ("feet", []),
)


@dataclass
class Skeleton2D:
    keypoints: np.ndarray  # (17, 3): x px, y px, confidence

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(N_KEYPOINTS, 3)

    def validate(self) -> None:
        conf = self.keypoints[:, 2]
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidences must be in [0, 1]")

    def copy(self) -> "Skeleton2D":
        return Skeleton2D(self.keypoints.copy())


@dataclass
class BodyPartScales:
    neck: float = 1.0
    face: float = 1.0
    shoulders: float = 1.0
    arm_upper: float = 1.0
    arm_lower: float = 1.0
    hands: float = 1.0
    torso: float = 1.0
    leg_upper: float = 1.0
    leg_lower: float = 1.0
    feet: float = 1.0
    fallback_parts: tuple = ()

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PART_NAMES}

    def __getitem__(self, part: str) -> float:
        return getattr(self, part)


def _point(kps: np.ndarray, ref) -> np.ndarray:
    if ref == MIDHIP:
        return 0.5 * (kps[8, :2] + kps[11, :2])
    return kps[ref, :2]


def _conf_ok(kps: np.ndarray, ref, min_conf: float) -> bool:
    if ref == MIDHIP:
        return kps[8, 2] >= min_conf and kps[11, 2] >= min_conf
    return kps[ref, 2] >= min_conf


def compute_scales(ref: Skeleton2D, src: Skeleton2D, min_conf: float = 0.3) -> BodyPartScales:
    """Per-part ref/src segment length ratios, bilateral sides averaged.

    A side counts only when all its endpoints are confident in both
    skeletons and the source segment is non-degenerate; parts with no usable
    side fall back to 1 and are flagged.
    """
    rk = ref.keypoints
    sk = src.keypoints
    values: dict[str, float] = {}
    fallback: list[str] = []
    for part in PART_NAMES:
        ratios = []
        for a, b in _MEASURE[part]:
            ok = all(_conf_ok(k, e, min_conf) for k in (rk, sk) for e in (a, b))
            if not ok:
                continue
            src_len = float(np.linalg.norm(_point(sk, a) - _point(sk, b)))
            ref_len = float(np.linalg.norm(_point(rk, a) - _point(rk, b)))
            if src_len == 0.0:
                continue
            ratios.append(ref_len / src_len)
        if ratios:
            values[part] = float(np.mean(ratios))
        else:
            values[part] = 1.0
            fallback.append(part)
    return BodyPartScales(**values, fallback_parts=tuple(fallback))


def apply_scales(src: Skeleton2D, scales: BodyPartScales) -> Skeleton2D:
    """Rescale body parts about their anchors, hierarchically from the torso
    outward; descendants translate rigidly with their part's distal point."""
    out = src.copy()
    kps = out.keypoints
    for part, segments in _APPLY:
        s = scales[part]
        for anchor, distal, descendants in segments:
            c = _point(kps, anchor)
            old = kps[distal, :2].copy()
            new = c + s * (old - c)
            kps[distal, :2] = new
            delta = new - old
            for d in descendants:
                kps[d, :2] += delta
    return out


def savgol(series: np.ndarray, window: int = 9, order: int = 2) -> np.ndarray:
    """Savitzky-Golay smoothing with truncated-window refits at the edges.

    Each output sample is the value at the center of a least-squares
    polynomial fit over the window clipped to the series bounds; the
    effective order drops when the clipped window is shorter than order+1.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ValueError("savgol expects a 1-D series")
    t_len = len(series)
    if t_len < 1:
        raise ValueError("series must have at least one sample")
    if window % 2 != 1:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("order must be smaller than window")
    half = window // 2
    out = np.empty(t_len)
    weight_cache: dict[tuple[int, int], np.ndarray] = {}
    for t in range(t_len):
        lo = max(0, t - half)
        hi = min(t_len, t + half + 1)
        key = (t - lo, hi - t)
        weights = weight_cache.get(key)
        if weights is None:
            offsets = np.arange(lo, hi) - t
            eff_order = min(order, len(offsets) - 1)
            design = np.vander(offsets, eff_order + 1, increasing=True)
            # value at offset 0 equals the constant coefficient
            weights = np.linalg.pinv(design)[0]
            weight_cache[key] = weights
        out[t] = weights @ series[lo:hi]
    return out


def quat_continuity(quats: np.ndarray) -> np.ndarray:
    """Flip quaternion signs so consecutive dot products are nonnegative."""
    quats = np.asarray(quats, dtype=float).reshape(-1, 4)
    norms = np.linalg.norm(quats, axis=1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("quaternions must be unit norm")
    out = quats.copy()
    for t in range(1, len(out)):
        if out[t - 1] @ out[t] < 0.0:
            out[t] = -out[t]
    return out


def momentum_smooth(series: np.ndarray, alpha: float) -> np.ndarray:
    """Exponential smoothing y_t = alpha * y_{t-1} + (1 - alpha) * x_t."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    series = np.asarray(series, dtype=float)
    out = series.copy()
    for t in range(1, len(out)):
        out[t] = alpha * out[t - 1] + (1.0 - alpha) * series[t]
    return out


def smooth_rotation_series(aa_series: np.ndarray, window: int = 9, order: int = 2,
                           momentum: float | None = None) -> np.ndarray:
    """Smooth an axis-angle trajectory (T, 3) in quaternion space.

    Sign continuity first, then per-component Savitzky-Golay (and optional
    momentum smoothing), then renormalization.
    """
    aa_series = np.asarray(aa_series, dtype=float).reshape(-1, 3)
    quats = quat_continuity(axis_angle_to_quat(aa_series))
    smoothed = np.stack([savgol(quats[:, i], window, order) for i in range(4)], axis=1)
    if momentum is not None:
        smoothed = momentum_smooth(smoothed, momentum)
    return quat_to_axis_angle(quat_normalize(smoothed))


def sliding_windows(t_len: int, size: int = 48, overlap: int = 4):
    """Overlapping chunk layout plus per-frame crossfade weights.

    Returns (windows, weights): windows is a list of [start, end) pairs with
    stride size-overlap and a right-aligned tail; weights is (n_windows,
    t_len) with linear crossfades over actual overlaps, summing to 1 for
    every covered frame.
    """
    if t_len < 1:
        raise ValueError("need at least one frame")
    if not 0 <= overlap < size:
        raise ValueError("overlap must be smaller than the window size")
    size = min(size, t_len)
    stride = size - overlap if size > overlap else 1
    windows = [(0, size)]
    while windows[-1][1] < t_len:
        start = windows[-1][0] + stride
        if start + size >= t_len:
            start = t_len - size
        windows.append((start, start + size))
    weights = np.zeros((len(windows), t_len))
    for k, (s, e) in enumerate(windows):
        ramp = np.ones(e - s)
        if k > 0:
            ov = windows[k - 1][1] - s  # overlap with previous window
            if ov > 0:
                ramp[:ov] = np.arange(1, ov + 1) / (ov + 1)
        if k + 1 < len(windows):
            ov = e - windows[k + 1][0]
            if ov > 0:
                ramp[e - s - ov:] = np.arange(ov, 0, -1) / (ov + 1)
        weights[k, s:e] = ramp
    weights /= weights.sum(axis=0, keepdims=True)
    return windows, weights


def save_skeletons_jsonl(path, skeletons) -> None:
    with open(str(path), "w") as fh:
        for i, s in enumerate(skeletons):
            fh.write(json.dumps({"frame": i, "keypoints": s.keypoints.tolist()}) + "\n")


def load_skeletons_jsonl(path) -> list[Skeleton2D]:
    out = []
    for line in Path(str(path)).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(Skeleton2D(np.array(rec["keypoints"], dtype=float)))
    return out
