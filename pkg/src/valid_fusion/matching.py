"""Camera association for LiDAR detections and construction of verifier samples."""

from __future__ import annotations

import csv
import enum
import logging
import os
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import ImageDims, iou, normalize
from .kitti_io import (
    DEFAULT_CLASS,
    DONTCARE,
    Detection,
    GroundTruthObject,
    Modality,
    is_class,
    list_frames,
    load_detection_dir,
    load_label_dir,
)

log = logging.getLogger(__name__)


class FeatureLayout(enum.Enum):
    SINGLE_11 = 11
    DUAL_17 = 17

    @property
    def n_features(self) -> int:
        return self.value

    @classmethod
    def for_cameras(cls, n_cameras: int) -> FeatureLayout:
        return {1: cls.SINGLE_11, 2: cls.DUAL_17}[n_cameras]


SINGLE_COLUMNS = ("l_cx", "l_cy", "l_w", "l_h", "c_cx", "c_cy", "c_w", "c_h", "s_l", "s_c", "iou_lc")
DUAL_COLUMNS = SINGLE_COLUMNS + ("c2_cx", "c2_cy", "c2_w", "c2_h", "s_c2", "iou_lc2")


def feature_columns(layout: FeatureLayout) -> tuple[str, ...]:
    return SINGLE_COLUMNS if layout is FeatureLayout.SINGLE_11 else DUAL_COLUMNS


@dataclass(frozen=True)
class MatchConfig:
    tau_match: float = 0.5
    tau_match_openvocab: float = 0.3
    tau_gt: float = 0.7
    # Which camera sources are open-vocabulary (use the lower match threshold).
    camera_openvocab: bool = False
    camera2_openvocab: bool = True
    class_name: str = DEFAULT_CLASS

    def __post_init__(self):
        if not 0.0 <= self.tau_match_openvocab <= self.tau_match <= 1.0:
            raise ValueError("need 0 <= tau_match_openvocab <= tau_match <= 1")
        if not 0.0 < self.tau_gt <= 1.0:
            raise ValueError("tau_gt must lie in (0, 1]")

    def threshold_for(self, modality: Modality) -> float:
        openvocab = self.camera2_openvocab if modality is Modality.CAMERA2 else self.camera_openvocab
        return self.tau_match_openvocab if openvocab else self.tau_match


@dataclass(frozen=True)
class TrainingSample:
    features: np.ndarray
    label: int
    frame: str
    lidar_index: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def match_camera(lidar: Detection, cams: Sequence[Detection], tau: float):
    """Best camera box for one LiDAR box, or None.

    Highest IoU wins; ties go to the higher camera score, then the lower index.
    """
    best = None
    best_key = None
    for idx, cam in enumerate(cams):
        overlap = iou(lidar.box, cam.box)
        if overlap < tau or overlap <= 0.0:
            continue
        key = (overlap, cam.score, -idx)
        if best_key is None or key > best_key:
            best_key = key
            best = (cam, overlap)
    return best


def _camera_slots(match, dims: ImageDims) -> list[float]:
    if match is None:
        return [0.0] * 6
    cam, overlap = match
    n = normalize(cam.box, dims)
    return [n.cx, n.cy, n.w, n.h, float(cam.score), float(overlap)]


def build_feature_vector(lidar: Detection, m1, m2, dims: ImageDims,
                         layout: FeatureLayout = FeatureLayout.SINGLE_11) -> np.ndarray:
    """Verifier input in the fixed column order of :func:`feature_columns`.

    Camera slots without a match are exactly zero.
    """
    if layout is FeatureLayout.SINGLE_11 and m2 is not None:
        raise ValueError("second camera match given for the single-camera layout")
    n = normalize(lidar.box, dims)
    cam1 = _camera_slots(m1, dims)
    vec = [n.cx, n.cy, n.w, n.h] + cam1[:4] + [float(lidar.score), cam1[4], cam1[5]]
    if layout is FeatureLayout.DUAL_17:
        vec += _camera_slots(m2, dims)
    return np.asarray(vec, dtype=np.float64)


def label_sample(lidar: Detection, gts: Sequence[GroundTruthObject], tau_gt: float = 0.7) -> int:
    best = max((iou(lidar.box, g.box) for g in gts), default=0.0)
    return int(best >= tau_gt)


def featurize_frame(lidar_dets: Sequence[Detection], cams: Sequence[Sequence[Detection]],
                    dims: ImageDims, cfg: MatchConfig) -> list[np.ndarray]:
    """Feature vectors for every LiDAR detection of one frame.

    ``cams`` holds one detection list per camera source (one or two).
    """
    layout = FeatureLayout.for_cameras(len(cams))
    modalities = (Modality.CAMERA, Modality.CAMERA2)
    cam_lists = [[c for c in cl if is_class(c.class_name, cfg.class_name)] for cl in cams]
    out = []
    for det in lidar_dets:
        matches = [
            match_camera(det, cl, cfg.threshold_for(mod)) for cl, mod in zip(cam_lists, modalities)
        ]
        m2 = matches[1] if len(matches) > 1 else None
        out.append(build_feature_vector(det, matches[0], m2, dims, layout))
    return out


def evaluated_lidar(dets: Sequence[Detection], class_name: str) -> list[tuple[int, Detection]]:
    """(original index, detection) for LiDAR boxes of the verified class."""
    return [(i, d) for i, d in enumerate(dets) if is_class(d.class_name, class_name)]


def _frame_samples(frame, lidar, cams, gts, dims, cfg):
    kept = evaluated_lidar(lidar, cfg.class_name)
    gts = [g for g in gts if g.class_name != DONTCARE and is_class(g.class_name, cfg.class_name)]
    feats = featurize_frame([d for _, d in kept], cams, dims, cfg)
    return [
        TrainingSample(f, label_sample(d, gts, cfg.tau_gt), frame, idx)
        for (idx, d), f in zip(kept, feats)
    ]


def build_dataset(lidar_dir, cam_dirs: Sequence, gt_dir, meta: Mapping[str, ImageDims],
                  cfg: MatchConfig = MatchConfig(), frames: Sequence[str] | None = None,
                  threads: int = 1) -> list[TrainingSample]:
    """One labeled sample per LiDAR detection of the evaluated class.

    Samples are ordered by frame id, then by position in the LiDAR file.
    Raises FileNotFoundError when a LiDAR frame has no label file.
    """
    if not 1 <= len(cam_dirs) <= 2:
        raise ValueError("one or two camera directories are supported")
    if frames is None:
        frames = list_frames(lidar_dir)
    lidar = load_detection_dir(lidar_dir, Modality.LIDAR, frames)
    gts = load_label_dir(gt_dir, frames)
    modalities = (Modality.CAMERA, Modality.CAMERA2)
    cams = [load_detection_dir(d, m, frames) for d, m in zip(cam_dirs, modalities)]

    def work(frame):
        return _frame_samples(frame, lidar[frame], [c[frame] for c in cams], gts[frame], meta[frame], cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_frame = list(pool.map(work, frames))
    else:
        per_frame = [work(f) for f in frames]
    samples = [s for chunk in per_frame for s in chunk]
    samples.sort(key=lambda s: (int(s.frame), s.frame, s.lidar_index))
    return samples


def split_frames(frames: Sequence[str], train_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded frame-level train/test partition; both sides non-empty."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    frames = sorted(set(frames), key=lambda f: (int(f), f))
    if len(frames) < 2:
        raise ValueError("need at least two frames to split")
    n_train = min(len(frames) - 1, max(1, round(len(frames) * train_fraction)))
    order = np.random.default_rng(seed).permutation(len(frames))
    train = sorted((frames[i] for i in order[:n_train]), key=lambda f: (int(f), f))
    test = sorted((frames[i] for i in order[n_train:]), key=lambda f: (int(f), f))
    return train, test


def samples_to_arrays(samples: Sequence[TrainingSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0)), np.zeros(0)
    X = np.vstack([s.features for s in samples])
    y = np.asarray([s.label for s in samples], dtype=np.float64)
    return X, y


def layout_of(samples: Sequence[TrainingSample]) -> FeatureLayout:
    lengths = {len(s.features) for s in samples}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent feature lengths: {sorted(lengths)}")
    return FeatureLayout(lengths.pop())


class FeatureCsvError(ValueError):
    def __init__(self, path, row: int, message: str):
        self.row = row
        super().__init__(f"{path}: row {row}: {message}")


def write_features_csv(samples: Sequence[TrainingSample], path, layout: FeatureLayout | None = None) -> None:
    if layout is None:
        layout = layout_of(samples) if samples else FeatureLayout.SINGLE_11
    cols = feature_columns(layout)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "lidar_index", *cols, "label"])
        for s in samples:
            if len(s.features) != len(cols):
                raise ValueError(f"sample in frame {s.frame} has {len(s.features)} features, expected {len(cols)}")
            w.writerow([s.frame, s.lidar_index, *(f"{v:.6f}" for v in s.features), s.label])


def read_features_csv(path) -> tuple[list[TrainingSample], FeatureLayout]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FeatureCsvError(path, 1, "missing header")
        n_feat = len(header) - 3
        if header[:2] != ["frame", "lidar_index"] or header[-1] != "label" or n_feat not in (11, 17):
            raise FeatureCsvError(path, 1, "unexpected header")
        layout = FeatureLayout(n_feat)
        if tuple(header[2:-1]) != feature_columns(layout):
            raise FeatureCsvError(path, 1, "unexpected feature column names")
        samples = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FeatureCsvError(path, rowno, f"expected {len(header)} columns, got {len(row)}")
            try:
                feats = np.asarray([float(v) for v in row[2:-1]], dtype=np.float64)
                label = int(row[-1])
                sample = TrainingSample(feats, label, row[0], int(row[1]))
            except ValueError as exc:
                raise FeatureCsvError(path, rowno, str(exc)) from None
            if not np.all(np.isfinite(feats)):
                raise FeatureCsvError(path, rowno, "non-finite feature")
            samples.append(sample)
    return samples, layout


def missing_frames(lidar_dir, gt_dir) -> list[str]:
    return [f for f in list_frames(lidar_dir) if not os.path.exists(os.path.join(gt_dir, f"{f}.txt"))]
