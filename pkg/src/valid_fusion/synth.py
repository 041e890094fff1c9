"""Seeded synthetic KITTI-style scenes with an over-firing LiDAR detector.

Each frame draws its own RNG streams from ``(master seed, frame id, stream)``
so any frame can be regenerated on its own. The default profiles mimic the
regime of interest: LiDAR false positives spread over every confidence band,
LiDAR true positives concentrated at high confidence, and camera detectors
that rarely fire on the LiDAR false positives.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .geometry import Box2D, ImageDims, iou
from .kitti_io import (
    DEFAULT_CLASS,
    Detection,
    GroundTruthObject,
    Modality,
    write_detection_file,
    write_frame_meta,
    write_label_file,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MIN_BOX_PX = 2.0

_STREAM = {"scene": 0, Modality.LIDAR: 1, Modality.CAMERA: 2, Modality.CAMERA2: 3}


def _band_dist(values) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if len(vals) != 10 or any(v < 0 for v in vals):
        raise ValueError("score distributions need 10 non-negative band weights")
    total = sum(vals)
    if not total > 0:
        raise ValueError("score distribution weights sum to zero")
    return tuple(v / total for v in vals)


@dataclass(frozen=True)
class DetectorProfile:
    detect_prob: float = 0.95
    box_jitter_sigma: float = 0.03
    fp_per_frame: float = 2.0
    tp_score_dist: tuple[float, ...] = (0.005, 0.005, 0.01, 0.01, 0.02, 0.03, 0.04, 0.08, 0.2, 0.6)
    fp_score_dist: tuple[float, ...] = (0.2, 0.16, 0.13, 0.11, 0.09, 0.08, 0.07, 0.06, 0.05, 0.05)
    fp_on_lidar_fp_prob: float = 0.0
    class_name: str = DEFAULT_CLASS

    def __post_init__(self):
        for name in ("detect_prob", "fp_on_lidar_fp_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.box_jitter_sigma < 0 or self.fp_per_frame < 0:
            raise ValueError("jitter and false-positive rate must be non-negative")
        object.__setattr__(self, "tp_score_dist", _band_dist(self.tp_score_dist))
        object.__setattr__(self, "fp_score_dist", _band_dist(self.fp_score_dist))


DEFAULT_LIDAR = DetectorProfile()
DEFAULT_CAMERA = DetectorProfile(
    detect_prob=0.85,
    box_jitter_sigma=0.04,
    fp_per_frame=0.5,
    tp_score_dist=(0, 0, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.25, 0.25),
    fp_score_dist=(0.3, 0.2, 0.15, 0.1, 0.08, 0.06, 0.04, 0.03, 0.02, 0.02),
    fp_on_lidar_fp_prob=0.1,
)


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 500
    image_width: int = 1242
    image_height: int = 375
    gt_min: int = 2
    gt_max: int = 6
    gt_height_range: tuple[float, float] = (18.0, 160.0)
    gt_aspect_range: tuple[float, float] = (1.2, 2.4)
    occlusion_probs: tuple[float, float, float, float] = (0.6, 0.25, 0.1, 0.05)
    truncation_prob: float = 0.15
    truncation_max: float = 0.6
    lidar: DetectorProfile = DEFAULT_LIDAR
    camera: DetectorProfile = DEFAULT_CAMERA
    camera2: DetectorProfile | None = None
    seed: int = 7

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not 0 <= self.gt_min <= self.gt_max:
            raise ValueError("need 0 <= gt_min <= gt_max")
        ImageDims(self.image_width, self.image_height)
        lo, hi = self.gt_height_range
        if not MIN_BOX_PX <= lo <= hi <= self.image_height:
            raise ValueError("gt_height_range must lie within the image height")
        alo, ahi = self.gt_aspect_range
        if not 0 < alo <= ahi or hi * ahi > self.image_width:
            raise ValueError("gt_aspect_range invalid for the image size")
        if len(self.occlusion_probs) != 4 or any(p < 0 for p in self.occlusion_probs) \
                or abs(sum(self.occlusion_probs) - 1.0) > 1e-9:
            raise ValueError("occlusion_probs must be four probabilities summing to 1")
        if not 0 <= self.truncation_prob <= 1 or not 0 <= self.truncation_max <= 1:
            raise ValueError("truncation settings must lie in [0, 1]")

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.image_width, self.image_height)

    @property
    def profiles(self) -> dict[Modality, DetectorProfile]:
        out = {Modality.LIDAR: self.lidar, Modality.CAMERA: self.camera}
        if self.camera2 is not None:
            out[Modality.CAMERA2] = self.camera2
        return out


def frame_id(i: int) -> str:
    return f"{i:06d}"


def frame_rng(master_seed: int, frame: str | int, stream) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(frame), _STREAM[stream]])


def _sample_score(rng: np.random.Generator, dist) -> float:
    band = rng.choice(10, p=dist)
    return float((band + rng.random()) / 10.0)


def _random_box(rng, cfg: SynthConfig) -> Box2D:
    h = rng.uniform(*cfg.gt_height_range)
    w = h * rng.uniform(*cfg.gt_aspect_range)
    x0 = rng.uniform(0.0, cfg.image_width - w)
    y0 = rng.uniform(0.0, cfg.image_height - h)
    return Box2D(x0, y0, x0 + w, y0 + h)


def generate_scene(cfg: SynthConfig, frame_seed) -> tuple[list[GroundTruthObject], ImageDims]:
    """Ground truth for one frame; boxes are non-degenerate and inside the image."""
    rng = frame_rng(cfg.seed, frame_seed, "scene")
    n = int(rng.integers(cfg.gt_min, cfg.gt_max + 1))
    gts = []
    for _ in range(n):
        box = _random_box(rng, cfg)
        occ = int(rng.choice(4, p=cfg.occlusion_probs))
        trunc = float(rng.uniform(0.0, cfg.truncation_max)) if rng.random() < cfg.truncation_prob else 0.0
        gts.append(GroundTruthObject(DEFAULT_CLASS, round(trunc, 2), occ, -10.0, box))
    return gts, cfg.dims


def _jitter(rng, box: Box2D, sigma: float, dims: ImageDims) -> Box2D:
    if sigma == 0:
        return box
    w, h = box.width, box.height
    dx0, dx1 = rng.normal(0.0, sigma * w, size=2)
    dy0, dy1 = rng.normal(0.0, sigma * h, size=2)
    x0 = min(max(box.x_min + dx0, 0.0), dims.width - MIN_BOX_PX)
    y0 = min(max(box.y_min + dy0, 0.0), dims.height - MIN_BOX_PX)
    x1 = min(max(box.x_max + dx1, x0 + MIN_BOX_PX), float(dims.width))
    y1 = min(max(box.y_max + dy1, y0 + MIN_BOX_PX), float(dims.height))
    return Box2D(x0, y0, x1, y1)


def generate_detections(gts, profile: DetectorProfile, seed, dims: ImageDims | None = None,
                        modality: Modality = Modality.LIDAR, frame: str = "000000",
                        anchor_fps=None, cfg: SynthConfig | None = None) -> list[Detection]:
    """Detector output for one frame.

    ``seed`` may be an int or a ready ``numpy.random.Generator``. For camera
    modalities, ``anchor_fps`` lists the LiDAR false-positive boxes; each one
    also draws a camera box near it with probability ``fp_on_lidar_fp_prob``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if cfg is None:
        cfg = SynthConfig()
    dims = dims or cfg.dims
    dets = []
    for g in gts:
        if g.class_name == "DontCare":
            continue
        if rng.random() < profile.detect_prob:
            box = _jitter(rng, g.box, profile.box_jitter_sigma, dims)
            dets.append(Detection(profile.class_name, box, _sample_score(rng, profile.tp_score_dist),
                                  modality, frame))
    for _ in range(int(rng.poisson(profile.fp_per_frame))):
        box = _random_box(rng, cfg)
        dets.append(Detection(profile.class_name, box, _sample_score(rng, profile.fp_score_dist), modality, frame))
    for anchor in anchor_fps or ():
        if rng.random() < profile.fp_on_lidar_fp_prob:
            box = _jitter(rng, anchor, max(profile.box_jitter_sigma, 0.02), dims)
            dets.append(Detection(profile.class_name, box, _sample_score(rng, profile.fp_score_dist),
                                  modality, frame))
    order = rng.permutation(len(dets))
    return [dets[i] for i in order]


@dataclass
class FrameData:
    frame: str
    gts: list[GroundTruthObject]
    dims: ImageDims
    detections: dict[Modality, list[Detection]] = field(default_factory=dict)
    lidar_fp_count: int = 0


def generate_frame(cfg: SynthConfig, index: int) -> FrameData:
    frame = frame_id(index)
    gts, dims = generate_scene(cfg, index)
    lidar_rng = frame_rng(cfg.seed, index, Modality.LIDAR)
    lidar = generate_detections(gts, cfg.lidar, lidar_rng, dims, Modality.LIDAR, frame, cfg=cfg)
    # LiDAR boxes that do not sit on any ground truth are the false positives cameras may echo.
    fp_boxes = [d.box for d in lidar if max((iou(d.box, g.box) for g in gts), default=0.0) < 0.7]
    out = FrameData(frame, gts, dims, {Modality.LIDAR: lidar}, len(fp_boxes))
    for mod in (Modality.CAMERA, Modality.CAMERA2):
        prof = cfg.profiles.get(mod)
        if prof is None:
            continue
        rng = frame_rng(cfg.seed, index, mod)
        out.detections[mod] = generate_detections(gts, prof, rng, dims, mod, frame, anchor_fps=fp_boxes, cfg=cfg)
    return out


def generate_frames(cfg: SynthConfig, threads: int = 1) -> list[FrameData]:
    idx = range(cfg.n_frames)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda i: generate_frame(cfg, i), idx))
    return [generate_frame(cfg, i) for i in idx]


DIR_NAMES = {Modality.LIDAR: "lidar", Modality.CAMERA: "camera", Modality.CAMERA2: "camera2"}
META_NAME = "frame_meta.txt"
ECHO_NAME = "synth_config.json"


def generate_dataset(cfg: SynthConfig, out_dir, threads: int = 1) -> dict[str, str]:
    """Write label/, lidar/, camera/ (camera2/) and the frame-meta file.

    Returns the created paths keyed by role.
    """
    paths = {"label": os.path.join(out_dir, "label")}
    for mod in cfg.profiles:
        paths[DIR_NAMES[mod]] = os.path.join(out_dir, DIR_NAMES[mod])
    for p in paths.values():
        os.makedirs(p, exist_ok=True)
    frames = generate_frames(cfg, threads)
    meta = {}
    for fd in frames:
        write_label_file(fd.gts, os.path.join(paths["label"], f"{fd.frame}.txt"))
        for mod, dets in fd.detections.items():
            write_detection_file(dets, os.path.join(paths[DIR_NAMES[mod]], f"{fd.frame}.txt"))
        meta[fd.frame] = fd.dims
    paths["meta"] = os.path.join(out_dir, META_NAME)
    write_frame_meta(meta, paths["meta"])
    paths["config"] = os.path.join(out_dir, ECHO_NAME)
    with open(paths["config"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return paths


def config_to_dict(cfg: SynthConfig) -> dict:
    doc = asdict(cfg)
    return json.loads(json.dumps(doc))


def _profile_from(doc: dict, base: DetectorProfile) -> DetectorProfile:
    known = {f.name for f in fields(DetectorProfile)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown detector profile keys: {sorted(unknown)}")
    return replace(base, **{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


def config_from_dict(doc: dict) -> SynthConfig:
    doc = dict(doc)
    kwargs = {}
    for key, base in (("lidar", DEFAULT_LIDAR), ("camera", DEFAULT_CAMERA), ("camera2", DEFAULT_CAMERA)):
        if key in doc:
            sub = doc.pop(key)
            kwargs[key] = None if sub is None else _profile_from(sub, base)
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
    for k, v in doc.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    return SynthConfig(**kwargs)


def load_config(path) -> SynthConfig:
    """Read a TOML synth config; a ``[synth]`` table is used when present."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return config_from_dict(doc.get("synth", doc))


def fixture_path(name: str) -> str:
    return str(resources.files("valid_fusion") / "fixtures" / f"{name}.toml")


def load_fixture(name: str = "default") -> SynthConfig:
    return load_config(fixture_path(name))
