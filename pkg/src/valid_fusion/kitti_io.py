"""Reading and writing KITTI object label files and detection result files.

Label lines carry 15 whitespace-separated fields::

    type truncated occluded alpha left top right bottom h w l x y z rotation_y

Detection (result) lines append a 16th field, the confidence score. Only the
2D fields are interpreted here; the 3D fields pass through untouched.
"""

from __future__ import annotations

import enum
import math
import os
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import KITTI_DEFAULT_DIMS, Box2D, ImageDims

LABEL_FIELDS = 15
DETECTION_FIELDS = 16

DEFAULT_CLASS = "Car"
DONTCARE = "DontCare"

# KITTI devkit band limits: (min box height px, max occlusion, max truncation)
_BAND_LIMITS = {
    "EASY": (40.0, 0, 0.15),
    "MODERATE": (25.0, 1, 0.30),
    "HARD": (25.0, 2, 0.50),
}

_FRAME_RE = re.compile(r"^\d+$")


class ParseError(ValueError):
    """A malformed line in a KITTI-format text file."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class Modality(enum.Enum):
    LIDAR = "lidar"
    CAMERA = "camera"
    CAMERA2 = "camera2"


class Difficulty(enum.IntEnum):
    """Evaluation bands, ordered from easiest to excluded."""

    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


def check_frame_id(frame: str) -> str:
    if not _FRAME_RE.match(frame):
        raise ValueError(f"frame id must be a non-negative integer string, got {frame!r}")
    return frame


@dataclass(frozen=True)
class GroundTruthObject:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    box: Box2D
    extra3d: tuple[float, ...] = (0.0,) * 7

    def __post_init__(self):
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"truncation out of [0,1]: {self.truncation}")
        if self.occlusion not in (0, 1, 2, 3):
            raise ValueError(f"occlusion must be 0..3, got {self.occlusion}")


@dataclass(frozen=True)
class Detection:
    class_name: str
    box: Box2D
    score: float
    modality: Modality
    frame: str = "000000"
    # Original file line, kept so filtered output can be written back verbatim.
    source_line: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score: {self.score}")

    def with_score(self, score: float) -> Detection:
        return Detection(self.class_name, self.box, score, self.modality, self.frame, self.source_line)


@dataclass(frozen=True)
class FrameMeta:
    frame: str
    dims: ImageDims


def _float(tok: str, path, lineno: int, name: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(path, lineno, f"non-numeric {name} field {tok!r}") from None
    if not math.isfinite(val):
        raise ParseError(path, lineno, f"non-finite {name} field {tok!r}")
    return val


def _parse_common(toks: list[str], path, lineno: int):
    trunc = _float(toks[1], path, lineno, "truncated")
    occ = _float(toks[2], path, lineno, "occluded")
    alpha = _float(toks[3], path, lineno, "alpha")
    coords = [_float(t, path, lineno, "bbox") for t in toks[4:8]]
    extra = tuple(_float(t, path, lineno, "3d") for t in toks[8:15])
    try:
        box = Box2D(*coords)
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None
    return trunc, occ, alpha, box, extra


def _lines(path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line.rstrip("\r\n")


def parse_label_file(path) -> list[GroundTruthObject]:
    objects = []
    for lineno, line in _lines(path):
        toks = line.split()
        if len(toks) < LABEL_FIELDS:
            raise ParseError(path, lineno, f"expected {LABEL_FIELDS} fields, got {len(toks)}")
        trunc, occ, alpha, box, extra = _parse_common(toks, path, lineno)
        if occ != int(occ):
            raise ParseError(path, lineno, f"occlusion must be an integer, got {toks[2]!r}")
        # DontCare rows use -1 placeholders for truncation/occlusion.
        if toks[0] == DONTCARE:
            trunc, occ = 0.0, 0
        try:
            obj = GroundTruthObject(toks[0], trunc, int(occ), alpha, box, extra)
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        objects.append(obj)
    return objects


def parse_detection_file(path, modality: Modality, frame: str | None = None) -> list[Detection]:
    """Parse a 16-field KITTI result file.

    Scores are returned as written; use :func:`rescale_scores` to bring a file
    whose scores leave [0, 1] into range.
    """
    if frame is None:
        frame = Path(path).stem
    dets = []
    for lineno, line in _lines(path):
        toks = line.split()
        if len(toks) < DETECTION_FIELDS:
            raise ParseError(path, lineno, f"expected {DETECTION_FIELDS} fields (score missing?), got {len(toks)}")
        _, _, _, box, _ = _parse_common(toks, path, lineno)
        score = _float(toks[15], path, lineno, "score")
        dets.append(Detection(toks[0], box, score, modality, frame, line))
    return dets


def rescale_scores(dets: list[Detection]) -> list[Detection]:
    """Min-max rescale a file's scores to [0, 1] when any score is outside it.

    A constant out-of-range file has no spread to rescale and is clipped.
    """
    if not dets:
        return dets
    scores = [d.score for d in dets]
    lo, hi = min(scores), max(scores)
    if lo >= 0.0 and hi <= 1.0:
        return dets
    if hi == lo:
        return [d.with_score(min(1.0, max(0.0, d.score))) for d in dets]
    return [d.with_score((d.score - lo) / (hi - lo)) for d in dets]


def assign_difficulty(g: GroundTruthObject) -> Difficulty:
    height = g.box.height
    for name in ("EASY", "MODERATE", "HARD"):
        min_h, max_occ, max_trunc = _BAND_LIMITS[name]
        if height >= min_h and g.occlusion <= max_occ and g.truncation <= max_trunc:
            return Difficulty[name]
    return Difficulty.IGNORED


def in_band(g: GroundTruthObject, band: Difficulty) -> bool:
    """Cumulative band membership: an EASY object also counts for MODERATE and HARD."""
    return assign_difficulty(g) <= band


def format_detection_line(d: Detection) -> str:
    b = d.box
    return (
        f"{d.class_name} -1 -1 -10 "
        f"{b.x_min:.4f} {b.y_min:.4f} {b.x_max:.4f} {b.y_max:.4f} "
        f"-1 -1 -1 -1000 -1000 -1000 -10 {d.score:.6f}"
    )


def format_label_line(g: GroundTruthObject) -> str:
    b = g.box
    extra = " ".join(f"{v:.2f}" for v in g.extra3d)
    return (
        f"{g.class_name} {g.truncation:.2f} {g.occlusion:d} {g.alpha:.2f} "
        f"{b.x_min:.2f} {b.y_min:.2f} {b.x_max:.2f} {b.y_max:.2f} {extra}"
    )


def write_detection_file(dets: Iterable[Detection], path, verbatim: bool = False) -> None:
    """Write detections of one frame as KITTI result lines.

    With ``verbatim`` the original source line is reused whenever it is known.
    """
    dets = list(dets)
    frames = {d.frame for d in dets}
    if len(frames) > 1:
        raise ValueError(f"detections span several frames: {sorted(frames)}")
    lines = []
    for d in dets:
        if verbatim and d.source_line is not None:
            lines.append(d.source_line)
        else:
            lines.append(format_detection_line(d))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise OSError(f"cannot write detection file {path}: {exc.strerror}") from exc


def write_label_file(objects: Iterable[GroundTruthObject], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(format_label_line(g) + "\n" for g in objects))


class FrameMetaMap(Mapping):
    """Frame id to image dims, with an optional fallback for unlisted frames."""

    def __init__(self, entries: dict[str, ImageDims] | None = None, default: ImageDims | None = KITTI_DEFAULT_DIMS):
        self._entries = dict(entries or {})
        self.default = default

    def __getitem__(self, frame: str) -> ImageDims:
        try:
            return self._entries[frame]
        except KeyError:
            if self.default is None:
                raise
            return self.default

    def __contains__(self, frame) -> bool:
        return frame in self._entries or self.default is not None

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)


def load_frame_meta(path, default: ImageDims | None = KITTI_DEFAULT_DIMS) -> FrameMetaMap:
    """Load a ``frame width height`` table.

    Two-column rows (``frame WIDTHxHEIGHT``) are also accepted. A missing file
    is allowed only when a default is configured.
    """
    if path is None or not os.path.exists(path):
        if default is None:
            raise FileNotFoundError(f"frame meta file not found: {path}")
        return FrameMetaMap({}, default)
    entries: dict[str, ImageDims] = {}
    for lineno, line in _lines(path):
        toks = line.split("#", 1)[0].split()
        if not toks:
            continue
        if len(toks) == 3:
            frame, w_tok, h_tok = toks
        elif len(toks) == 2 and "x" in toks[1]:
            frame = toks[0]
            w_tok, h_tok = toks[1].split("x", 1)
        else:
            raise ParseError(path, lineno, "expected 'frame width height'")
        try:
            check_frame_id(frame)
            dims = ImageDims(int(w_tok), int(h_tok))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if frame in entries:
            raise ParseError(path, lineno, f"duplicate frame {frame}")
        entries[frame] = dims
    return FrameMetaMap(entries, default)


def write_frame_meta(meta: Mapping[str, ImageDims], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(meta):
            d = meta[frame]
            fh.write(f"{frame} {d.width} {d.height}\n")


def list_frames(directory) -> list[str]:
    """Frame ids of every ``<digits>.txt`` file in a directory, ascending."""
    frames = []
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext == ".txt" and _FRAME_RE.match(stem):
            frames.append(stem)
    return sorted(frames, key=lambda f: (int(f), f))


def load_detection_dir(directory, modality: Modality, frames: Iterable[str] | None = None,
                       rescale: bool = True) -> dict[str, list[Detection]]:
    """Detections per frame; frames without a file map to an empty list."""
    if frames is None:
        frames = list_frames(directory)
    out = {}
    for frame in frames:
        path = os.path.join(directory, f"{frame}.txt")
        if os.path.exists(path):
            dets = parse_detection_file(path, modality, frame)
            out[frame] = rescale_scores(dets) if rescale else dets
        else:
            out[frame] = []
    return out


def load_label_dir(directory, frames: Iterable[str] | None = None) -> dict[str, list[GroundTruthObject]]:
    if frames is None:
        frames = list_frames(directory)
    missing = [f for f in frames if not os.path.exists(os.path.join(directory, f"{f}.txt"))]
    if missing:
        raise FileNotFoundError(f"no ground truth for frames: {' '.join(missing)}")
    return {f: parse_label_file(os.path.join(directory, f"{f}.txt")) for f in frames}


def is_class(name: str, wanted: str) -> bool:
    return name.lower() == wanted.lower()
