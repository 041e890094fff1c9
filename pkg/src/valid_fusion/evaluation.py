"""KITTI-style 2D detection evaluation.

Detections are matched greedily in descending score order against ground
truth of the evaluated class. Ground truth outside the evaluated difficulty
band, "Van" boxes during Car evaluation, and DontCare regions absorb
detections without counting them as true or false positives.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .geometry import iou
from .kitti_io import DEFAULT_CLASS, DONTCARE, Detection, Difficulty, GroundTruthObject, in_band, is_class

BANDS = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)
N_SCORE_BANDS = 10


class Outcome(enum.Enum):
    TP = "TP"
    FP = "FP"
    IGNORED = "IGNORED"


class NoGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.7
    class_name: str = DEFAULT_CLASS
    van_ignore: bool = True
    dontcare_iou: float = 0.5


@dataclass(frozen=True)
class PRPoint:
    score_threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass
class BandResult:
    ap_11: float | None
    ap_40: float | None
    pr_curve: list[PRPoint]
    tp: int
    fp: int
    n_gt: int


@dataclass
class ApReport:
    bands: dict[str, BandResult]
    metadata: dict = field(default_factory=dict)


@dataclass
class BandHistogram:
    tp_count: list[int]
    fp_count: list[int]

    @property
    def edges(self) -> list[float]:
        return [i / N_SCORE_BANDS for i in range(N_SCORE_BANDS + 1)]


def _gt_role(g: GroundTruthObject, difficulty: Difficulty, cfg: EvalConfig) -> str:
    if g.class_name == DONTCARE:
        return "dontcare"
    if is_class(g.class_name, cfg.class_name):
        return "valid" if in_band(g, difficulty) else "ignored"
    if cfg.van_ignore and is_class(cfg.class_name, "Car") and is_class(g.class_name, "Van"):
        return "ignored"
    return "other"


def match_for_eval(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
                   difficulty: Difficulty = Difficulty.MODERATE, iou_thresh: float = 0.7,
                   cfg: EvalConfig | None = None) -> list[Outcome]:
    """Classify each detection of one frame; the result is aligned with ``dets``.

    Detections are visited by descending score (stable for ties). Each claims
    the highest-IoU unclaimed ground truth at or above ``iou_thresh``,
    preferring boxes that count in the evaluated band. Detections of another
    class are IGNORED.
    """
    if cfg is None:
        cfg = EvalConfig(iou_thresh=iou_thresh)
    else:
        iou_thresh = cfg.iou_thresh
    roles = [_gt_role(g, difficulty, cfg) for g in gts]
    claimed = [False] * len(gts)
    out = [Outcome.IGNORED] * len(dets)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    for i in order:
        det = dets[i]
        if not is_class(det.class_name, cfg.class_name):
            continue
        overlaps = [iou(det.box, g.box) for g in gts]
        picked = None
        for wanted in ("valid", "ignored"):
            best = -1.0
            for j, (role, ov) in enumerate(zip(roles, overlaps)):
                if role == wanted and not claimed[j] and ov >= iou_thresh and ov > best:
                    best, picked = ov, j
            if picked is not None:
                break
        if picked is not None:
            claimed[picked] = True
            out[i] = Outcome.TP if roles[picked] == "valid" else Outcome.IGNORED
        elif any(role == "dontcare" and ov >= cfg.dontcare_iou for role, ov in zip(roles, overlaps)):
            out[i] = Outcome.IGNORED
        else:
            out[i] = Outcome.FP
    return out


def count_band_gt(gts: Sequence[GroundTruthObject], difficulty: Difficulty, cfg: EvalConfig = EvalConfig()) -> int:
    return sum(1 for g in gts if _gt_role(g, difficulty, cfg) == "valid")


def _frame_key(frame: str):
    return (int(frame), frame) if frame.isdigit() else (0, frame)


def _as_frames(dets, gts) -> tuple[dict, dict]:
    if isinstance(dets, Mapping):
        return dets, gts
    return {"0": list(dets)}, {"0": list(gts)}


def ranked_outcomes(dets, gts, difficulty: Difficulty, cfg: EvalConfig = EvalConfig()):
    """Pooled non-ignored (score, is_tp) entries, ranked, and the band GT total.

    Ranking is by score descending, then frame, then index in the frame.
    """
    dets, gts = _as_frames(dets, gts)
    entries = []
    n_gt = 0
    for frame in sorted(set(dets) | set(gts), key=_frame_key):
        fd = dets.get(frame, [])
        fg = gts.get(frame, [])
        n_gt += count_band_gt(fg, difficulty, cfg)
        for idx, (det, res) in enumerate(zip(fd, match_for_eval(fd, fg, difficulty, cfg=cfg))):
            if res is not Outcome.IGNORED:
                entries.append((det.score, _frame_key(frame), idx, res is Outcome.TP))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    return [(e[0], e[3]) for e in entries], n_gt


def pr_curve(ranked: Sequence[tuple[float, bool]], gt_count: int) -> list[PRPoint]:
    """One point per distinct score, accumulated down the ranking."""
    if gt_count <= 0:
        raise NoGroundTruthError("recall is undefined without ground truth in the band")
    points = []
    tp = fp = 0
    for k, (score, is_tp) in enumerate(ranked):
        if is_tp:
            tp += 1
        else:
            fp += 1
        if k + 1 < len(ranked) and ranked[k + 1][0] == score:
            continue
        points.append(PRPoint(float(score), tp / (tp + fp), tp / gt_count, tp, fp, gt_count - tp))
    return points


def _interp_ap(pr: Sequence[PRPoint], levels: np.ndarray) -> float:
    if not pr:
        return 0.0
    rec = np.array([p.recall for p in pr])
    prec = np.array([p.precision for p in pr])
    # running max from the right: best precision at recall >= r
    best_right = np.maximum.accumulate(prec[::-1])[::-1]
    vals = []
    for r in levels:
        # recall is non-decreasing along the curve
        idx = np.searchsorted(rec, r, side="left")
        vals.append(float(best_right[idx]) if idx < len(rec) else 0.0)
    return 100.0 * math.fsum(vals) / len(levels)


# i/n is correctly rounded, so it compares equal to tp/gt for the same rational
RECALL_11 = np.arange(0, 11) / 10.0
RECALL_40 = np.arange(1, 41) / 40.0


def ap_11(pr: Sequence[PRPoint]) -> float:
    return _interp_ap(pr, RECALL_11)


def ap_40(pr: Sequence[PRPoint]) -> float:
    return _interp_ap(pr, RECALL_40)


def tp_fp_table(dets, gts, difficulty: Difficulty, score_floor: float = 0.0,
                cfg: EvalConfig = EvalConfig()) -> tuple[int, int]:
    """TP and FP counts over detections scoring at least ``score_floor``.

    Accepts one frame (lists) or several (frame-keyed mappings).
    """
    dets, gts = _as_frames(dets, gts)
    tp = fp = 0
    for frame, fd in dets.items():
        for det, res in zip(fd, match_for_eval(fd, gts.get(frame, []), difficulty, cfg=cfg)):
            if det.score < score_floor:
                continue
            tp += res is Outcome.TP
            fp += res is Outcome.FP
    return tp, fp


def score_band(score: float) -> int:
    return min(N_SCORE_BANDS - 1, max(0, int(score * N_SCORE_BANDS)))


def band_histogram(dets, gts, difficulty: Difficulty, cfg: EvalConfig = EvalConfig()) -> BandHistogram:
    dets, gts = _as_frames(dets, gts)
    hist = BandHistogram([0] * N_SCORE_BANDS, [0] * N_SCORE_BANDS)
    for frame, fd in dets.items():
        for det, res in zip(fd, match_for_eval(fd, gts.get(frame, []), difficulty, cfg=cfg)):
            b = score_band(det.score)
            if res is Outcome.TP:
                hist.tp_count[b] += 1
            elif res is Outcome.FP:
                hist.fp_count[b] += 1
    return hist


def evaluate(dets: Mapping[str, Sequence[Detection]], gts: Mapping[str, Sequence[GroundTruthObject]],
             difficulties: Sequence[Difficulty] = BANDS, ap_mode: str = "both", score_floor: float = 0.0,
             cfg: EvalConfig = EvalConfig(), metadata: dict | None = None) -> ApReport:
    """Full report over the frames present in ``gts``.

    Raises NoGroundTruthError when a requested band has no ground truth.
    """
    if ap_mode not in ("11", "40", "both"):
        raise ValueError(f"ap_mode must be '11', '40' or 'both', got {ap_mode!r}")
    frames = sorted(gts, key=_frame_key)
    fdets = {f: list(dets.get(f, [])) for f in frames}
    bands = {}
    for diff in difficulties:
        ranked, n_gt = ranked_outcomes(fdets, gts, diff, cfg)
        if n_gt == 0:
            raise NoGroundTruthError(f"no {cfg.class_name} ground truth in the {diff.name} band")
        pr = pr_curve(ranked, n_gt)
        tp, fp = tp_fp_table(fdets, gts, diff, score_floor, cfg)
        bands[diff.name] = BandResult(
            ap_11(pr) if ap_mode in ("11", "both") else None,
            ap_40(pr) if ap_mode in ("40", "both") else None,
            pr, tp, fp, n_gt,
        )
    meta = {
        "n_frames": len(frames),
        "ap_mode": ap_mode,
        "score_floor": score_floor,
        "iou_thresh": cfg.iou_thresh,
        "class_name": cfg.class_name,
        "van_ignore": cfg.van_ignore,
        "dontcare_iou": cfg.dontcare_iou,
    }
    meta.update(metadata or {})
    return ApReport(bands, meta)


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "metadata", "bands"],
    "properties": {
        "schema_version": {"const": 1},
        "metadata": {"type": "object"},
        "bands": {
            "type": "object",
            "minProperties": 1,
            "propertyNames": {"enum": ["EASY", "MODERATE", "HARD"]},
            "additionalProperties": {
                "type": "object",
                "required": ["tp", "fp", "n_gt", "pr_curve"],
                "properties": {
                    "ap_11": {"type": "number", "minimum": 0, "maximum": 100},
                    "ap_40": {"type": "number", "minimum": 0, "maximum": 100},
                    "tp": {"type": "integer", "minimum": 0},
                    "fp": {"type": "integer", "minimum": 0},
                    "n_gt": {"type": "integer", "minimum": 1},
                    "pr_curve": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["score_threshold", "precision", "recall", "tp", "fp", "fn"],
                            "properties": {
                                "precision": {"type": "number", "minimum": 0, "maximum": 1},
                                "recall": {"type": "number", "minimum": 0, "maximum": 1},
                                "tp": {"type": "integer", "minimum": 0},
                                "fp": {"type": "integer", "minimum": 0},
                                "fn": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
    },
}

_R = 6


def _rounded(x):
    if isinstance(x, float):
        return round(x, _R)
    if isinstance(x, dict):
        return {k: _rounded(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_rounded(v) for v in x]
    return x


def report_to_dict(report: ApReport) -> dict:
    bands = {}
    for name in ("EASY", "MODERATE", "HARD"):
        if name not in report.bands:
            continue
        b = report.bands[name]
        entry = {}
        if b.ap_11 is not None:
            entry["ap_11"] = b.ap_11
        if b.ap_40 is not None:
            entry["ap_40"] = b.ap_40
        entry.update(tp=b.tp, fp=b.fp, n_gt=b.n_gt)
        entry["pr_curve"] = [
            {"score_threshold": p.score_threshold, "precision": p.precision, "recall": p.recall,
             "tp": p.tp, "fp": p.fp, "fn": p.fn}
            for p in b.pr_curve
        ]
        bands[name] = entry
    return _rounded({"schema_version": 1, "metadata": dict(sorted(report.metadata.items())), "bands": bands})


def report_from_dict(doc: dict) -> ApReport:
    bands = {}
    for name, b in doc["bands"].items():
        pr = [PRPoint(float(p["score_threshold"]), float(p["precision"]), float(p["recall"]),
                      int(p["tp"]), int(p["fp"]), int(p["fn"])) for p in b["pr_curve"]]
        bands[name] = BandResult(b.get("ap_11"), b.get("ap_40"), pr, int(b["tp"]), int(b["fp"]), int(b["n_gt"]))
    return ApReport(bands, dict(doc.get("metadata", {})))


def pr_csv_text(report: ApReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["difficulty", "score_threshold", "precision", "recall", "tp", "fp", "fn"])
    for name, b in report.bands.items():
        for p in b.pr_curve:
            w.writerow([name, f"{p.score_threshold:.6f}", f"{p.precision:.6f}", f"{p.recall:.6f}", p.tp, p.fp, p.fn])
    return buf.getvalue()


def emit_report(report: ApReport, path, format: str = "json") -> None:
    if format == "json":
        text = json.dumps(report_to_dict(report), indent=2) + "\n"
    elif format == "csv":
        text = pr_csv_text(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_report(path) -> ApReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


def read_pr_csv(path) -> dict[str, list[PRPoint]]:
    out: dict[str, list[PRPoint]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["difficulty"], []).append(PRPoint(
                float(row["score_threshold"]), float(row["precision"]), float(row["recall"]),
                int(row["tp"]), int(row["fp"]), int(row["fn"])))
    return out


def band_csv_text(hist: BandHistogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["band", "lower", "upper", "tp", "fp"])
    edges = hist.edges
    for i in range(N_SCORE_BANDS):
        w.writerow([i, f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", hist.tp_count[i], hist.fp_count[i]])
    return buf.getvalue()


def format_summary(report: ApReport) -> str:
    """Fixed-width AP table, one row per band."""
    lines = [f"{'band':<10}{'AP11':>12}{'AP40':>12}{'TP':>8}{'FP':>8}{'GT':>8}"]
    for name, b in report.bands.items():
        a11 = f"{b.ap_11:.6f}" if b.ap_11 is not None else "-"
        a40 = f"{b.ap_40:.6f}" if b.ap_40 is not None else "-"
        lines.append(f"{name:<10}{a11:>12}{a40:>12}{b.tp:>8d}{b.fp:>8d}{b.n_gt:>8d}")
    return "\n".join(lines)
