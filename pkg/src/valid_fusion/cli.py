"""Command-line entry point: synth, match, train, filter, eval, bands.

Each stage reads and writes plain files so any detector's KITTI-format output
can enter at ``match``. Exit codes: 0 success, 1 input or config error,
2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import evaluation, kitti_io, matching, synth, verifier
from .kitti_io import Difficulty, Modality

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("valid_fusion")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Settings shared by the pipeline stages.

    Loaded from a TOML file with ``[match]``, ``[train]``, ``[filter]`` and
    ``[eval]`` tables (plus ``[synth]`` for the generator); command-line flags
    take precedence over file values, which take precedence over defaults.
    """

    match: matching.MatchConfig = field(default_factory=matching.MatchConfig)
    train: verifier.TrainConfig = field(default_factory=verifier.TrainConfig)
    threshold: float = 0.5
    rescore: bool = False
    difficulty: str = "all"
    ap_mode: str = "40"
    score_floor: float = 0.0
    van_ignore: bool = True
    seed: int | None = None
    raw: dict = field(default_factory=dict)


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from None
    try:
        cfg = RunConfig(
            match=matching.MatchConfig(**doc.get("match", {})),
            train=verifier.TrainConfig(**doc.get("train", {})),
            raw=doc,
        )
        for section in ("filter", "eval"):
            for k, v in doc.get(section, {}).items():
                if k not in {f.name for f in fields(RunConfig)} - {"match", "train", "raw"}:
                    raise CliError(f"{path}: unknown key [{section}] {k}")
                setattr(cfg, k, v)
        cfg.seed = doc.get("seed")
    except TypeError as exc:
        raise CliError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    return cfg


def _pick(flag, configured):
    return configured if flag is None else flag


def _read_frames_file(path) -> list[str]:
    if not os.path.exists(path):
        raise CliError(f"frames file not found: {path}")
    frames = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = line.split("#", 1)[0].split()
            if toks:
                frames.append(kitti_io.check_frame_id(toks[0]))
    return frames


def _write_frames_file(frames, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f + "\n" for f in frames))


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _require_dir(path, what):
    if path is None or not os.path.isdir(path):
        raise CliError(f"{what} directory not found: {path}")


# ---------------------------------------------------------------- synth

def cmd_synth(args, run: RunConfig) -> int:
    if args.synth_config is not None:
        if not os.path.exists(args.synth_config):
            raise CliError(f"synth config not found: {args.synth_config}")
        try:
            cfg = synth.load_config(args.synth_config)
        except (ValueError, TypeError, tomllib.TOMLDecodeError) as exc:
            raise CliError(f"{args.synth_config}: {exc}") from None
    elif "synth" in run.raw:
        cfg = synth.config_from_dict(run.raw["synth"])
    else:
        cfg = synth.load_fixture(args.fixture)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_frames is not None:
        overrides["n_frames"] = args.n_frames
    if overrides:
        cfg = synth.SynthConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, **overrides})
    paths = synth.generate_dataset(cfg, args.out, threads=args.threads)
    print(f"wrote {cfg.n_frames} frames (seed {cfg.seed}) to {args.out}")
    for role in sorted(paths):
        print(f"  {role:<8} {paths[role]}")
    return EXIT_OK


# ---------------------------------------------------------------- match

def _match_config(args, run: RunConfig) -> matching.MatchConfig:
    base = run.match
    try:
        return matching.MatchConfig(
            tau_match=_pick(args.tau_match, base.tau_match),
            tau_match_openvocab=_pick(args.tau_match_openvocab, base.tau_match_openvocab),
            tau_gt=_pick(getattr(args, "tau_gt", None), base.tau_gt),
            camera_openvocab=_pick(args.camera_openvocab, base.camera_openvocab),
            camera2_openvocab=_pick(args.camera2_openvocab, base.camera2_openvocab),
            class_name=_pick(args.class_name, base.class_name),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_match(args, run: RunConfig) -> int:
    _require_dir(args.lidar, "LiDAR")
    _require_dir(args.gt, "ground-truth")
    cam_dirs = [args.camera] + ([args.camera2] if args.camera2 else [])
    for d in cam_dirs:
        _require_dir(d, "camera")
    cfg = _match_config(args, run)
    frames = _read_frames_file(args.frames) if args.frames else kitti_io.list_frames(args.lidar)
    missing = [f for f in frames if not os.path.exists(os.path.join(args.gt, f"{f}.txt"))]
    if missing:
        raise CliError(f"ground truth missing for {len(missing)} frame(s): {' '.join(missing)}")
    meta = kitti_io.load_frame_meta(args.meta)
    samples = matching.build_dataset(args.lidar, cam_dirs, args.gt, meta, cfg, frames, threads=args.threads)
    layout = matching.FeatureLayout.for_cameras(len(cam_dirs))
    _ensure_parent(args.out)
    matching.write_features_csv(samples, args.out, layout)
    n_pos = sum(s.label for s in samples)
    print(f"{len(samples)} samples from {len(frames)} frames ({n_pos} positive, {len(samples) - n_pos} negative), "
          f"{layout.n_features} features -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _train_config(args, run: RunConfig) -> verifier.TrainConfig:
    base = run.train
    seed = args.seed if args.seed is not None else (run.seed if run.seed is not None else base.seed)
    try:
        return verifier.TrainConfig(
            epochs=_pick(args.epochs, base.epochs),
            lr=_pick(args.lr, base.lr),
            pos_weight=_pick(args.pos_weight, base.pos_weight),
            neg_weight=_pick(args.neg_weight, base.neg_weight),
            hidden_width=_pick(args.hidden_width, base.hidden_width),
            hidden_layers=_pick(args.hidden_layers, base.hidden_layers),
            batch_size=_pick(args.batch_size, base.batch_size),
            full_batch=_pick(args.full_batch, base.full_batch),
            seed=seed,
            shuffle_each_epoch=base.shuffle_each_epoch,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_train(args, run: RunConfig) -> int:
    if not os.path.exists(args.features):
        raise CliError(f"features file not found: {args.features}")
    try:
        samples, layout = matching.read_features_csv(args.features)
    except matching.FeatureCsvError as exc:
        raise CliError(str(exc)) from None
    cfg = _train_config(args, run)
    print(" ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(cfg).items()))
    extra = {}
    if args.train_fraction is not None and args.train_fraction < 1.0:
        frames = sorted({s.frame for s in samples}, key=lambda f: (int(f), f))
        try:
            train_frames, test_frames = matching.split_frames(frames, args.train_fraction, cfg.seed)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        keep = set(train_frames)
        samples = [s for s in samples if s.frame in keep]
        extra["train_fraction"] = args.train_fraction
        if args.split_out:
            _ensure_parent(args.split_out)
            _write_frames_file(test_frames, args.split_out)
        print(f"split: {len(train_frames)} train frames, {len(test_frames)} held-out frames")
    if not samples:
        print("warning: no training samples; writing an untrained model", file=sys.stderr)
        model = verifier.init_model(layout, cfg.hidden_width, cfg.seed, cfg.hidden_layers)
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model, tlog = verifier.train(samples, cfg, layout)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        for e in tlog.epochs:
            print(f"epoch {e.epoch:3d}  loss {e.loss:.6f}  recall {e.recall:.6f}  precision {e.precision:.6f}")
    _ensure_parent(args.out)
    verifier.save_model(model, args.out, cfg, extra)
    print(f"model -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- filter

def cmd_filter(args, run: RunConfig) -> int:
    if not os.path.exists(args.model):
        raise CliError(f"model file not found: {args.model}")
    try:
        model = verifier.load_model(args.model)
    except verifier.ModelFormatError as exc:
        raise CliError(str(exc)) from None
    _require_dir(args.lidar, "LiDAR")
    cam_dirs = [args.camera] + ([args.camera2] if args.camera2 else [])
    for d in cam_dirs:
        _require_dir(d, "camera")
    layout = matching.FeatureLayout.for_cameras(len(cam_dirs))
    if layout is not model.feature_layout:
        raise CliError(f"model expects {model.feature_layout.name} features but {len(cam_dirs)} camera "
                       f"source(s) give {layout.name}")
    cfg = _match_config(args, run)
    threshold = _pick(args.threshold, run.threshold)
    rescore = _pick(args.rescore, run.rescore)
    if not 0.0 < threshold < 1.0:
        raise CliError("threshold must lie in (0, 1)")
    frames = _read_frames_file(args.frames) if args.frames else kitti_io.list_frames(args.lidar)
    meta = kitti_io.load_frame_meta(args.meta)
    os.makedirs(args.out, exist_ok=True)
    lidar = kitti_io.load_detection_dir(args.lidar, Modality.LIDAR, frames)
    cams = [kitti_io.load_detection_dir(d, m, frames) for d, m in zip(cam_dirs, (Modality.CAMERA, Modality.CAMERA2))]
    n_in = n_out = 0
    for frame in frames:
        dets = lidar[frame]
        pairs = matching.evaluated_lidar(dets, cfg.class_name)
        feats = matching.featurize_frame([d for _, d in pairs], [c[frame] for c in cams], meta[frame], cfg)
        prob = dict(zip((i for i, _ in pairs), verifier.forward(model, np.vstack(feats)))) if pairs else {}
        out = []
        for i, d in enumerate(dets):
            if i not in prob:
                out.append(d)  # other classes pass through unverified
            elif prob[i] >= threshold:
                out.append(d.with_score(d.score * float(prob[i])) if rescore else d)
        kitti_io.write_detection_file(out, os.path.join(args.out, f"{frame}.txt"), verbatim=not rescore)
        n_in += len(pairs)
        n_out += sum(1 for p in prob.values() if p >= threshold)
    print(f"kept {n_out} of {n_in} {cfg.class_name} detections over {len(frames)} frames "
          f"(threshold {threshold}) -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval / bands

_DIFF_CHOICES = {"easy": [Difficulty.EASY], "moderate": [Difficulty.MODERATE], "hard": [Difficulty.HARD],
                 "all": list(evaluation.BANDS)}


def _eval_inputs(args, run: RunConfig):
    _require_dir(args.gt, "ground-truth")
    _require_dir(args.dets, "detection")
    frames = _read_frames_file(args.frames) if args.frames else kitti_io.list_frames(args.gt)
    gts = kitti_io.load_label_dir(args.gt, frames)
    dets = kitti_io.load_detection_dir(args.dets, Modality.LIDAR, frames)
    van_ignore = run.van_ignore if args.van_ignore is None else args.van_ignore
    cfg = evaluation.EvalConfig(class_name=args.class_name or run.match.class_name, van_ignore=van_ignore)
    return frames, gts, dets, cfg


def _sibling(path, suffix):
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"


def cmd_eval(args, run: RunConfig) -> int:
    frames, gts, dets, cfg = _eval_inputs(args, run)
    difficulty = _pick(args.difficulty, run.difficulty)
    ap_mode = _pick(args.ap_mode, run.ap_mode)
    score_floor = _pick(args.score_floor, run.score_floor)
    if not 0.0 <= score_floor <= 1.0:
        raise CliError("score floor must lie in [0, 1]")
    meta = {"gt_dataset": os.path.basename(os.path.normpath(args.gt)),
            "det_dataset": os.path.basename(os.path.normpath(args.dets))}
    try:
        report = evaluation.evaluate(dets, gts, _DIFF_CHOICES[difficulty], ap_mode, score_floor, cfg, meta)
    except evaluation.NoGroundTruthError as exc:
        raise CliError(str(exc)) from None
    print(evaluation.format_summary(report))
    if args.out:
        _ensure_parent(args.out)
        evaluation.emit_report(report, args.out, "json")
        pr_csv = _sibling(args.out, "_pr.csv")
        evaluation.emit_report(report, pr_csv, "csv")
        written = [args.out, pr_csv]
        if args.figures:
            from . import plots

            baseline = None
            if args.baseline:
                _require_dir(args.baseline, "baseline detection")
                base_dets = kitti_io.load_detection_dir(args.baseline, Modality.LIDAR, frames)
                baseline = evaluation.evaluate(base_dets, gts, _DIFF_CHOICES[difficulty], ap_mode, score_floor, cfg)
            fig = _sibling(args.out, "_pr.png")
            plots.plot_pr_curves(report, fig, title=meta["det_dataset"], baseline=baseline)
            written.append(fig)
        for p in written:
            print(f"wrote {p}")
    return EXIT_OK


def cmd_bands(args, run: RunConfig) -> int:
    frames, gts, dets, cfg = _eval_inputs(args, run)
    difficulty = _pick(args.difficulty, "moderate" if run.difficulty == "all" else run.difficulty)
    if difficulty == "all":
        raise CliError("bands needs a single difficulty")
    band = _DIFF_CHOICES[difficulty][0]
    if sum(evaluation.count_band_gt(gts[f], band, cfg) for f in frames) == 0:
        raise CliError(f"no {cfg.class_name} ground truth in the {band.name} band")
    dets = {f: kitti_io.rescale_scores(d) for f, d in dets.items()}
    hist = evaluation.band_histogram(dets, gts, band, cfg)
    text = evaluation.band_csv_text(hist)
    print(f"{'band':<14}{'TP':>8}{'FP':>8}")
    for i, (tp, fp) in enumerate(zip(hist.tp_count, hist.fp_count)):
        print(f"[{hist.edges[i]:.1f}, {hist.edges[i + 1]:.1f}){'':<4}{tp:>8d}{fp:>8d}")
    if args.out:
        _ensure_parent(args.out)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        if args.figures:
            from . import plots

            plots.plot_band_histogram(hist, _sibling(args.out, ".png"),
                                      title=f"{os.path.basename(os.path.normpath(args.dets))} ({band.name.lower()})")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_camera_args(p):
    p.add_argument("--lidar", required=True, help="LiDAR detection directory")
    p.add_argument("--camera", required=True, help="camera detection directory")
    p.add_argument("--camera2", help="second camera detection directory (17-feature layout)")
    p.add_argument("--meta", help="frame-meta table 'frame width height' (default 1242x375 for all frames)")
    p.add_argument("--tau-match", type=float, help="camera match IoU threshold (default 0.5)")
    p.add_argument("--tau-match-openvocab", type=float, help="match threshold for open-vocabulary cameras (default 0.3)")
    p.add_argument("--camera-openvocab", action=argparse.BooleanOptionalAction, default=None,
                   help="treat --camera as open-vocabulary (default off)")
    p.add_argument("--camera2-openvocab", action=argparse.BooleanOptionalAction, default=None,
                   help="treat --camera2 as open-vocabulary (default on)")
    p.add_argument("--class-name", help="verified class (default Car)")
    p.add_argument("--frames", help="file listing the frame ids to process")


def _add_eval_args(p):
    p.add_argument("--gt", required=True, help="ground-truth label directory")
    p.add_argument("--dets", required=True, help="detection directory to evaluate")
    p.add_argument("--frames", help="file listing the frame ids to evaluate")
    p.add_argument("--class-name", help="evaluated class (default Car)")
    p.add_argument("--van-ignore", action=argparse.BooleanOptionalAction, default=None,
                   help="ignore detections on Van boxes when evaluating Car (default on)")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render PNG figures next to --out (default on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valid-fusion", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="TOML run config; flags override its values")
    parser.add_argument("--threads", type=int, default=1, help="per-frame worker threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic KITTI-format dataset")
    p.add_argument("--synth-config", help="TOML generator config (default: built-in fixture)")
    p.add_argument("--fixture", default="default", choices=["default", "noisy_imbalance"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-frames", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="build the verifier feature CSV")
    _add_camera_args(p)
    p.add_argument("--gt", required=True, help="ground-truth label directory")
    p.add_argument("--tau-gt", type=float, help="IoU with ground truth for a positive label (default 0.7)")
    p.add_argument("--out", required=True, help="feature CSV path")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("train", help="train the verifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--pos-weight", type=float)
    p.add_argument("--neg-weight", type=float)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--full-batch", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float,
                   help="train on a seeded frame split of this size (default: all rows)")
    p.add_argument("--split-out", help="write the held-out frame ids here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("filter", help="drop LiDAR detections the verifier rejects")
    _add_camera_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, help="accept when probability >= threshold (default 0.5)")
    p.add_argument("--rescore", action=argparse.BooleanOptionalAction, default=None,
                   help="multiply kept scores by the verifier probability (default off)")
    p.add_argument("--out", required=True, help="output detection directory")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="KITTI-style 2D AP report")
    _add_eval_args(p)
    p.add_argument("--difficulty", choices=sorted(_DIFF_CHOICES))
    p.add_argument("--ap-mode", choices=["11", "40", "both"])
    p.add_argument("--score-floor", type=float, help="minimum score for the TP/FP table (default 0)")
    p.add_argument("--baseline", help="detection directory drawn as dashed reference curves")
    p.add_argument("--out", help="report JSON path; the PR CSV and figure are written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bands", help="TP/FP counts per confidence band")
    _add_eval_args(p)
    p.add_argument("--difficulty", choices=["easy", "moderate", "hard"])
    p.add_argument("--out", help="CSV path; the figure is written beside it")
    p.set_defaults(func=cmd_bands)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run = load_run_config(args.config)
        return args.func(args, run)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (kitti_io.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except verifier.NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
