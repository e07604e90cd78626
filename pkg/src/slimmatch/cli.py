"""Command-line surface: synth / train / match / eval / bench.

Exit codes: 0 success, 2 input error, 3 numerical failure. The env var
SLIMMATCH_THREADS caps the worker count for per-pair fan-out; output order
is always deterministic by pair index.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .bench import bench_attention_scaling, rows_to_csv
from .geometry import (
    AUC_THRESHOLDS,
    CCM_THRESHOLDS,
    DegenerateGeometryError,
    MMA_THRESHOLDS,
    auc_at_thresholds,
    ccm,
    homography_dlt,
    mma,
    pose_error,
)
from .losses import GroundTruthLabels, gt_coarse_labels
from .pipeline import (
    RunConfig,
    TrainingDiverged,
    deep_config,
    init_model,
    match_pair,
    standard_config,
    tiny_config,
    train,
)
from .synth import PlanarScene, make_pair

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SLIMMATCH_THREADS", "1")))
    except ValueError:
        return 1


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_synth(args) -> int:
    height = args.height or args.size
    width = args.width or args.size
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        return _fail(f"output directory not writable: {exc}", EXIT_INPUT)

    def build(i: int) -> PlanarScene:
        return make_pair(height, width, args.seed + i)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        scenes = list(pool.map(build, range(args.count)))
    for i, scene in enumerate(scenes):
        sio.write_scene(out, i, scene)
        print(f"pair_{i:05d} seed={scene.seed} "
              f"gt_matches={len(scene.gt_labels.match_indices)}")
    return EXIT_OK


def _load_dataset(data_dir: Path) -> list[PlanarScene]:
    dirs = sio.list_pair_dirs(data_dir)
    if not dirs:
        raise FileNotFoundError(f"no pair_* directories under {data_dir}")
    scenes = []
    for d in dirs:
        img_a = sio.read_pgm(d / "a.pgm")
        img_b = sio.read_pgm(d / "b.pgm")
        h_mat = sio.read_homography(d / "h.txt")
        pairs = gt_coarse_labels(h_mat, img_a.shape, img_b.shape)
        scenes.append(PlanarScene(image_a=img_a, image_b=img_b, h_mat=h_mat,
                                  seed=-1, gt_labels=GroundTruthLabels(pairs)))
    return scenes


_PRESETS = {"tiny": tiny_config, "standard": standard_config, "deep": deep_config}


def _config_from_args(args) -> RunConfig:
    overrides = dict(seed=args.seed, learning_rate=args.lr, epochs=args.epochs,
                     rope_mode=args.rope, layer_scale_enabled=not args.no_layer_scale,
                     match_threshold=args.threshold, window=args.window,
                     lr_decay_every=args.lr_decay_every,
                     weight_decay=args.weight_decay,
                     alternate_directions=args.alternate_directions,
                     strict_matching_normalizer=args.strict_matching_loss)
    if args.layers is not None:
        overrides["layers"] = args.layers
    if args.fine_layers is not None:
        overrides["fine_layers"] = args.fine_layers
    return _PRESETS[args.preset](**overrides)


def cmd_train(args) -> int:
    try:
        scenes = _load_dataset(Path(args.data_dir))
    except (OSError, sio.FileFormatError, FileNotFoundError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    skipped = sum(1 for s in scenes if len(s.gt_labels.match_indices) == 0)
    scenes = [s for s in scenes if len(s.gt_labels.match_indices) > 0]
    if skipped:
        print(f"skipping {skipped} pair(s) with no ground-truth matches")
    if not scenes:
        return _fail("no usable training pairs", EXIT_INPUT)
    cfg = _config_from_args(args)
    try:
        params, history = train(scenes, cfg, log=print)
    except TrainingDiverged as exc:
        sio.save_model(args.out_model, exc.checkpoint, cfg)
        return _fail(f"{exc}; last good checkpoint saved to {args.out_model}",
                     EXIT_NUMERIC)
    sio.save_model(args.out_model, params, cfg)
    print(f"saved model to {args.out_model} "
          f"(first epoch {history[0]:.4f}, last {history[-1]:.4f})")
    return EXIT_OK


def cmd_match(args) -> int:
    try:
        params, cfg = sio.load_model(args.model)
        img_a = sio.read_pgm(args.image_a)
        img_b = sio.read_pgm(args.image_b)
    except (OSError, sio.FileFormatError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    for name, img in (("image_a", img_a), ("image_b", img_b)):
        if img.shape[0] % 8 or img.shape[1] % 8:
            return _fail(f"{name} dims {img.shape} not divisible by 8", EXIT_INPUT)
    coarse, fine = match_pair(img_a, img_b, params, cfg)
    sio.write_matches_tsv(args.out_tsv, fine)
    print(f"{len(coarse)} coarse matches, {len(fine)} fine matches -> {args.out_tsv}")
    if args.svg:
        sio.write_matches_svg(args.svg, img_a, img_b, fine)
        print(f"visualisation -> {args.svg}")
    return EXIT_OK


def _eval_mma_ccm(args, matches_dir: Path, gt_dir: Path) -> int:
    tsv_files = sorted(matches_dir.glob("pair_*.tsv"))
    if not tsv_files:
        return _fail(f"no pair_*.tsv files under {matches_dir}", EXIT_INPUT)
    pairs, h_list, h_pred, dims = [], [], [], []
    for tsv in tsv_files:
        gt_pair = gt_dir / tsv.stem
        if not (gt_pair / "h.txt").exists():
            return _fail(f"missing ground truth for {tsv.stem}", EXIT_INPUT)
        matches = sio.read_matches_tsv(tsv)
        h_list.append(sio.read_homography(gt_pair / "h.txt"))
        pairs.append((matches.points_a, matches.points_b))
        if args.metric == "ccm":
            dims.append(sio.read_pgm(gt_pair / "a.pgm").shape)
            if len(matches) >= 4:
                try:
                    h_pred.append(homography_dlt(matches.points_a, matches.points_b))
                except DegenerateGeometryError:
                    h_pred.append(None)
            else:
                h_pred.append(None)
    if args.metric == "mma":
        values = mma(pairs, h_list, thresholds=MMA_THRESHOLDS)
        for t in MMA_THRESHOLDS:
            print(f"mma\t{t}\t{values[float(t)]:.4f}")
    else:
        values = ccm(h_list, h_pred, dims, thresholds=CCM_THRESHOLDS)
        for t in CCM_THRESHOLDS:
            print(f"ccm\t{t}\t{values[float(t)]:.4f}")
    return EXIT_OK


def _eval_auc(matches_dir: Path) -> int:
    errors_file = matches_dir / "errors.txt"
    if errors_file.exists():
        errors = [float(v) for v in errors_file.read_text().split()]
    else:
        pose_files = sorted(matches_dir.glob("pair_*.pose"))
        if not pose_files:
            return _fail(f"no errors.txt or pair_*.pose under {matches_dir}",
                         EXIT_INPUT)
        errors = []
        for pf in pose_files:
            r, t, r_est, t_est = sio.read_pose_pair(pf)
            errors.append(pose_error(r, t, r_est, t_est).max_deg)
    values = auc_at_thresholds(errors, thresholds=AUC_THRESHOLDS)
    for t in AUC_THRESHOLDS:
        print(f"auc\t{t}\t{values[float(t)]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    matches_dir = Path(args.matches_dir)
    gt_dir = Path(args.gt_dir)
    if not matches_dir.is_dir():
        return _fail(f"{matches_dir} is not a directory", EXIT_INPUT)
    try:
        if args.metric == "auc":
            return _eval_auc(matches_dir)
        return _eval_mma_ccm(args, matches_dir, gt_dir)
    except (OSError, sio.FileFormatError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)


def cmd_bench(args) -> int:
    sizes = [int(v) for v in args.sizes.split(",")]
    kinds = tuple(args.kinds.split(","))
    rows = bench_attention_scaling(sizes, channels=args.channels, kinds=kinds,
                                   repeats=args.repeats, seed=args.seed)
    csv = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv)
        print(f"wrote {args.out}")
    else:
        print(csv, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimmatch",
        description="Detector-free local feature matching at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planar dataset")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a synthetic dataset")
    p.add_argument("data_dir")
    p.add_argument("out_model")
    p.add_argument("--preset", choices=sorted(_PRESETS), default="tiny")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--fine-layers", type=int, default=None)
    p.add_argument("--rope", choices=("relative", "absolute", "none"),
                   default="relative")
    p.add_argument("--no-layer-scale", action="store_true",
                   help="pin the residual scale to 1 (untrainable)")
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--lr-decay-every", type=int, default=0,
                   help="decay the learning rate every N epochs")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--alternate-directions", action="store_true",
                   help="train odd epochs on the reversed image order")
    p.add_argument("--strict-matching-loss", action="store_true",
                   help="use the literal N-K negative normaliser")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="match two PGM images with a trained model")
    p.add_argument("model")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("out_tsv")
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="evaluate match files against ground truth")
    p.add_argument("matches_dir")
    p.add_argument("gt_dir")
    p.add_argument("--metric", choices=("mma", "ccm", "auc"), required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="attention scaling benchmark")
    p.add_argument("--sizes", default="256,512,1024")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--kinds", default="vector,vanilla")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())
