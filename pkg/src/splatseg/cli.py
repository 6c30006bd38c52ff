"""Command-line pipeline driver.

    splatseg synth     --out DIR [--spec FILE] [--seed N]
    splatseg train     --data DIR --out model.ply [--config FILE] [--seed N]
    splatseg render    --model PLY --cameras FILE --camera-id N --out IMG.ppm
    splatseg segment2d --model PLY --cameras FILE --camera-id N --out MASK.pgm
    splatseg extract3d --model PLY --cameras FILE --camera-id N
                       --prompt-mask MASK.pgm --out SUBSET.ply
    splatseg eval      --pred-masks DIR --gt-masks DIR [--boundary R]

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numerical
failure. Every command is deterministic given its flags (and --seed where
randomness exists). --threads (or SPLATSEG_THREADS) caps render workers.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import model_io, rasterizer, segmentation, synthdata, trainer
from .errors import DataError, NumericalError, SplatsegError
from .metrics import matched_mean_iou

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _add_threads(p: _Parser) -> None:
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SPLATSEG_THREADS", "1")),
                   help="cap worker threads (default: SPLATSEG_THREADS or 1)")


def _view_name(i: int) -> str:
    return f"view_{i:03d}"


def cmd_synth(args) -> int:
    if args.spec is not None:
        spec = _parse_spec_file(Path(args.spec))
    else:
        spec = synthdata.SyntheticSpec()
    if args.seed is not None:
        spec.seed = args.seed
    data = synthdata.generate(spec)

    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    model_io.write_cameras(data.cameras, out / "cameras.txt")
    for i, (img, mask) in enumerate(zip(data.images, data.masks)):
        model_io.write_image(img, out / "images" / f"{_view_name(i)}.ppm")
        model_io.write_mask(mask, out / "masks" / f"{_view_name(i)}.pgm")
    model_io.write_points(data.scene.positions, data.scene.colors,
                          out / "points.ply")
    with open(out / "gt_labels.txt", "w", encoding="ascii") as fh:
        fh.write("# gaussian_index object_label\n")
        for i, label in enumerate(data.labels):
            fh.write(f"{i} {int(label)}\n")
    print(f"wrote {len(data.cameras)} views, {len(data.scene)} Gaussians to {out}")
    return 0


def _parse_spec_file(path: Path) -> synthdata.SyntheticSpec:
    from dataclasses import fields
    known = {f.name: f.type for f in fields(synthdata.SyntheticSpec)}
    kwargs = {}
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError:
        raise model_io.ParseError("spec file is not ASCII") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise model_io.ParseError(f"line {lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in known:
            raise model_io.ParseError(f"line {lineno}: unknown key '{key}'")
        try:
            kwargs[key] = int(value) if known[key] == "int" else float(value)
        except ValueError:
            raise model_io.ParseError(
                f"line {lineno}: bad value '{value}' for '{key}'") from None
    try:
        return synthdata.SyntheticSpec(**kwargs)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _load_views(data_dir: Path):
    cameras = model_io.read_cameras(data_dir / "cameras.txt")
    views = []
    for i, cam in enumerate(cameras):
        img = model_io.read_image(data_dir / "images" / f"{_view_name(i)}.ppm")
        mask = model_io.read_mask(data_dir / "masks" / f"{_view_name(i)}.pgm")
        views.append((cam, img, mask))
    return views


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    cfg = model_io.read_config(args.config) if args.config else model_io.Config(
        train=trainer.TrainConfig(), loss=model_io.LossConfig(),
        seg=model_io.SegConfig())
    if args.seed is not None:
        cfg.train.seed = args.seed
    views = _load_views(data_dir)
    positions, colors = model_io.read_points(data_dir / "points.ply")
    scene = trainer.initialize(positions, colors, seed=cfg.train.seed)
    scene, history = trainer.train(scene, views, cfg.train, cfg.loss)

    model_io.write_scene(scene, args.out)
    hist_path = Path(args.out).with_name("loss_history.csv")
    with open(hist_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "rendering", "clustering",
                         "regularization"])
        for i, row in enumerate(history):
            writer.writerow([i, repr(row["total"]), repr(row["rendering"]),
                             repr(row["clustering"]), repr(row["regularization"])])
    final = history[-1]["total"] if history else 0.0
    if not math.isfinite(final):
        raise NumericalError(f"final loss is not finite: {final}")
    print(f"trained {len(scene)} Gaussians over {len(history)} iterations; "
          f"final loss {final:.6f}")
    return 0


def _camera_from(args):
    cameras = model_io.read_cameras(args.cameras)
    for cam in cameras:
        if cam.camera_id == args.camera_id:
            return cam
    raise DataError(f"camera id {args.camera_id} not found in {args.cameras}")


def cmd_render(args) -> int:
    scene = model_io.read_scene(args.model)
    cam = _camera_from(args)
    bg = np.array([float(v) for v in args.background.split(",")])
    if bg.shape != (3,):
        raise DataError("--background must be r,g,b")
    render = rasterizer.rasterize(scene, cam, bg)
    model_io.write_image(render.color, args.out)
    print(f"rendered camera {args.camera_id} to {args.out}")
    return 0


def cmd_segment2d(args) -> int:
    scene = model_io.read_scene(args.model)
    cam = _camera_from(args)
    mask = segmentation.render_instance_masks(scene, cam, t=args.t)
    model_io.write_mask(mask, args.out)
    n = int(mask.max())
    print(f"wrote {n} instances to {args.out}")
    return 0


def cmd_extract3d(args) -> int:
    scene = model_io.read_scene(args.model)
    cam = _camera_from(args)
    prompt_mask = model_io.read_mask(args.prompt_mask)
    prompt = segmentation.feature_prompt_from_mask(scene, cam, prompt_mask)
    if args.stage1_only:
        indices = segmentation.select_by_similarity(scene, prompt, args.t)
        if len(indices) == 0:
            raise DataError("no Gaussians match prompt")
        from .core_model import clone_subset
        subset = clone_subset(scene, indices)
    else:
        subset, indices = segmentation.extract_object_3d(scene, prompt, args.t)
    model_io.write_scene(subset, args.out)
    if args.indices_out:
        with open(args.indices_out, "w", encoding="ascii") as fh:
            fh.writelines(f"{i}\n" for i in indices)
    print(f"extracted {len(indices)} of {len(scene)} Gaussians to {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_masks), Path(args.gt_masks)
    names = sorted(p.name for p in gt_dir.glob("*.pgm"))
    if not names:
        raise DataError(f"no .pgm masks in {gt_dir}")
    scores, bscores = [], []
    for name in names:
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise DataError(f"missing predicted mask {pred_path}")
        pred = model_io.read_mask(pred_path)
        gt = model_io.read_mask(gt_dir / name)
        view = name.rsplit(".", 1)[0]
        m = matched_mean_iou(pred, gt)
        b = matched_mean_iou(pred, gt, boundary=True, radius=args.boundary)
        scores.append(m)
        bscores.append(b)
        print(f"miou {view} {m:.6f}")
        print(f"mbiou {view} {b:.6f}")
    print(f"miou mean {np.mean(scores):.6f}")
    print(f"mbiou mean {np.mean(bscores):.6f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="splatseg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="key = value spec file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--camera-id", type=int, required=True)
    p.add_argument("--background", default="0,0,0")
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("segment2d", help="render instance masks")
    p.add_argument("--model", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--camera-id", type=int, required=True)
    p.add_argument("--t", type=float, default=segmentation.SIMILARITY_T)
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_segment2d)

    p = sub.add_parser("extract3d", help="extract a 3D object by prompt mask")
    p.add_argument("--model", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--camera-id", type=int, required=True)
    p.add_argument("--prompt-mask", required=True)
    p.add_argument("--t", type=float, default=segmentation.SIMILARITY_T)
    p.add_argument("--stage1-only", action="store_true",
                   help="skip outlier and convex-hull refinement")
    p.add_argument("--indices-out", help="also write selected indices, one per line")
    p.add_argument("--out", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_extract3d)

    p = sub.add_parser("eval", help="mIoU/mBIoU between mask directories")
    p.add_argument("--pred-masks", required=True)
    p.add_argument("--gt-masks", required=True)
    p.add_argument("--boundary", type=int, default=3)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        rasterizer.set_num_threads(args.threads)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"splatseg: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (DataError, SplatsegError) as exc:
        print(f"splatseg: {exc}", file=sys.stderr)
        return DATA_ERROR
    except FileNotFoundError as exc:
        print(f"splatseg: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
