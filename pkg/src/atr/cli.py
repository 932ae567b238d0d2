"""Command-line entry point: ``atr <command> [options]``.

Commands: synth, learn-dict, train, parse, eval, gradcheck. Exit status is 0
on success, 1 when inputs fail validation and 2 on file-system errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine
from .data import DatasetError, PALETTE, load_dataset, load_image, load_label_map, save_dataset, save_image, save_label_map, synth_generate
from .dictionary import VARIANTS, load_dictionaries, save_dictionaries
from .evaluation import Confusion, accumulate, format_csv, format_per_label, format_table, metrics
from .nets import SCALES, TrainConfig, build_shape_net, build_template_net
from .pipeline import (
    FitConfig,
    ParsingModel,
    SegmentationParams,
    fit_dictionaries,
    overlay,
    parse_image,
    person_box,
    train_shape_net,
    train_template_net,
    training_crops,
)
from .segmentation import FH_K, FH_MIN_SIZE, FH_SIGMA

log = logging.getLogger("atr")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ValidationError(ValueError):
    pass


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing {what} (no path given)")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _parse_box(text: str | None):
    if text is None:
        return None
    try:
        box = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"--box must be four numbers x,y,w,h, got {text!r}") from None
    if len(box) != 4 or box[2] <= 0 or box[3] <= 0:
        raise ValidationError(f"--box must be x,y,w,h with positive size, got {text!r}")
    return box


def _load_training_set(args):
    root = Path(args.dataset)
    samples, palette = load_dataset(root, args.labels)
    if not samples:
        raise ValidationError(f"dataset {root} is empty")
    return samples, palette


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    samples = synth_generate(args.seed, args.count, (args.width, args.height))
    names = save_dataset(samples, args.out)
    print(f"wrote {len(names)} samples to {args.out}")
    return EXIT_OK


def cmd_learn_dict(args) -> int:
    if args.dict is None:
        raise ValidationError("--dict (output path) is required")
    samples, palette = _load_training_set(args)
    K = args.labels or palette.K
    config = FitConfig(K=K, M=args.atoms, lam=args.lam, variant=args.variant, r_w=args.size, r_h=args.size,
                       dict_epochs=args.epochs, seed=args.seed)  # fmt: skip

    def report(k, d):
        curve = " ".join(f"{v:.5f}" for v in d.history) if d.history else "(closed form)"
        print(f"label {k:2d} {palette.names[k] if k < len(palette.names) else k}: objective per epoch {curve}")

    dicts = fit_dictionaries(training_crops(samples, None), config, progress=report)
    save_dictionaries(dicts, args.dict)
    print(f"wrote {args.dict} (K={dicts.K}, M={dicts.M}, {dicts.r_w}x{dicts.r_h}, {dicts.variant})")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.out is None:
        raise ValidationError("--out (checkpoint path) is required")
    config = TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed)
    if args.which == "template":
        dicts = load_dictionaries(_require_file(args.dict, "dictionary file"))
    samples, palette = _load_training_set(args)
    K = args.labels or palette.K

    def report(epoch, result):
        print(f"epoch {epoch:3d} loss {result.losses[-1]:.5f} lr {result.lrs[-1]:.2e}")

    if args.epochs == 0:
        # shape audit: write the freshly initialised network
        net = (build_template_net(args.scale, K, dicts.M, seed=args.seed) if args.which == "template"
               else build_shape_net(args.scale, K, seed=args.seed))  # fmt: skip
        losses = []
    elif args.which == "template":
        result = train_template_net(samples, dicts, config, args.scale, args.seed, progress=report)
        net, losses = result.net, result.losses
    else:
        result = train_shape_net(samples, K, config, args.scale, args.seed, progress=report)
        net, losses = result.net, result.losses
    engine.save_checkpoint(net, args.out)
    curve_path = Path(str(args.out) + ".loss.txt")
    curve_path.write_text("".join(f"{i + 1} {v:.8g}\n" for i, v in enumerate(losses)))
    print(f"wrote {args.out} ({net.count('maxpool')} pool layers, head width {net.output_size})")
    if losses:
        print(f"final/initial loss ratio {losses[-1] / losses[0]:.4f}")
    return EXIT_OK


def _model_from_args(args) -> ParsingModel:
    return ParsingModel.load(
        _require_file(args.dict, "dictionary file"),
        _require_file(args.template_net, "template network checkpoint"),
        _require_file(args.shape_net, "shape network checkpoint"),
    )


def cmd_parse(args) -> int:
    if args.out is None:
        raise ValidationError("--out is required")
    if args.image is None and args.dataset is None:
        raise ValidationError("give --image (with --box) or --dataset")
    model = _model_from_args(args)
    seg = None if args.no_spr else SegmentationParams(args.fh_k, args.fh_min, args.fh_sigma)
    if args.image is not None:
        image = load_image(_require_file(args.image, "image"))
        box = _parse_box(args.box) or (0, 0, image.shape[1], image.shape[0])
        result = parse_image(model, image, box, seg, refine=not args.no_refine)
        save_label_map(result.labels, args.out)
        if args.overlay:
            save_image(overlay(image, result.labels), args.overlay)
        if result.degenerate:
            print(f"warning: degenerate boxes for labels {result.degenerate}", file=sys.stderr)
        print(f"wrote {args.out}")
        return EXIT_OK
    samples, _ = load_dataset(args.dataset, model.K)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(p.stem for p in (Path(args.dataset) / "images").glob("*.png"))
    for name, sample in zip(names, samples):
        result = parse_image(model, sample.image, person_box(sample), seg, refine=not args.no_refine)
        save_label_map(result.labels, out / f"{name}.png")
    print(f"parsed {len(samples)} images into {out}")
    return EXIT_OK


def _label_dir(path) -> Path:
    path = Path(path)
    return path / "labels" if (path / "labels").is_dir() else path


def cmd_eval(args) -> int:
    if args.pred is None or args.gt is None:
        raise ValidationError("--pred and --gt directories are required")
    pred_dir, gt_dir = _label_dir(args.pred), _label_dir(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    pred_names = {p.stem for p in pred_dir.glob("*.png")}
    gt_names = {p.stem for p in gt_dir.glob("*.png")}
    if pred_names != gt_names:
        print("filename mismatch:", file=sys.stderr)
        for name in sorted(pred_names - gt_names):
            print(f"  only in predictions: {name}", file=sys.stderr)
        for name in sorted(gt_names - pred_names):
            print(f"  only in ground truth: {name}", file=sys.stderr)
        return EXIT_INVALID
    if not gt_names:
        raise ValidationError("no label maps to evaluate")
    K = args.labels or PALETTE.K
    conf = Confusion(K)
    for name in sorted(gt_names):
        accumulate(conf, load_label_map(pred_dir / f"{name}.png", K), load_label_map(gt_dir / f"{name}.png", K))
    report = metrics(conf, include_background=args.include_background)
    print(format_table({"prediction": report}))
    print()
    names = PALETTE.names if K == PALETTE.K else tuple(str(k) for k in range(K + 1))
    print(format_per_label(report, names))
    if args.csv:
        Path(args.csv).write_text(format_csv({"prediction": report}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    K = args.labels or 4
    nets = {
        "template": build_template_net(args.scale, K, args.atoms, seed=args.seed),
        "shape": build_shape_net(args.scale, K, seed=args.seed),
    }
    worst = 0.0
    for name, net in nets.items():
        image = rng.uniform(-0.5, 0.5, size=net.input_shape).astype(np.float32)
        target = rng.normal(size=net.output_size).astype(np.float32)
        report = engine.gradcheck(net, image, target, eps=args.eps, max_checks=args.max_checks, seed=args.seed)
        print(f"[{name} net]")
        print(report)
        worst = max(worst, report.max_error)
    status = "PASS" if worst < 1e-3 else "FAIL"
    print(f"{status}: max relative error {worst:.3e} (threshold 1e-3)")
    return EXIT_OK if worst < 1e-3 else EXIT_INVALID


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="dataset root with images/, labels/, palette.txt")
    common.add_argument("--dict", help="dictionary file (ATRD)")
    common.add_argument("--template-net", help="template network checkpoint (ATRN)")
    common.add_argument("--shape-net", help="shape network checkpoint (ATRN)")
    common.add_argument("--scale", choices=SCALES, default="desk")
    common.add_argument("--labels", type=int, default=None, metavar="K", help="number of foreground labels")
    common.add_argument("--atoms", type=int, default=50, metavar="M", help="templates per label")
    common.add_argument("--lambda", dest="lam", type=float, default=1e-3, help="coefficient penalty")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--box", help='person box "x,y,w,h"')
    common.add_argument("--fh-k", type=float, default=FH_K)
    common.add_argument("--fh-min", type=int, default=FH_MIN_SIZE)
    common.add_argument("--fh-sigma", type=float, default=FH_SIGMA)
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="atr", description="Human parsing by active template regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("learn-dict", parents=[common], help="learn per-label template dictionaries")
    p.add_argument("--variant", choices=VARIANTS, default="nmf_l2")
    p.add_argument("--size", type=int, default=100, help="normalized mask side r_w = r_h")
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(func=cmd_learn_dict)

    p = sub.add_parser("train", parents=[common], help="train one of the two regressors")
    p.add_argument("--which", choices=("template", "shape"), required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--batch", type=int, default=128)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", parents=[common], help="parse an image (or every image of a dataset)")
    p.add_argument("--image")
    p.add_argument("--overlay", help="also write the image blended with label colours")
    p.add_argument("--no-spr", action="store_true", help="per-pixel argmax instead of super-pixel voting")
    p.add_argument("--no-refine", action="store_true", help="skip bounding-box refinement")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", parents=[common], help="score predicted label maps against ground truth")
    p.add_argument("--pred", help="directory of predicted label maps (or a dataset root)")
    p.add_argument("--gt", help="directory of ground-truth label maps (or a dataset root)")
    p.add_argument("--csv", help="also write the summary row as CSV")
    p.add_argument("--include-background", action="store_true", help="average over background too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of both desk nets")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--max-checks", type=int, default=20, help="entries probed per tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, DatasetError, engine.DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
