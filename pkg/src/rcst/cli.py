"""``rcst`` command line.

Exit codes: 0 success, 2 usage or validation error, 3 checkpoint/state error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import torch

from . import __version__, imaging
from .config import load_config
from .errors import (
    CheckpointError,
    DecodeError,
    DegeneratePartition,
    ImageWriteError,
    InvalidArgument,
    NotFound,
    StateError,
    TrainingDiverged,
)
from .evaluation import (
    DEFAULT_PARTITION_SIGMA,
    DEFAULT_THRESHOLD,
    edge_preservation_score,
    region_texture_contrast,
)
from .experiments import hstack, iterate, parse_betas, run_ablation, stylize_any, sweep
from .network import FusionCoefficients
from .training import load_generator, train

EXIT_OK, EXIT_USAGE, EXIT_STATE, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("rcst")


class CommandError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _generator(path):
    try:
        return load_generator(path)
    except (NotFound, CheckpointError) as exc:
        raise CommandError(str(exc), EXIT_STATE) from exc


def _image(path):
    try:
        return imaging.load_image(path)
    except (NotFound, DecodeError) as exc:
        raise CommandError(str(exc)) from exc


def _coeffs(args):
    return FusionCoefficients(args.alpha, args.beta).validated()


def _beta_tag(beta: float) -> str:
    return f"{beta:.4f}".rstrip("0").rstrip(".") if beta else "0"


def cmd_stylize(args):
    g = _generator(args.checkpoint)
    content = _image(args.input)
    with torch.no_grad():
        out = stylize_any(g, content, _coeffs(args))
    imaging.ensure_parent(args.output)
    imaging.save_image(out, args.output)
    return EXIT_OK


def cmd_sweep(args):
    betas = parse_betas(args.betas)
    g = _generator(args.checkpoint)
    content = _image(args.input)
    with torch.no_grad():
        outs = sweep(g, content, betas, alpha=args.alpha)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for beta, img in zip(betas, outs):
        imaging.save_image(img, out_dir / f"sweep_beta_{_beta_tag(beta)}.png")
    if args.grid:
        imaging.save_image(hstack(outs), out_dir / "sweep_grid.png")
    return EXIT_OK


def cmd_iterate(args):
    if args.n < 1:
        raise CommandError(f"-n must be >= 1, got {args.n}")
    g = _generator(args.checkpoint)
    content = _image(args.input)
    with torch.no_grad():
        outs = iterate(g, content, args.n, _coeffs(args))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "iterate_scores.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iterate", "edge_preservation"])
        for k, img in enumerate(outs, start=1):
            imaging.save_image(img, out_dir / f"iterate_{k:02d}.png")
            writer.writerow([k, f"{edge_preservation_score(content, img):.6f}"])
    return EXIT_OK


def cmd_weightmap(args):
    content = _image(args.input)
    wmap = imaging.edge_weight_map(content, args.blur_sigma)
    imaging.ensure_parent(args.output)
    imaging.save_gray(wmap, args.output)
    return EXIT_OK


def evaluation_report(content, stylized, threshold=DEFAULT_THRESHOLD,
                      blur_sigma=DEFAULT_PARTITION_SIGMA) -> dict:
    report = {
        "edge_preservation": edge_preservation_score(content, stylized),
        "blank_energy": None,
        "detail_energy": None,
        "contrast_ratio": None,
        "thresholds": {"region_threshold": threshold, "partition_blur_sigma": blur_sigma},
        "versions": {"rcst": __version__, "torch": torch.__version__},
    }
    try:
        tc = region_texture_contrast(content, stylized, threshold, blur_sigma)
    except DegeneratePartition as exc:
        report["partition_error"] = str(exc)
    else:
        report.update(blank_energy=tc.blank_energy, detail_energy=tc.detail_energy,
                      contrast_ratio=tc.ratio)
    return report


def cmd_evaluate(args):
    content = _image(args.content)
    stylized = _image(args.stylized)
    if content.shape != stylized.shape:
        raise CommandError(
            f"content {tuple(content.shape[-2:])} and stylized {tuple(stylized.shape[-2:])} sizes differ"
        )
    report = evaluation_report(content, stylized, args.threshold)
    imaging.ensure_parent(args.report)
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    out_dir = args.out_dir or Path(args.config).with_suffix("").name + "_run"
    path = train(cfg, out_dir, resume=args.resume, checkpoint_every=args.checkpoint_every)
    print(path)
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir or Path(args.config).with_suffix("").name + "_ablation")
    eval_dir = args.holdout_dir or cfg.content_dir
    paths = imaging.list_images(eval_dir)
    result = run_ablation(cfg, out_dir, paths, checkpoint_every=args.checkpoint_every)
    (out_dir / "ablation.json").write_text(json.dumps(result.as_dict(), indent=2) + "\n")
    print(out_dir / "ablation.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcst", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a generator from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", help="checkpoint directory (default: <config stem>_run)")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--checkpoint-every", type=int, default=1, metavar="EPOCHS",
                   help="epochs between epoch checkpoints (default 1)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("stylize", help="stylize one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.set_defaults(func=cmd_stylize)

    s = sub.add_parser("sweep", help="stylize with a range of deep-path coefficients")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--betas", default="0,0.25,0.5,0.75,1.0")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--grid", action="store_true", help="also write a side-by-side strip")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("iterate", help="feed the generator its own output n times")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.set_defaults(func=cmd_iterate)

    s = sub.add_parser("weightmap", help="write the edge weight map of an image")
    s.add_argument("--input", required=True)
    s.add_argument("--blur-sigma", type=float, default=0.0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_weightmap)

    s = sub.add_parser("evaluate", help="score a stylized image against its content")
    s.add_argument("--content", required=True)
    s.add_argument("--stylized", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train with and without the weighted MSE term")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", help="output directory (default: <config stem>_ablation)")
    s.add_argument("--holdout-dir", help="evaluation images (default: the config's content_dir)")
    s.add_argument("--checkpoint-every", type=int, default=1, metavar="EPOCHS",
                   help="epochs between epoch checkpoints (default 1)")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"rcst {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"rcst {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, StateError) as exc:
        print(f"rcst {args.command}: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (InvalidArgument, NotFound, DecodeError, ImageWriteError) as exc:
        print(f"rcst {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
