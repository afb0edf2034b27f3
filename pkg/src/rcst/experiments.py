"""Inference-side experiment drivers shared by the CLI and the test-suite:
arbitrary-size stylization, beta sweeps, iterated stylization and the
weighted-vs-unweighted ablation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import torch

from . import imaging
from .config import TrainingConfig
from .errors import InvalidArgument
from .evaluation import edge_preservation_score
from .network import FusionCoefficients, Generator, stylize
from .training import RESIZE_FACTOR, load_generator, resize_shorter_side, train

log = logging.getLogger(__name__)


@torch.no_grad()
def stylize_any(generator: Generator, content: torch.Tensor,
                coeffs=FusionCoefficients()) -> torch.Tensor:
    """Stylize an image of any size: reflect-pad to the generator's divisor,
    run, and crop back to the original size."""
    padded, size = imaging.pad_to_multiple(content, generator.spec.divisor)
    return imaging.crop_to(stylize(generator, padded, coeffs), size)


def quantize(img: torch.Tensor) -> torch.Tensor:
    """Round-trip through 8-bit, exactly as saving and re-loading a PNG would."""
    return torch.round(img.clamp(0, 1) * 255.0) / 255.0


def parse_betas(text: str) -> List[float]:
    try:
        betas = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise InvalidArgument(f"cannot parse beta list {text!r}") from exc
    if not betas:
        raise InvalidArgument("beta list is empty")
    if any(b < 0 for b in betas):
        raise InvalidArgument("betas must be >= 0")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidArgument(f"betas must be strictly increasing, got {betas}")
    return betas


def sweep(generator: Generator, content: torch.Tensor, betas: Sequence[float],
          alpha: float = 1.0) -> List[torch.Tensor]:
    """One stylization per beta with alpha held fixed."""
    return [stylize_any(generator, content, FusionCoefficients(alpha, b)) for b in betas]


def iterate(generator: Generator, content: torch.Tensor, n: int,
            coeffs=FusionCoefficients()) -> List[torch.Tensor]:
    """``n`` repeated stylizations, quantizing to 8 bits between passes so every
    iterate equals stylizing the saved previous iterate."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    outs = []
    x = content
    for _ in range(n):
        x = quantize(stylize_any(generator, x, coeffs))
        outs.append(x)
    return outs


def hstack(images: Sequence[torch.Tensor], gap: int = 0) -> torch.Tensor:
    """Concatenate equally tall images side by side, with white gaps."""
    parts = []
    for i, im in enumerate(images):
        if i and gap:
            parts.append(torch.ones(*im.shape[:-1], gap))
        parts.append(im)
    return torch.cat(parts, dim=-1)


def vstack(images: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.cat(list(images), dim=-2)


def prepare_eval_image(path, crop_size: int) -> torch.Tensor:
    """Load an evaluation image at the scale the training crops were cut from
    (shorter side ``RESIZE_FACTOR * crop_size``)."""
    return resize_shorter_side(imaging.load_image(path), RESIZE_FACTOR * crop_size)


@dataclass
class AblationResult:
    weighted_checkpoint: Path
    unweighted_checkpoint: Path
    scores: Dict[str, Dict[str, float]] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def weighted_wins(self) -> int:
        return sum(
            self.scores["weighted"][k] >= self.scores["unweighted"][k] for k in self.scores["weighted"]
        )

    def as_dict(self) -> dict:
        w, u = self.scores["weighted"], self.scores["unweighted"]
        return {
            "weighted": {
                "checkpoint": str(self.weighted_checkpoint),
                "edge_preservation": w,
                "mean_edge_preservation": sum(w.values()) / len(w),
            },
            "unweighted": {
                "checkpoint": str(self.unweighted_checkpoint),
                "edge_preservation": u,
                "mean_edge_preservation": sum(u.values()) / len(u),
            },
            "weighted_wins": self.weighted_wins,
            "training_seconds": dict(self.seconds),
            "n_images": len(w),
        }


def run_ablation(cfg: TrainingConfig, out_dir, eval_paths: Sequence[Path],
                 extractor=None, checkpoint_every: int = 1) -> AblationResult:
    """Train with the configured weighted-MSE coefficient and with it set to 0,
    from the same seed, then score both on ``eval_paths``.

    Writes ``weighted/``, ``unweighted/``, ``ablation_grid.png`` (rows: content,
    weighted result, unweighted result) into ``out_dir``.
    """
    out_dir = Path(out_dir)
    if not eval_paths:
        raise InvalidArgument("ablation needs at least one evaluation image")
    if cfg.loss_weights.weighted_mse == 0:
        log.warning("configured weighted_mse weight is already 0; both runs are identical")
    lw = list(cfg.loss_weights)
    lw[3] = 0.0
    plain = cfg.replace(loss_weights=lw)
    seconds = {}
    t0 = time.perf_counter()
    ckpt_w = train(cfg, out_dir / "weighted", extractor=extractor, checkpoint_every=checkpoint_every)
    seconds["weighted"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ckpt_u = train(plain, out_dir / "unweighted", extractor=extractor, checkpoint_every=checkpoint_every)
    seconds["unweighted"] = time.perf_counter() - t0
    gw, gu = load_generator(ckpt_w), load_generator(ckpt_u)

    scores = {"weighted": {}, "unweighted": {}}
    rows = []
    for p in eval_paths:
        content = prepare_eval_image(p, cfg.crop_size)
        ow, ou = stylize_any(gw, content), stylize_any(gu, content)
        scores["weighted"][Path(p).stem] = edge_preservation_score(content, ow)
        scores["unweighted"][Path(p).stem] = edge_preservation_score(content, ou)
        rows.append(hstack([content, ow, ou], gap=4))
    width = max(r.shape[-1] for r in rows)
    rows = [torch.nn.functional.pad(r, (0, width - r.shape[-1]), value=1.0) for r in rows]
    imaging.save_image(vstack(rows), out_dir / "ablation_grid.png")
    return AblationResult(ckpt_w, ckpt_u, scores, seconds)
