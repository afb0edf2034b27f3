"""Quantitative checks for region-controlled stylization.

None of these are standard metrics; they turn visual claims into numbers:

* edge preservation: correlation of Laplacian magnitudes of content and result;
* region texture contrast: how much new high-frequency energy lands in flat
  ("blank") regions versus detailed ones;
* sweep monotonicity: whether raising the deep-path coefficient moves outputs
  steadily away from the content and toward the style.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence

import torch

from .errors import DegeneratePartition, InvalidArgument
from .imaging import edge_weight_map, laplacian, to_grayscale
from .losses import content_loss, style_loss
from .validation import check_image, check_same_shape

DEFAULT_THRESHOLD = 0.2
DEFAULT_PARTITION_SIGMA = 1.0
MONOTONE_SLACK = 0.05
EPS = 1e-8


def _edge_magnitude(img: torch.Tensor) -> torch.Tensor:
    gray = to_grayscale(img) if img.shape[1] == 3 else img
    return laplacian(gray).abs()


def _pearson(a: torch.Tensor, b: torch.Tensor) -> float:
    a = a.double().flatten()
    b = b.double().flatten()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = a.norm(), b.norm()
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float((a @ b) / (na * nb))


def edge_preservation_score(content: torch.Tensor, stylized: torch.Tensor) -> float:
    """Pearson correlation between ``|laplacian(gray(content))|`` and the same map
    of ``stylized``, over all pixels of the batch. 0 if either map is constant."""
    content = check_image(content, channels=(1, 3), name="content")
    stylized = check_image(stylized, channels=(1, 3), name="stylized")
    check_same_shape(content, stylized, ("content", "stylized"))
    return _pearson(_edge_magnitude(content), _edge_magnitude(stylized))


@dataclass
class RegionPartition:
    detail_mask: torch.Tensor
    blank_mask: torch.Tensor
    threshold: float


def region_partition(content: torch.Tensor, threshold: float = DEFAULT_THRESHOLD,
                     blur_sigma: float = DEFAULT_PARTITION_SIGMA) -> RegionPartition:
    """Split pixels into detail (normalized edge weight > threshold) and blank."""
    if not 0 < threshold <= 1:
        raise InvalidArgument(f"threshold must be in (0, 1], got {threshold}")
    weights = edge_weight_map(content, blur_sigma)
    detail = weights > threshold
    return RegionPartition(detail, ~detail, float(threshold))


@dataclass
class TextureContrast:
    blank_energy: float
    detail_energy: float
    ratio: float

    def as_dict(self):
        return asdict(self)


def region_texture_contrast(content: torch.Tensor, stylized: torch.Tensor,
                            threshold: float = DEFAULT_THRESHOLD,
                            blur_sigma: float = DEFAULT_PARTITION_SIGMA) -> TextureContrast:
    """Mean ``|laplacian(gray(stylized - content))|`` over blank and detail pixels,
    and their ratio ``blank / (detail + 1e-8)``."""
    content = check_image(content, channels=(3,), name="content")
    stylized = check_image(stylized, channels=(3,), name="stylized")
    check_same_shape(content, stylized, ("content", "stylized"))
    part = region_partition(content, threshold, blur_sigma)
    if not part.detail_mask.any() or not part.blank_mask.any():
        raise DegeneratePartition(
            f"threshold {threshold} leaves an empty region "
            f"(detail={int(part.detail_mask.sum())}, blank={int(part.blank_mask.sum())})"
        )
    energy = _edge_magnitude(stylized - content)
    blank = float(energy[part.blank_mask].mean())
    detail = float(energy[part.detail_mask].mean())
    return TextureContrast(blank, detail, blank / (detail + EPS))


def is_monotone(values: Sequence[float], increasing: bool, slack: float = MONOTONE_SLACK) -> bool:
    """True if every step moves the right way or regresses by at most
    ``slack`` times the sequence range."""
    vals = [float(v) for v in values]
    tol = slack * (max(vals) - min(vals))
    steps = [b - a for a, b in zip(vals, vals[1:])]
    if increasing:
        return all(s >= -tol for s in steps)
    return all(s <= tol for s in steps)


@dataclass
class SweepReport:
    content_dist: List[float]
    style_dist: List[float]
    content_monotone: bool
    style_monotone: bool

    def as_dict(self):
        return asdict(self)


@torch.no_grad()
def sweep_monotonicity(content: torch.Tensor, sweep_outputs: Sequence[torch.Tensor],
                       style: torch.Tensor, extractor,
                       slack: float = MONOTONE_SLACK) -> SweepReport:
    """Content and style distances along a sweep ordered by increasing beta.

    Content distance should not decrease and style distance should not increase.
    """
    if len(sweep_outputs) < 2:
        raise InvalidArgument("a sweep needs at least two outputs")
    cd = [float(content_loss(o, content, extractor)) for o in sweep_outputs]
    sd = [float(style_loss(o, style, extractor)) for o in sweep_outputs]
    return SweepReport(cd, sd, is_monotone(cd, True, slack), is_monotone(sd, False, slack))
