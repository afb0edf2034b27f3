"""Training losses: perceptual content/style, least-squares adversarial, and the
edge-weighted MSE content term.

The weighted MSE term multiplies the per-pixel squared error by the content
image's edge weight map, so pixels in flat regions (weight 0) carry no content
constraint at all and are left to the style and adversarial terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import vgg19

from .errors import InvalidArgument, NotFound, StateError
from .validation import check_image, check_nonnegative, check_same_shape

# Positions of the ReLU outputs inside torchvision's vgg19().features.
VGG19_TAPS = {
    "relu1_1": 1,
    "relu1_2": 3,
    "relu2_1": 6,
    "relu2_2": 8,
    "relu3_1": 11,
    "relu3_2": 13,
    "relu3_3": 15,
    "relu3_4": 17,
    "relu4_1": 20,
    "relu4_2": 22,
}
STYLE_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
CONTENT_TAP = "relu4_1"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
STD_EPS = 1e-5


class PerceptualExtractor(nn.Module):
    """Frozen VGG-19 trunk returning activations at ``layer_tags``.

    Build with :meth:`from_file` (pretrained weights on disk) or :meth:`random`
    (seeded random weights, for offline tests). A bare constructor gives an
    unloaded extractor that refuses to run.
    """

    def __init__(self, layer_tags: Sequence[str] = STYLE_TAPS, content_tag: str = CONTENT_TAP):
        super().__init__()
        tags = tuple(layer_tags)
        for t in tags + (content_tag,):
            if t not in VGG19_TAPS:
                raise InvalidArgument(f"unknown VGG tap {t!r}")
        self.layer_tags = tags
        self.content_tag = content_tag
        last = max(VGG19_TAPS[t] for t in tags + (content_tag,))
        self.body = vgg19(weights=None).features[: last + 1]
        for m in self.body:
            if isinstance(m, nn.ReLU):
                m.inplace = False
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.loaded = False
        self.source = None
        self._freeze()

    def _freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def frozen(self) -> bool:
        return True

    def train(self, mode: bool = True):
        # the trunk never leaves eval mode
        return super().train(False)

    @classmethod
    def random(cls, seed: int = 0, **kwargs) -> "PerceptualExtractor":
        ext = cls(**kwargs)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in ext.body:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                    m.bias.zero_()
        ext.loaded = True
        ext.source = f"random:{seed}"
        return ext

    @classmethod
    def from_file(cls, path, **kwargs) -> "PerceptualExtractor":
        """Load torchvision VGG-19 weights (full model or ``features`` state dict)."""
        path = Path(path)
        if not path.is_file():
            raise NotFound(f"no extractor weights at {path}")
        ext = cls(**kwargs)
        state = torch.load(path, map_location="cpu", weights_only=True)
        prefix = "features." if any(k.startswith("features.") for k in state) else ""
        own = ext.body.state_dict()
        picked = {k: state[prefix + k] for k in own if prefix + k in state}
        missing = set(own) - set(picked)
        if missing:
            raise StateError(f"extractor weights at {path} lack {sorted(missing)}")
        ext.body.load_state_dict(picked)
        ext._freeze()
        ext.loaded = True
        ext.source = str(path)
        return ext

    def forward(self, img: torch.Tensor) -> Dict[str, torch.Tensor]:
        if not self.loaded:
            raise StateError("perceptual extractor has no weights loaded")
        x = (img - self.mean) / self.std
        wanted = {VGG19_TAPS[t]: t for t in self.layer_tags + (self.content_tag,)}
        last = max(wanted)
        feats = {}
        for i, layer in enumerate(self.body):
            x = layer(x)
            if i in wanted:
                feats[wanted[i]] = x
            if i == last:
                break
        return feats


def perceptual_features(img: torch.Tensor, extractor: PerceptualExtractor) -> List[torch.Tensor]:
    """One feature map per configured tap, in tap order."""
    img = check_image(img, channels=(3,), name="img")
    feats = extractor(img)
    return [feats[t] for t in extractor.layer_tags]


def content_loss(output: torch.Tensor, content: torch.Tensor, extractor: PerceptualExtractor):
    """Mean squared feature difference at the extractor's content tap."""
    check_same_shape(output, content, ("output", "content"))
    fo = extractor(check_image(output, channels=(3,), name="output"))
    fc = extractor(check_image(content, channels=(3,), name="content"))
    return _content_term(fo, fc, extractor)


def _content_term(fo, fc, extractor):
    return F.mse_loss(fo[extractor.content_tag], fc[extractor.content_tag])


def channel_stats(feat: torch.Tensor):
    """Per-channel spatial mean and std (biased variance plus 1e-5 under the root)."""
    flat = feat.flatten(2)
    mean = flat.mean(dim=2)
    std = (flat.var(dim=2, unbiased=False) + STD_EPS).sqrt()
    return mean, std


def style_loss(output: torch.Tensor, style: torch.Tensor, extractor: PerceptualExtractor):
    """Sum over style taps of MSE between channel means plus MSE between channel stds.

    ``style`` may have a different spatial size and a batch of 1, which is
    broadcast against every output image.
    """
    output = check_image(output, channels=(3,), name="output")
    style = check_image(style, channels=(3,), name="style")
    return _style_term(extractor(output), extractor(style), extractor)


def _style_term(fo, fs, extractor):
    total = 0.0
    for tag in extractor.layer_tags:
        mo, so = channel_stats(fo[tag])
        ms, ss = channel_stats(fs[tag])
        total = total + F.mse_loss(mo, ms.expand_as(mo)) + F.mse_loss(so, ss.expand_as(so))
    return total


def weighted_mse_loss(output: torch.Tensor, content: torch.Tensor, wmap: torch.Tensor):
    """``mean(wmap * (output - content)**2)`` with the single-channel map broadcast
    over colour channels; reduction is over batch, channels and pixels."""
    check_same_shape(output, content, ("output", "content"))
    if wmap.ndim != 4 or wmap.shape[1] != 1:
        raise InvalidArgument(f"wmap must be (B, 1, H, W), got {tuple(wmap.shape)}")
    if wmap.shape[-2:] != output.shape[-2:] or wmap.shape[0] not in (1, output.shape[0]):
        raise InvalidArgument(
            f"wmap shape {tuple(wmap.shape)} does not match output {tuple(output.shape)}"
        )
    return (wmap * (output - content) ** 2).mean()


def adversarial_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    """Least-squares discriminator loss: real pushed to 1, fake to 0."""
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def adversarial_loss_g(fake_scores: torch.Tensor):
    """Least-squares generator loss: fake pushed to 1."""
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


class LossWeights(NamedTuple):
    content: float = 1.0
    style: float = 10.0
    adversarial: float = 1.0
    weighted_mse: float = 50.0

    def validated(self) -> "LossWeights":
        return LossWeights(*(check_nonnegative(v, f"loss weight {n}") for n, v in zip(self._fields, self)))


@dataclass
class LossBundle:
    """Individual loss terms (tensors, still attached to the graph) and their weighted sum."""

    content: torch.Tensor
    style: torch.Tensor
    adversarial: torch.Tensor
    weighted_mse: torch.Tensor
    total: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    COMPONENTS = ("content", "style", "adversarial", "weighted_mse")

    def as_dict(self) -> Dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in self.COMPONENTS + ("total",)}

    def is_finite(self) -> bool:
        return all(torch.isfinite(getattr(self, k)).all() for k in self.COMPONENTS + ("total",))


def combine(components: Dict[str, torch.Tensor], weights: LossWeights) -> LossBundle:
    weights = LossWeights(*weights).validated()
    total = (
        weights.content * components["content"]
        + weights.style * components["style"]
        + weights.adversarial * components["adversarial"]
        + weights.weighted_mse * components["weighted_mse"]
    )
    return LossBundle(total=total, weights=weights, **components)


def total_loss(
    output: torch.Tensor,
    content: torch.Tensor,
    style: torch.Tensor,
    wmap: torch.Tensor,
    fake_scores: torch.Tensor,
    weights: LossWeights,
    extractor: PerceptualExtractor,
) -> LossBundle:
    """All four generator terms and their weighted total.

    ``output`` and ``content`` are unit-range batches, ``wmap`` is the content's
    edge weight map and ``fake_scores`` the discriminator's verdict on ``output``.
    """
    weights = LossWeights(*weights).validated()
    check_same_shape(output, content, ("output", "content"))
    output = check_image(output, channels=(3,), name="output")
    fo = extractor(output)
    with torch.no_grad():
        fc = extractor(check_image(content, channels=(3,), name="content"))
        fs = extractor(check_image(style, channels=(3,), name="style"))
    components = {
        "content": _content_term(fo, fc, extractor),
        "style": _style_term(fo, fs, extractor),
        "adversarial": adversarial_loss_g(fake_scores),
        "weighted_mse": weighted_mse_loss(output, content, wmap),
    }
    return combine(components, weights)


def iterative_mse_loss(generator, output: torch.Tensor, wmap: torch.Tensor, coeffs=None):
    """Edge-weighted squared difference between two consecutive generator iterates,
    ``G(G(x))`` and ``G(x)`` with ``output = G(x)``. Diagnostic alternative to
    :func:`weighted_mse_loss`; not used by default."""
    from .network import FusionCoefficients, stylize

    coeffs = FusionCoefficients() if coeffs is None else coeffs
    again = stylize(generator, output, coeffs)
    return weighted_mse_loss(again, output, wmap)
