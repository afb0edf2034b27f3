"""Dual-path generator and patch discriminator.

The generator runs ``encode_initial -> {shallow_path, deep_path} -> fuse -> decode``.
The shallow path keeps the content structure; the deep path is a small U-Net that
carries the learned style. Both are blended linearly before decoding:

    merged = alpha * shallow + beta * deep

The model is single-style: the style image only enters through the training losses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument
from .validation import check_divisible, check_image, check_nonnegative, check_same_shape


@dataclass(frozen=True)
class GeneratorSpec:
    base_channels: int = 32
    downsample_factor: int = 4
    unet_depth: int = 2
    norm_kind: str = "instance"

    def __post_init__(self):
        if int(self.base_channels) < 8:
            raise InvalidArgument(f"base_channels must be >= 8, got {self.base_channels}")
        if self.downsample_factor not in (2, 4, 8):
            raise InvalidArgument(
                f"downsample_factor must be one of 2, 4, 8, got {self.downsample_factor}"
            )
        if int(self.unet_depth) < 1:
            raise InvalidArgument(f"unet_depth must be >= 1, got {self.unet_depth}")
        if self.norm_kind not in ("instance", "none"):
            raise InvalidArgument(f"norm_kind must be 'instance' or 'none', got {self.norm_kind!r}")

    @property
    def divisor(self) -> int:
        """Input H and W must be multiples of this."""
        return self.downsample_factor * 2 ** self.unet_depth

    @property
    def n_down(self) -> int:
        return int(math.log2(self.downsample_factor))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        unknown = set(d) - {"base_channels", "downsample_factor", "unet_depth", "norm_kind"}
        if unknown:
            raise InvalidArgument(f"unknown generator_spec keys: {sorted(unknown)}")
        return cls(**d)


class FusionCoefficients(NamedTuple):
    alpha: float = 1.0
    beta: float = 1.0

    def validated(self) -> "FusionCoefficients":
        return FusionCoefficients(
            check_nonnegative(self.alpha, "alpha"), check_nonnegative(self.beta, "beta")
        )


class FeatureMapPair(NamedTuple):
    shallow: torch.Tensor
    deep: torch.Tensor


def fuse(pair: FeatureMapPair, coeffs: FusionCoefficients) -> torch.Tensor:
    """``alpha * shallow + beta * deep``, elementwise."""
    shallow, deep = pair
    check_same_shape(shallow, deep, ("shallow", "deep"))
    alpha, beta = FusionCoefficients(*coeffs).validated()
    return alpha * shallow + beta * deep


class InstanceNorm(nn.InstanceNorm2d):
    """Affine instance norm that also accepts 1x1 maps (normalized value is 0)."""

    def __init__(self, ch: int):
        super().__init__(ch, affine=True)

    def forward(self, x):
        if x.shape[-1] * x.shape[-2] == 1:
            return (x - x) * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)
        return super().forward(x)


def _norm(kind: str, ch: int) -> nn.Module:
    return InstanceNorm(ch) if kind == "instance" else nn.Identity()


def conv_block(cin: int, cout: int, norm: str, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="replicate"),
        _norm(norm, cout),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1, padding_mode="replicate"),
            _norm(norm, ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1, padding_mode="replicate"),
            _norm(norm, ch),
        )

    def forward(self, x):
        return x + self.body(x)


class UNet(nn.Module):
    """Encoder-decoder with skip concatenation; channels double per level."""

    def __init__(self, ch: int, depth: int, norm: str):
        super().__init__()
        self.depth = depth
        self.down = nn.ModuleList()
        self.up = nn.ModuleList()
        widths = [ch * 2 ** i for i in range(depth + 1)]
        for i in range(depth):
            self.down.append(conv_block(widths[i], widths[i + 1], norm, stride=2))
        self.bottleneck = conv_block(widths[depth], widths[depth], norm)
        for i in reversed(range(depth)):
            self.up.append(
                nn.Sequential(
                    conv_block(widths[i + 1] + widths[i], widths[i], norm),
                    conv_block(widths[i], widths[i], norm),
                )
            )

    def forward(self, x):
        skips = []
        for down in self.down:
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        for up, skip in zip(self.up, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = up(torch.cat([x, skip], dim=1))
        return x


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        c, norm = spec.base_channels, spec.norm_kind

        enc = [conv_block(3, c, norm)]
        enc += [conv_block(c, c, norm, stride=2) for _ in range(spec.n_down)]
        self.encoder = nn.Sequential(*enc)
        self.shallow = nn.Sequential(ResidualBlock(c, norm), ResidualBlock(c, norm))
        self.deep = UNet(c, spec.unet_depth, norm)
        dec = []
        for _ in range(spec.n_down):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"), conv_block(c, c, norm)]
        self.decoder = nn.Sequential(*dec)
        self.to_rgb = nn.Conv2d(c, 3, 3, padding=1, padding_mode="replicate")

    def encode_initial(self, content: torch.Tensor) -> torch.Tensor:
        """Signed-range (B, 3, H, W) image to (B, base_channels, H/f, W/f) features."""
        content = check_image(content, channels=(3,), name="content", allow_nonfinite=True)
        check_divisible(*content.shape[-2:], self.spec.divisor)
        return self.encoder(content)

    def shallow_path(self, feat: torch.Tensor) -> torch.Tensor:
        return self.shallow(feat)

    def deep_path(self, feat: torch.Tensor) -> torch.Tensor:
        check_divisible(*feat.shape[-2:], 2 ** self.spec.unet_depth)
        return self.deep(feat)

    def decode(self, merged: torch.Tensor) -> torch.Tensor:
        """Fused features back to a (B, 3, H, W) image in [-1, 1]."""
        return torch.tanh(self.to_rgb(self.decoder(merged)))

    def features(self, content: torch.Tensor) -> FeatureMapPair:
        feat = self.encode_initial(content)
        return FeatureMapPair(self.shallow_path(feat), self.deep_path(feat))

    def forward(self, x: torch.Tensor, coeffs=FusionCoefficients()) -> torch.Tensor:
        """Signed range in, signed range out."""
        return self.decode(fuse(self.features(x), coeffs))


def stylize(
    generator: Generator, content: torch.Tensor, coeffs=FusionCoefficients()
) -> torch.Tensor:
    """Full generator pass on a unit-range batch; returns a unit-range batch."""
    content = check_image(content, channels=(3,), name="content")
    out = generator(content * 2.0 - 1.0, coeffs)
    return (out + 1.0) * 0.5


def iterate_stylize(
    generator: Generator, content: torch.Tensor, n: int, coeffs=FusionCoefficients()
) -> List[torch.Tensor]:
    """``[G(x), G(G(x)), ...]`` of length ``n``."""
    if int(n) != n or n < 0:
        raise InvalidArgument(f"n must be a non-negative integer, got {n}")
    outs = []
    x = content
    for _ in range(int(n)):
        x = stylize(generator, x, coeffs)
        outs.append(x)
    return outs


class Discriminator(nn.Module):
    """Patch discriminator: four stride-2 convolutions and a 3x3 scoring head.

    Maps (B, 3, H, W) to unbounded scores of shape (B, 1, H/16, W/16).
    """

    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        widths = [3, c, 2 * c, 4 * c, 8 * c]
        layers = []
        for i in range(4):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
        layers.append(nn.Conv2d(widths[-1], 1, 3, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.model(img)


def discriminate(discriminator: Discriminator, img: torch.Tensor) -> torch.Tensor:
    """Patch scores for a unit-range RGB batch."""
    img = check_image(img, channels=(3,), name="img", allow_nonfinite=True)
    h, w = img.shape[-2:]
    if h < 16 or w < 16:
        raise InvalidArgument(f"discriminator needs H, W >= 16, got ({h}, {w})")
    return discriminator(img * 2.0 - 1.0)
