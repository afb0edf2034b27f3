"""Input validation helpers shared by the library, the CLI and the estimator."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .errors import InvalidArgument


def check_image(
    x,
    *,
    channels: Optional[Iterable[int]] = None,
    name: str = "image",
    allow_nonfinite: bool = False,
) -> torch.Tensor:
    """Return ``x`` as a 4-D floating tensor, raising :class:`InvalidArgument` otherwise.

    ``channels`` restricts the accepted channel counts.
    """
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x))
    if x.ndim != 4:
        raise InvalidArgument(f"{name} must be 4-D (B, C, H, W), got shape {tuple(x.shape)}")
    if not x.is_floating_point():
        x = x.float()
    b, c, h, w = x.shape
    if min(b, c, h, w) < 1:
        raise InvalidArgument(f"{name} has an empty dimension: {tuple(x.shape)}")
    if channels is not None:
        channels = tuple(channels)
        if c not in channels:
            raise InvalidArgument(f"{name} must have C in {channels}, got C={c}")
    if not allow_nonfinite and not torch.isfinite(x).all():
        raise InvalidArgument(f"{name} contains NaN or Inf")
    return x


def check_same_shape(a: torch.Tensor, b: torch.Tensor, names: Sequence[str] = ("a", "b")) -> None:
    if a.shape != b.shape:
        raise InvalidArgument(
            f"{names[0]} and {names[1]} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def check_divisible(h: int, w: int, divisor: int) -> None:
    if h % divisor or w % divisor:
        raise InvalidArgument(
            f"spatial dims ({h}, {w}) must be divisible by {divisor}"
        )


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise InvalidArgument(f"{name} must be a finite value >= 0, got {value}")
    return value


def as_image_batch(X) -> torch.Tensor:
    """Coerce user data into a unit-range (B, 3, H, W) float tensor.

    Accepts a single image or a batch, channel-first or channel-last, float in
    [0, 1] or uint8 in [0, 255].
    """
    is_uint8 = (
        X.dtype == torch.uint8 if isinstance(X, torch.Tensor) else np.asarray(X).dtype == np.uint8
    )
    t = X if isinstance(X, torch.Tensor) else torch.as_tensor(np.asarray(X))
    t = t.float()
    if is_uint8:
        t = t / 255.0
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise InvalidArgument(f"expected 3-D or 4-D image data, got shape {tuple(t.shape)}")
    if t.shape[1] != 3 and t.shape[-1] == 3:
        t = t.permute(0, 3, 1, 2)
    t = check_image(t.contiguous(), channels=(3,), name="X")
    if t.min() < 0 or t.max() > 1:
        raise InvalidArgument("float image data must lie in [0, 1]")
    return t
