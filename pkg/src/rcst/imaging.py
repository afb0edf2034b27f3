"""Image I/O, grayscale conversion, the discrete Laplacian and edge weight maps.

Images are plain ``torch.Tensor`` batches shaped (B, C, H, W). Everything that
comes out of :func:`load_image` is in the unit range [0, 1]; the generator works
internally in the signed range [-1, 1].
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ImageWriteError, InvalidArgument, NotFound
from .validation import check_image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
LAPLACIAN_KERNEL = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))
WEIGHT_EPS = 1e-8


def load_image(path, target_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """Decode a PNG/JPEG file into a (1, 3, H, W) unit-range tensor.

    If ``target_size`` is given as (H, W) the image is bilinearly resized to it.
    """
    path = Path(path)
    if target_size is not None:
        th, tw = (int(v) for v in target_size)
        if th <= 0 or tw <= 0:
            raise InvalidArgument(f"target_size must be positive, got {target_size}")
    if not path.is_file():
        raise NotFound(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"{path}: unsupported format {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    img = torch.from_numpy(arr.copy()).permute(2, 0, 1).unsqueeze(0)
    if target_size is not None and (th, tw) != tuple(img.shape[-2:]):
        img = F.interpolate(img, size=(th, tw), mode="bilinear", align_corners=False)
        img = img.clamp(0.0, 1.0)
    return img.contiguous()


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(H, W, C) uint8 array from a (1, C, H, W) unit-range tensor, clamping first."""
    arr = img[0].detach().float().clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def save_image(img: torch.Tensor, path) -> None:
    """Write a (1, 3, H, W) unit-range tensor as an 8-bit PNG.

    Values outside [0, 1] are clamped before quantization.
    """
    img = check_image(img, channels=(3,), name="img", allow_nonfinite=False)
    if img.shape[0] != 1:
        raise InvalidArgument(f"save_image expects a single image, got batch of {img.shape[0]}")
    _write_png(to_uint8(img), path)


def save_gray(img: torch.Tensor, path) -> None:
    """Write a (1, 1, H, W) unit-range map as an 8-bit grayscale PNG."""
    img = check_image(img, channels=(1,), name="img")
    if img.shape[0] != 1:
        raise InvalidArgument(f"save_gray expects a single map, got batch of {img.shape[0]}")
    _write_png(to_uint8(img)[..., 0], path)


def _write_png(arr: np.ndarray, path) -> None:
    path = Path(path)
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


def to_grayscale(img: torch.Tensor) -> torch.Tensor:
    """Rec.601 luminance of an RGB batch, keeping a singleton channel axis."""
    img = check_image(img, channels=(3,), name="img", allow_nonfinite=True)
    w = img.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    return (img * w).sum(dim=1, keepdim=True)


def laplacian(img: torch.Tensor) -> torch.Tensor:
    """4-neighbour discrete Laplacian of a single-channel batch.

    Edge pixels use replicate padding, so constant and linear images give zero
    response everywhere except where a ramp meets the border.
    """
    img = check_image(img, channels=(1,), name="img", allow_nonfinite=True)
    kernel = img.new_tensor(LAPLACIAN_KERNEL).view(1, 1, 3, 3)
    padded = F.pad(img, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, kernel)


def gaussian_blur(img: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur with radius ceil(3 sigma) and replicate padding."""
    if sigma <= 0:
        return img
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=img.dtype, device=img.device)
    g = torch.exp(-0.5 * (xs / sigma) ** 2)
    g = g / g.sum()
    c = img.shape[1]
    kx = g.view(1, 1, 1, -1).repeat(c, 1, 1, 1)
    ky = g.view(1, 1, -1, 1).repeat(c, 1, 1, 1)
    out = F.conv2d(F.pad(img, (radius, radius, 0, 0), mode="replicate"), kx, groups=c)
    return F.conv2d(F.pad(out, (0, 0, radius, radius), mode="replicate"), ky, groups=c)


def edge_weight_map(content: torch.Tensor, blur_sigma: float = 0.0) -> torch.Tensor:
    """Per-pixel weights in [0, 1] marking edges and detail in ``content``.

    Grayscale (for RGB input), then ``|laplacian|``, an optional Gaussian blur,
    and division by the per-image maximum. Images whose maximum response is
    below 1e-8 get an all-zero map. Returns a (B, 1, H, W) tensor.
    """
    content = check_image(content, channels=(1, 3), name="content")
    if blur_sigma < 0:
        raise InvalidArgument(f"blur_sigma must be >= 0, got {blur_sigma}")
    gray = to_grayscale(content) if content.shape[1] == 3 else content
    resp = laplacian(gray).abs()
    resp = gaussian_blur(resp, blur_sigma)
    peak = resp.amax(dim=(1, 2, 3), keepdim=True)
    flat = peak < WEIGHT_EPS
    weights = resp / torch.where(flat, torch.ones_like(peak), peak)
    return torch.where(flat, torch.zeros_like(weights), weights)


def list_images(directory) -> list:
    """Sorted PNG/JPEG paths directly inside ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFound(f"no such directory: {directory}")
    exts = {".png", ".jpg", ".jpeg"}
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in exts)


def pad_to_multiple(img: torch.Tensor, multiple: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """Reflect-pad H and W up to a multiple of ``multiple``. Returns the padded
    tensor and the original (H, W) for :func:`crop_to`."""
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        img = F.pad(img, (0, pw, 0, ph), mode=mode)
    return img, (h, w)


def crop_to(img: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    h, w = size
    return img[..., :h, :w]


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
