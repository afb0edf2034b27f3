"""Regenerate the small test corpus under tests/fixtures/.

Content and hold-out photographs come from scikit-image's bundled public-domain
sample data; the style image is a procedural brush-stroke texture.
"""

from pathlib import Path

import numpy as np
import skimage.data
from PIL import Image

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
TRAIN = ["astronaut", "camera", "coffee", "rocket", "coins", "clock",
         "immunohistochemistry", "hubble_deep_field"]
HOLDOUT = ["chelsea", "retina", "text"]
SHORT_SIDE = 128


def _rgb(name):
    im = getattr(skimage.data, name)()
    if im.ndim == 2:
        im = np.stack([im] * 3, axis=-1)
    return Image.fromarray(im[..., :3].astype(np.uint8))


def _resized(im):
    w, h = im.size
    s = SHORT_SIDE / min(w, h)
    return im.resize((round(w * s), round(h * s)), Image.BILINEAR)


def style_texture(size=128, seed=7):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    field = np.zeros((size, size))
    for _ in range(12):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(6, 18)
        phase = rng.uniform(0, 2 * np.pi)
        warp = 0.08 * np.sin(2 * np.pi * rng.uniform(1, 3) * yy + rng.uniform(0, 6))
        field += np.sin(2 * np.pi * freq * (np.cos(theta) * (xx + warp) + np.sin(theta) * yy) + phase)
    field = (field - field.min()) / (field.max() - field.min())
    palette = np.array([[20, 40, 110], [40, 120, 200], [240, 200, 60], [220, 90, 30]], float)
    pos = field * (len(palette) - 1)
    lo = np.floor(pos).astype(int).clip(0, len(palette) - 2)
    frac = (pos - lo)[..., None]
    rgb = palette[lo] * (1 - frac) + palette[lo + 1] * frac
    rgb += rng.normal(0, 12, rgb.shape)
    return Image.fromarray(rgb.clip(0, 255).astype(np.uint8))


def main():
    for sub, names in (("content", TRAIN), ("holdout", HOLDOUT)):
        d = ROOT / sub
        d.mkdir(parents=True, exist_ok=True)
        for name in names:
            _resized(_rgb(name)).save(d / f"{name}.png")
    style_texture().save(ROOT / "style.png")


if __name__ == "__main__":
    main()
