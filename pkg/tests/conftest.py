from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from rcst.losses import PerceptualExtractor

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def extractor():
    return PerceptualExtractor.random(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_png(path, arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return path


def brute_laplacian(img: np.ndarray) -> np.ndarray:
    """Nested-loop 4-neighbour Laplacian with edge clamping, on a 2-D array."""
    h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    kernel = [[0, 1, 0], [1, -4, 1], [0, 1, 0]]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(3):
                for dj in range(3):
                    ii = min(max(i + di - 1, 0), h - 1)
                    jj = min(max(j + dj - 1, 0), w - 1)
                    acc += kernel[di][dj] * img[ii, jj]
            out[i, j] = acc
    return out


@pytest.fixture
def step_edge():
    """(1, 3, 8, 8) image: left half black, right half white."""
    img = torch.zeros(1, 3, 8, 8)
    img[..., 4:] = 1.0
    return img


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
