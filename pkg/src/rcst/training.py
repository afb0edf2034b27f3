"""Data pipeline, optimisation step, checkpoints and the training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from filelock import FileLock, Timeout

from . import imaging
from .config import TrainingConfig
from .errors import (
    CorruptCheckpoint,
    DecodeError,
    IncompatibleCheckpoint,
    InvalidArgument,
    NotFound,
    StateError,
    TrainingDiverged,
)
from .losses import (
    LossBundle,
    PerceptualExtractor,
    adversarial_loss_d,
    combine,
    iterative_mse_loss,
    total_loss,
)
from .network import Discriminator, FusionCoefficients, Generator, GeneratorSpec, discriminate, stylize

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "content", "style", "adversarial", "weighted_mse", "total")
CHECKPOINT_FORMAT = 1
TRAIN_COEFFS = FusionCoefficients(1.0, 1.0)


def resize_shorter_side(img: torch.Tensor, size: int) -> torch.Tensor:
    h, w = img.shape[-2:]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    if (nh, nw) == (h, w):
        return img
    return F.interpolate(img, size=(nh, nw), mode="bilinear", align_corners=False).clamp(0, 1)


RESIZE_FACTOR = 2


class ContentDataset:
    """Content images resized so the shorter side is twice ``crop_size``, served
    as random square crops. Order and crop offsets depend only on (seed, epoch),
    so any epoch can be replayed or resumed mid-way."""

    def __init__(self, images: List[torch.Tensor], crop_size: int, seed: int = 0):
        if not images:
            raise NotFound("dataset has no usable images")
        self.crop_size = int(crop_size)
        self.seed = int(seed)
        short = RESIZE_FACTOR * self.crop_size
        self.images = [resize_shorter_side(im.unsqueeze(0) if im.ndim == 3 else im, short)[0]
                       for im in images]

    def __len__(self):
        return len(self.images)

    def steps_per_epoch(self, batch_size: int) -> int:
        return math.ceil(len(self) / batch_size)

    def epoch(self, epoch: int) -> Iterator[torch.Tensor]:
        """Yield (3, crop, crop) unit-range crops for one epoch."""
        rng = np.random.default_rng([self.seed, int(epoch)])
        order = rng.permutation(len(self))
        c = self.crop_size
        for idx in order:
            im = self.images[idx]
            h, w = im.shape[-2:]
            top = int(rng.integers(0, h - c + 1))
            left = int(rng.integers(0, w - c + 1))
            yield im[:, top:top + c, left:left + c]

    def batches(self, epoch: int, batch_size: int, start: int = 0) -> Iterator[torch.Tensor]:
        """Batches of one epoch, skipping the first ``start`` batches."""
        items = list(self.epoch(epoch))
        for b in range(start, self.steps_per_epoch(batch_size)):
            yield torch.stack(items[b * batch_size:(b + 1) * batch_size])

    def __iter__(self):
        return self.epoch(0)


def build_dataset(content_dir, crop_size: int, seed: int = 0) -> ContentDataset:
    """Load every decodable PNG/JPEG in ``content_dir``; corrupt files are skipped
    with a warning."""
    paths = imaging.list_images(content_dir)
    images = []
    for p in paths:
        try:
            images.append(imaging.load_image(p)[0])
        except DecodeError as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
    if not images:
        raise NotFound(f"no decodable images in {content_dir}")
    return ContentDataset(images, crop_size, seed)


def load_style(path, crop_size: int) -> torch.Tensor:
    """Style image at the same scale as the content crops' source images."""
    return resize_shorter_side(imaging.load_image(path), RESIZE_FACTOR * crop_size)


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0
    epoch: int = 0
    batch_index: int = 0
    discriminator_frozen: bool = False
    config: Optional[TrainingConfig] = None
    extractor: Optional[PerceptualExtractor] = field(default=None, repr=False)

    @property
    def spec(self) -> GeneratorSpec:
        return self.generator.spec


def make_extractor(cfg: TrainingConfig) -> PerceptualExtractor:
    if cfg.extractor_weights:
        return PerceptualExtractor.from_file(cfg.extractor_weights)
    log.warning("no extractor_weights configured; using a random-weight extractor")
    return PerceptualExtractor.random(cfg.seed)


def _optimizers(cfg: TrainingConfig, g: Generator, d: Discriminator):
    opt = cfg.optimizer
    return (
        torch.optim.Adam(g.parameters(), lr=opt.lr, betas=opt.betas),
        torch.optim.Adam(d.parameters(), lr=opt.lr, betas=opt.betas),
    )


def init_state(cfg: TrainingConfig, extractor: Optional[PerceptualExtractor] = None) -> TrainState:
    torch.manual_seed(cfg.seed)
    g = Generator(cfg.generator_spec)
    d = Discriminator()
    opt_g, opt_d = _optimizers(cfg, g, d)
    return TrainState(g, d, opt_g, opt_d, config=cfg,
                      extractor=extractor if extractor is not None else make_extractor(cfg))


def train_step(state: TrainState, batch: torch.Tensor, style: torch.Tensor,
               cfg: TrainingConfig):
    """One discriminator update (joint mode) followed by one generator update.

    Returns ``(state, bundle)`` where ``bundle`` holds the generator losses
    measured before its update. ``state`` is updated in place.
    """
    g, d = state.generator, state.discriminator
    if state.extractor is None:
        state.extractor = make_extractor(cfg)
    g.train()
    d.train()
    wmap = imaging.edge_weight_map(batch, cfg.blur_sigma)

    if cfg.discriminator_mode == "joint" and not state.discriminator_frozen:
        with torch.no_grad():
            fake = stylize(g, batch, TRAIN_COEFFS)
        loss_d = adversarial_loss_d(discriminate(d, style), discriminate(d, fake))
        state.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        state.opt_d.step()

    d.requires_grad_(False)
    try:
        out = stylize(g, batch, TRAIN_COEFFS)
        bundle = total_loss(out, batch, style, wmap, discriminate(d, out),
                            cfg.loss_weights, state.extractor)
        if cfg.iterative_mse:
            parts = {k: getattr(bundle, k) for k in LossBundle.COMPONENTS}
            parts["weighted_mse"] = iterative_mse_loss(g, out, wmap, TRAIN_COEFFS)
            bundle = combine(parts, cfg.loss_weights)
        if not bundle.is_finite():
            raise TrainingDiverged(f"non-finite loss at step {state.step}: {bundle.as_dict()}", bundle)
        objective = bundle.total
        if cfg.shallow_anchor_weight > 0:
            anchor = shallow_anchor_loss(g, batch)
            objective = objective + cfg.shallow_anchor_weight * anchor
        state.opt_g.zero_grad(set_to_none=True)
        if any(w > 0 for w in bundle.weights) or cfg.shallow_anchor_weight > 0:
            objective.backward()
            state.opt_g.step()
    finally:
        d.requires_grad_(not state.discriminator_frozen)
    state.step += 1
    return state, bundle


def shallow_anchor_loss(generator: Generator, batch: torch.Tensor) -> torch.Tensor:
    """Plain MSE between the shallow-only output (alpha 1, beta 0) and the content.

    Keeps beta = 0 close to a reconstruction so that raising beta adds style
    on top of the content instead of moving along an arbitrary direction.
    """
    return F.mse_loss(stylize(generator, batch, FusionCoefficients(1.0, 0.0)), batch)


def pretrain_discriminator(state: TrainState, dataset: ContentDataset, style: torch.Tensor,
                           batch_size: int, steps: int) -> None:
    """Teach the discriminator to tell the style image from raw content crops,
    then freeze it."""
    d = state.discriminator
    d.train()
    done = 0
    epoch = 0
    while done < steps:
        for batch in dataset.batches(10_000 + epoch, batch_size):
            loss = adversarial_loss_d(discriminate(d, style), discriminate(d, batch))
            state.opt_d.zero_grad(set_to_none=True)
            loss.backward()
            state.opt_d.step()
            done += 1
            if done >= steps:
                break
        epoch += 1
    d.requires_grad_(False)
    state.discriminator_frozen = True


# checkpoints ---------------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(state: TrainState, path) -> Path:
    """Write ``path`` (torch archive) and ``path.json`` (metadata sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    archive = {
        "format": CHECKPOINT_FORMAT,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "batch_index": state.batch_index,
        "discriminator_frozen": state.discriminator_frozen,
        "rng": torch.get_rng_state(),
        "config": state.config.to_dict() if state.config else None,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(archive, tmp)
    os.replace(tmp, path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "generator_spec": state.spec.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "config_hash": state.config.config_hash() if state.config else None,
        "archive_sha256": _sha256(path),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_checkpoint_meta(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no checkpoint at {path}")
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text())
        meta["generator_spec"] = GeneratorSpec.from_dict(meta["generator_spec"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint metadata {side}: {exc}") from exc
    return meta


def load_checkpoint(path, spec: Optional[GeneratorSpec] = None,
                    cfg: Optional[TrainingConfig] = None,
                    extractor: Optional[PerceptualExtractor] = None) -> TrainState:
    """Restore a :class:`TrainState`.

    ``spec`` (or ``cfg.generator_spec``) is compared with the stored spec before
    any weights are accepted.
    """
    path = Path(path)
    meta = read_checkpoint_meta(path)
    expected = spec or (cfg.generator_spec if cfg else None)
    if expected is not None and expected != meta["generator_spec"]:
        raise IncompatibleCheckpoint(
            f"checkpoint spec {meta['generator_spec']} does not match configured {expected}"
        )
    if meta.get("archive_sha256") != _sha256(path):
        raise CorruptCheckpoint(f"checkpoint archive {path} does not match its checksum")
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types on bad archives
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc

    if cfg is None and archive.get("config"):
        cfg = TrainingConfig.from_dict(archive["config"])
    g = Generator(meta["generator_spec"])
    d = Discriminator()
    try:
        g.load_state_dict(archive["generator"])
        d.load_state_dict(archive["discriminator"])
    except (RuntimeError, KeyError) as exc:
        raise IncompatibleCheckpoint(f"checkpoint weights do not fit the model: {exc}") from exc
    if cfg is not None:
        opt_g, opt_d = _optimizers(cfg, g, d)
    else:
        opt_g = torch.optim.Adam(g.parameters())
        opt_d = torch.optim.Adam(d.parameters())
    opt_g.load_state_dict(archive["opt_g"])
    opt_d.load_state_dict(archive["opt_d"])
    torch.set_rng_state(archive["rng"])
    frozen = bool(archive.get("discriminator_frozen", False))
    d.requires_grad_(not frozen)
    return TrainState(
        g, d, opt_g, opt_d,
        step=int(archive["step"]),
        epoch=int(archive["epoch"]),
        batch_index=int(archive["batch_index"]),
        discriminator_frozen=frozen,
        config=cfg,
        extractor=extractor,
    )


def load_generator(path, spec: Optional[GeneratorSpec] = None) -> Generator:
    """Generator only, in eval mode, for inference."""
    g = load_checkpoint(path, spec=spec).generator
    g.eval()
    g.requires_grad_(False)
    return g


# loop ------------------------------------------------------------------------


def _open_log(path: Path, keep_until_step: int):
    rows = []
    if path.exists() and keep_until_step > 0:
        with open(path, newline="") as f:
            rows = [r for r in csv.DictReader(f) if int(r["step"]) <= keep_until_step]
    f = open(path, "w", newline="")
    writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    return f, writer


def train(cfg: TrainingConfig, out_dir, resume=None, max_steps: Optional[int] = None,
          extractor: Optional[PerceptualExtractor] = None, checkpoint_every: int = 1) -> Path:
    """Run the configured number of epochs and return the ``final`` checkpoint path.

    Writes ``epoch_XXX.pt`` after every ``checkpoint_every``-th epoch, ``final.pt``
    at the end and a per-step ``loss_log.csv``. With ``max_steps`` the run stops
    early, writes ``last.pt`` and returns that path; pass it back as ``resume``
    to continue.
    """
    if checkpoint_every < 1:
        raise InvalidArgument(f"checkpoint_every must be >= 1, got {checkpoint_every}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out_dir / ".train.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout as exc:
        raise StateError(f"another training run holds {out_dir}") from exc
    try:
        return _train_locked(cfg, out_dir, resume, max_steps, extractor, checkpoint_every)
    finally:
        lock.release()
        try:
            os.remove(out_dir / ".train.lock")
        except OSError:
            pass


def _train_locked(cfg, out_dir, resume, max_steps, extractor, checkpoint_every):
    dataset = build_dataset(cfg.content_dir, cfg.crop_size, cfg.seed)
    style = load_style(cfg.style_image, cfg.crop_size)
    extractor = extractor if extractor is not None else make_extractor(cfg)
    if resume is not None:
        state = load_checkpoint(resume, cfg=cfg, extractor=extractor)
    else:
        state = init_state(cfg, extractor)
        if cfg.discriminator_mode == "frozen_pretrained":
            pretrain_discriminator(state, dataset, style, cfg.batch_size,
                                   dataset.steps_per_epoch(cfg.batch_size))

    log_file, writer = _open_log(out_dir / "loss_log.csv", state.step)
    try:
        while state.epoch < cfg.epochs:
            for batch in dataset.batches(state.epoch, cfg.batch_size, start=state.batch_index):
                try:
                    _, bundle = train_step(state, batch, style, cfg)
                except TrainingDiverged:
                    log.error("training diverged at step %d; keeping earlier checkpoints", state.step)
                    raise
                state.batch_index += 1
                writer.writerow({"step": state.step, **bundle.as_dict()})
                if max_steps is not None and state.step >= max_steps:
                    log_file.flush()
                    return save_checkpoint(state, out_dir / "last.pt")
            state.epoch += 1
            state.batch_index = 0
            if state.epoch % checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"epoch_{state.epoch:03d}.pt")
            log_file.flush()
            log.info("epoch %d done at step %d", state.epoch, state.step)
    finally:
        log_file.close()
    return save_checkpoint(state, out_dir / "final.pt")
