"""scikit-learn style wrapper: ``fit`` trains a single-style generator, ``transform``
stylizes images with the configured fusion coefficients."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import imaging
from .config import OptimizerConfig, TrainingConfig
from .errors import InvalidArgument
from .experiments import stylize_any
from .losses import LossWeights, PerceptualExtractor
from .network import FusionCoefficients, GeneratorSpec
from .training import (
    ContentDataset,
    build_dataset,
    init_state,
    load_checkpoint,
    load_style,
    save_checkpoint,
    train_step,
)
from .validation import as_image_batch


class RegionStyleTransfer(TransformerMixin, BaseEstimator):
    """Single-style transfer model with an edge-weighted content loss.

    Parameters mirror :class:`rcst.config.TrainingConfig`; ``alpha`` and ``beta``
    are the fusion coefficients used by :meth:`transform`. ``max_steps`` caps the
    number of optimisation steps regardless of ``epochs``.

    ``fit`` accepts a directory of images or an array of images
    (N, 3, H, W) / (N, H, W, 3), float in [0, 1] or uint8.
    """

    def __init__(
        self,
        style_image=None,
        crop_size: int = 256,
        batch_size: int = 8,
        epochs: int = 8,
        max_steps: Optional[int] = None,
        lr: float = 1e-4,
        loss_weights=(1.0, 10.0, 1.0, 50.0),
        blur_sigma: float = 1.0,
        shallow_anchor_weight: float = 0.0,
        base_channels: int = 32,
        downsample_factor: int = 4,
        unet_depth: int = 2,
        discriminator_mode: str = "joint",
        extractor_weights=None,
        alpha: float = 1.0,
        beta: float = 1.0,
        random_state: int = 0,
    ):
        self.style_image = style_image
        self.crop_size = crop_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.lr = lr
        self.loss_weights = loss_weights
        self.blur_sigma = blur_sigma
        self.shallow_anchor_weight = shallow_anchor_weight
        self.base_channels = base_channels
        self.downsample_factor = downsample_factor
        self.unet_depth = unet_depth
        self.discriminator_mode = discriminator_mode
        self.extractor_weights = extractor_weights
        self.alpha = alpha
        self.beta = beta
        self.random_state = random_state

    def _config(self, content_dir="<memory>", style_image="<memory>") -> TrainingConfig:
        return TrainingConfig(
            content_dir=str(content_dir),
            style_image=str(style_image),
            crop_size=self.crop_size,
            batch_size=self.batch_size,
            epochs=self.epochs,
            optimizer=OptimizerConfig(lr=self.lr),
            loss_weights=LossWeights(*self.loss_weights),
            blur_sigma=self.blur_sigma,
            seed=self.random_state,
            generator_spec=GeneratorSpec(self.base_channels, self.downsample_factor, self.unet_depth),
            discriminator_mode=self.discriminator_mode,
            shallow_anchor_weight=self.shallow_anchor_weight,
            extractor_weights=self.extractor_weights,
        )

    def _style_tensor(self) -> torch.Tensor:
        if self.style_image is None:
            raise InvalidArgument("style_image is required to fit")
        if isinstance(self.style_image, (str, Path)):
            return load_style(self.style_image, self.crop_size)
        from .training import resize_shorter_side

        return resize_shorter_side(as_image_batch(self.style_image)[:1], self.crop_size)

    def fit(self, X, y=None):
        if isinstance(X, (str, Path)):
            dataset = build_dataset(X, self.crop_size, self.random_state)
            cfg = self._config(content_dir=X)
        else:
            batch = as_image_batch(X)
            dataset = ContentDataset(list(batch), self.crop_size, self.random_state)
            cfg = self._config()
        style = self._style_tensor()
        extractor = (
            PerceptualExtractor.from_file(cfg.extractor_weights)
            if cfg.extractor_weights
            else PerceptualExtractor.random(cfg.seed)
        )
        state = init_state(cfg, extractor)
        history = []
        limit = self.max_steps
        while state.epoch < cfg.epochs and (limit is None or state.step < limit):
            for b in dataset.batches(state.epoch, cfg.batch_size):
                _, bundle = train_step(state, b, style, cfg)
                history.append(bundle.as_dict())
                if limit is not None and state.step >= limit:
                    break
            else:
                state.epoch += 1
        self.state_ = state
        self.generator_ = state.generator.eval()
        self.loss_history_ = history
        self.n_steps_ = state.step
        return self

    def transform(self, X) -> np.ndarray:
        """Stylized copies of ``X`` as a float array (N, 3, H, W) in [0, 1]."""
        check_is_fitted(self, "generator_")
        batch = as_image_batch(X)
        coeffs = FusionCoefficients(self.alpha, self.beta).validated()
        outs = [stylize_any(self.generator_, img[None], coeffs) for img in batch]
        return torch.cat(outs).numpy()

    def edge_weights(self, X) -> np.ndarray:
        """Edge weight maps (N, 1, H, W) of ``X``; needs no fitting."""
        return imaging.edge_weight_map(as_image_batch(X), self.blur_sigma).numpy()

    def save(self, path) -> Path:
        check_is_fitted(self, "state_")
        return save_checkpoint(self.state_, path)

    @classmethod
    def from_checkpoint(cls, path, **params) -> "RegionStyleTransfer":
        """Rebuild a fitted estimator from a checkpoint written by training or :meth:`save`."""
        state = load_checkpoint(path)
        spec = state.spec
        est = cls(base_channels=spec.base_channels, downsample_factor=spec.downsample_factor,
                  unet_depth=spec.unet_depth, **params)
        if state.config is not None:
            cfg = state.config
            est.set_params(crop_size=cfg.crop_size, batch_size=cfg.batch_size, epochs=cfg.epochs,
                           lr=cfg.optimizer.lr, loss_weights=tuple(cfg.loss_weights),
                           blur_sigma=cfg.blur_sigma, random_state=cfg.seed,
                           shallow_anchor_weight=cfg.shallow_anchor_weight)
            est.set_params(**params)
        est.state_ = state
        est.generator_ = state.generator.eval()
        est.n_steps_ = state.step
        return est


__all__ = ["RegionStyleTransfer", "NotFittedError"]
