"""Training configuration record and its JSON/TOML serialization."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from .errors import InvalidArgument, NotFound
from .losses import LossWeights
from .network import GeneratorSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.999)

    def __post_init__(self):
        if self.kind != "adam":
            raise InvalidArgument(f"only the 'adam' optimizer is supported, got {self.kind!r}")
        if not self.lr > 0:
            raise InvalidArgument(f"lr must be > 0, got {self.lr}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise InvalidArgument(f"betas must be two values in [0, 1), got {self.betas}")


@dataclass(frozen=True)
class TrainingConfig:
    content_dir: str
    style_image: str
    crop_size: int = 256
    batch_size: int = 8
    epochs: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    blur_sigma: float = 1.0
    seed: int = 0
    generator_spec: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator_mode: str = "joint"
    iterative_mse: bool = False
    shallow_anchor_weight: float = 0.0
    extractor_weights: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "content_dir", str(self.content_dir))
        object.__setattr__(self, "style_image", str(self.style_image))
        object.__setattr__(self, "loss_weights", LossWeights(*self.loss_weights).validated())
        if self.crop_size % self.generator_spec.divisor:
            raise InvalidArgument(
                f"crop_size {self.crop_size} must be divisible by {self.generator_spec.divisor}"
            )
        if self.crop_size < 16:
            raise InvalidArgument("crop_size must be >= 16 for the discriminator")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidArgument(f"epochs must be >= 1, got {self.epochs}")
        if self.blur_sigma < 0:
            raise InvalidArgument(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if not self.shallow_anchor_weight >= 0:
            raise InvalidArgument(f"shallow_anchor_weight must be >= 0, got {self.shallow_anchor_weight}")
        if self.discriminator_mode not in ("joint", "frozen_pretrained"):
            raise InvalidArgument(
                f"discriminator_mode must be 'joint' or 'frozen_pretrained', got {self.discriminator_mode!r}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "optimizer" in d:
            opt = dict(d["optimizer"])
            bad = set(opt) - {"kind", "lr", "betas"}
            if bad:
                raise InvalidArgument(f"unknown optimizer keys: {sorted(bad)}")
            d["optimizer"] = OptimizerConfig(**opt)
        if "loss_weights" in d:
            lw = d["loss_weights"]
            if isinstance(lw, dict):
                bad = set(lw) - set(LossWeights._fields)
                if bad:
                    raise InvalidArgument(f"unknown loss_weights keys: {sorted(bad)}")
                lw = LossWeights(**lw)
            elif len(lw) != 4:
                raise InvalidArgument("loss_weights must have four entries")
            d["loss_weights"] = LossWeights(*lw)
        if "generator_spec" in d:
            d["generator_spec"] = GeneratorSpec.from_dict(dict(d["generator_spec"]))
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidArgument(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "TrainingConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainingConfig.from_dict(d)


def load_config(path) -> TrainingConfig:
    """Read a ``.json`` or ``.toml`` config. Relative data paths resolve against
    the config file's directory."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no config file at {path}")
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(path.read_text())
        else:
            raw = json.loads(path.read_text())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InvalidArgument(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidArgument(f"{path} must hold a table/object at top level")
    for key in ("content_dir", "style_image", "extractor_weights"):
        if raw.get(key) is not None and not Path(raw[key]).is_absolute():
            raw[key] = str((path.parent / raw[key]).resolve())
    return TrainingConfig.from_dict(raw)


def save_config(cfg: TrainingConfig, path) -> None:
    path = Path(path)
    d = cfg.to_dict()
    if path.suffix.lower() == ".toml":
        import tomli_w

        path.write_text(tomli_w.dumps({k: v for k, v in d.items() if v is not None}))
    else:
        path.write_text(json.dumps(d, indent=2) + "\n")
