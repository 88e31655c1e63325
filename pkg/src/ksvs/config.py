"""Flat dataclass configs; JSON files mirror these field names one-to-one."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Tuple

from . import hangul


@dataclass
class ModelConfig:
    n_mels: int = 80
    n_bins: int = 513
    d_model: int = 64
    sr_channels: int = 64
    text_vocab: int = hangul.TEXT_VOCAB
    pitch_vocab: int = hangul.PITCH_VOCAB
    dropout: float = 0.05
    enc_dilations: Tuple[int, ...] = (1, 3, 9, 27)
    dec_dilations: Tuple[int, ...] = (1, 3, 9, 27)
    mask_dilations: Tuple[int, ...] = (1, 3, 9)
    disc_channels: Tuple[int, int] = (16, 32)
    use_mask: bool = True           # phonetic-enhancement mask decoder
    sr_conditioning: bool = True    # text/pitch local conditioning of the SR net
    sr_cond_keys: bool = False      # also feed the text keys (not only values) to SR
    init_seed: int = 0


@dataclass
class TrainConfig:
    # optimisation
    base_lr: float = 2e-4
    halve_every: int = 30000
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    batch_size: int = 4
    crop_frames: int = 64
    iters: int = 1000
    seed: int = 0
    # losses
    guided_g: float = 0.2
    r1_gamma: float = 10.0
    r1_wrt: str = "both"            # "both" or "spec"
    gan_mode: str = "vanilla"       # "vanilla" or "literal"
    adversarial: bool = True        # False pins lr_GAN to 0 (L1-only ablation)
    # bookkeeping
    manifest: str = ""
    val_every: int = 500
    ckpt_every: int = 1000
    log_every: int = 1
    # model
    d_model: int = 64
    sr_channels: int = 64
    dropout: float = 0.05
    use_mask: bool = True
    sr_conditioning: bool = True
    sr_cond_keys: bool = False
    enc_dilations: Tuple[int, ...] = (1, 3, 9, 27)
    dec_dilations: Tuple[int, ...] = (1, 3, 9, 27)
    disc_channels: Tuple[int, int] = (16, 32)

    def __post_init__(self):
        for name in ("base_lr", "halve_every", "batch_size", "crop_frames", "d_model", "sr_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.r1_wrt not in ("both", "spec"):
            raise ValueError("r1_wrt must be 'both' or 'spec'")
        if self.gan_mode not in ("vanilla", "literal"):
            raise ValueError("gan_mode must be 'vanilla' or 'literal'")
        for name in ("enc_dilations", "dec_dilations", "disc_channels"):
            setattr(self, name, tuple(getattr(self, name)))

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, sr_channels=self.sr_channels, dropout=self.dropout,
                           enc_dilations=self.enc_dilations, dec_dilations=self.dec_dilations,
                           disc_channels=self.disc_channels, use_mask=self.use_mask,
                           sr_conditioning=self.sr_conditioning, sr_cond_keys=self.sr_cond_keys,
                           init_seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
