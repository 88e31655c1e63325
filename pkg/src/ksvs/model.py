"""Generator (mel-synthesis + SR) and discriminator construction."""
from __future__ import annotations

import torch
import torch.nn as nn

from .adversary import Discriminator
from .config import ModelConfig
from .melsyn import MelSynNet, MelSynOutput
from .srnet import SRNet, SROutput
from .tensor import init_xavier_, param_store


class Generator(nn.Module):
    """SR(MS(.), .): both stages act as one generator during adversarial training."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.melsyn = MelSynNet(cfg)
        self.sr = SRNet(cfg)

    def forward(self, M_prev, T, P):
        ms: MelSynOutput = self.melsyn(M_prev, T, P)
        sr: SROutput = self.sr(ms.mel, ms.enc.K, ms.enc.V, ms.enc.E_P)
        return ms, sr

    def params(self):
        return param_store(melsyn=self.melsyn, sr=self.sr)


def build_models(cfg: ModelConfig):
    """Xavier-initialised generator and discriminator, deterministic in ``cfg.init_seed``."""
    gen = Generator(cfg)
    disc = Discriminator(cfg.n_mels, cfg.n_bins, cfg.disc_channels)
    init_xavier_(gen, torch.Generator().manual_seed(cfg.init_seed))
    init_xavier_(disc, torch.Generator().manual_seed(cfg.init_seed + 7919))
    return gen, disc
