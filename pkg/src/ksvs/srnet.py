"""Super-resolution network: 80 x L mel -> 513 x 4L linear magnitude.

Two x2 transposed-conv stages restore the time resolution.  The text and
pitch encodings of the mel network are repeated to the target frame rate,
pass a 1x1 conv and dropout, and are added (through per-block 1x1
projections) to the highway blocks that follow each upsampling stage.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .losses import binary_divergence, check_unit_range, l1, sigmoid_log_probs
from .tensor import Conv1d, Dropout, HighwayConv

Tensor = torch.Tensor
UPSAMPLE = 4


def upsample_repeat(E: Tensor, factor: int = UPSAMPLE) -> Tensor:
    """Frame i -> frames factor*i .. factor*i + factor-1."""
    return E.repeat_interleave(factor, dim=-1)


class ConditioningBranch(nn.Module):
    def __init__(self, c_in, d, p_drop):
        super().__init__()
        self.conv = Conv1d(c_in, d)
        self.drop = Dropout(p_drop)

    def forward(self, E: Tensor) -> Tensor:
        return self.drop(self.conv(upsample_repeat(E)))


@dataclass
class SROutput:
    spec: Tensor
    logits: Tensor


class SRNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, d, p = cfg.sr_channels, cfg.d_model, cfg.dropout
        self.inp = Conv1d(cfg.n_mels, c)
        self.drop = Dropout(p)
        self.pre = nn.ModuleList([HighwayConv(c, 3, 1, p_drop=p), HighwayConv(c, 3, 3, p_drop=p)])
        self.up = nn.ModuleList([nn.ConvTranspose1d(c, c, 2, stride=2) for _ in range(2)])
        self.stages = nn.ModuleList([
            nn.ModuleList([HighwayConv(c, 3, 1, p_drop=p), HighwayConv(c, 3, 3, p_drop=p)])
            for _ in range(2)])
        self.post_in = Conv1d(c, 2 * c)
        self.post = nn.ModuleList([HighwayConv(2 * c, 3, 1, p_drop=p) for _ in range(2)])
        self.post_out = Conv1d(2 * c, 2 * c)
        self.out = Conv1d(2 * c, cfg.n_bins)
        if cfg.sr_conditioning:
            text_in = 2 * d if cfg.sr_cond_keys else d
            self.text_cond = ConditioningBranch(text_in, d, p)
            self.pitch_cond = ConditioningBranch(d, d, p)
            self.text_proj = nn.ModuleList([Conv1d(d, 2 * c, bias=False) for _ in range(4)])
            self.pitch_proj = nn.ModuleList([Conv1d(d, 2 * c, bias=False) for _ in range(4)])

    def conditioning(self, K: Tensor, V: Tensor, E_P: Tensor):
        text = torch.cat([K, V], dim=1) if self.cfg.sr_cond_keys else V
        return self.text_cond(text), self.pitch_cond(E_P)

    def forward(self, mel: Tensor, K: Optional[Tensor] = None, V: Optional[Tensor] = None,
                E_P: Optional[Tensor] = None) -> SROutput:
        L = mel.shape[-1]
        cond = None
        if self.cfg.sr_conditioning:
            if V is None or E_P is None:
                raise ValueError("conditioned SR net needs text and pitch encodings")
            if V.shape[-1] != L or E_P.shape[-1] != L:
                raise ValueError(f"encoding length {V.shape[-1]} does not match mel length {L}")
            cond = self.conditioning(K, V, E_P)
        x = self.drop(self.inp(mel))
        for blk in self.pre:
            x = blk(x)
        k = 0
        for s, (up, blocks) in enumerate(zip(self.up, self.stages)):
            x = up(x)
            step = 2 ** (1 - s)  # conditioning lives at 4L; stage 0 runs at 2L
            for blk in blocks:
                c = None
                if cond is not None:
                    c = (self.text_proj[k](cond[0][..., ::step])
                         + self.pitch_proj[k](cond[1][..., ::step]))
                x = blk(x, c)
                k += 1
        x = self.drop(self.post_in(x))
        for blk in self.post:
            x = blk(x)
        logits = self.out(self.drop(F.relu(self.post_out(x))))
        return SROutput(torch.sigmoid(logits), logits)


@dataclass
class SRLoss:
    l1: Tensor
    ld: Tensor

    @property
    def total(self) -> Tensor:
        return self.l1 + self.ld


def sr_loss(out: SROutput, S: Tensor) -> SRLoss:
    if out.spec.shape != S.shape:
        raise ValueError(f"shape mismatch: {tuple(out.spec.shape)} vs {tuple(S.shape)}")
    check_unit_range(S, "ground-truth spectrogram")
    return SRLoss(l1(out.spec, S), binary_divergence(*sigmoid_log_probs(out.logits), S))
