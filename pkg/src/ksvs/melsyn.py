"""Autoregressive mel-synthesis network with a text-only phonetic mask.

Text and pitch encoders share one architecture.  Queries from a causal
audio encoder attend over text keys; the attended values plus queries feed a
causal mel decoder that is locally conditioned on the pitch encoding.  A
separate decoder sees only the text values and emits a multiplicative mask,
and the final mel is ``mask * decoder_output``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .losses import (binary_divergence, check_unit_range, diff_l1, guided_attention_loss, l1,
                     product_log_probs, sigmoid_log_probs)
from .tensor import Conv1d, Dropout, HighwayConv

Tensor = torch.Tensor


class Encoder(nn.Module):
    """Embedding -> 1x1 convs -> dilated highway stack (non-causal)."""

    def __init__(self, vocab: int, d: int, out_channels: int, dilations=(1, 3, 9, 27), p_drop=0.05):
        super().__init__()
        self.vocab = vocab
        self.embed = nn.Embedding(vocab, d)
        self.pre = nn.ModuleList([Conv1d(d, 2 * d), Conv1d(2 * d, 2 * d)])
        self.drop = Dropout(p_drop)
        blocks = [HighwayConv(2 * d, 3, dil, p_drop=p_drop) for dil in dilations]
        blocks += [HighwayConv(2 * d, 3, 1, p_drop=p_drop) for _ in range(2)]
        blocks += [HighwayConv(2 * d, 1, 1, p_drop=p_drop) for _ in range(2)]
        self.blocks = nn.ModuleList(blocks)
        self.out = Conv1d(2 * d, out_channels)

    def forward(self, ids: Tensor) -> Tensor:
        if ids.min() < 0 or ids.max() >= self.vocab:
            raise ValueError(f"token id out of range [0, {self.vocab})")
        x = self.embed(ids).transpose(1, 2)
        x = self.drop(F.relu(self.pre[0](x)))
        x = self.drop(self.pre[1](x))
        for blk in self.blocks:
            x = blk(x)
        return self.out(x)


class AudioEncoder(nn.Module):
    def __init__(self, n_mels, d, dilations=(1, 3, 9, 27), p_drop=0.05):
        super().__init__()
        self.pre = nn.ModuleList([Conv1d(n_mels, d, causal=True), Conv1d(d, d, causal=True),
                                  Conv1d(d, d, causal=True)])
        self.drop = Dropout(p_drop)
        blocks = [HighwayConv(d, 3, dil, causal=True, p_drop=p_drop) for dil in dilations]
        blocks += [HighwayConv(d, 3, 3, causal=True, p_drop=p_drop) for _ in range(2)]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, mel: Tensor) -> Tensor:
        x = self.drop(F.relu(self.pre[0](mel)))
        x = self.drop(F.relu(self.pre[1](x)))
        x = self.drop(self.pre[2](x))
        for blk in self.blocks:
            x = blk(x)
        return x


class MelDecoder(nn.Module):
    """Causal decoder; each highway block adds a 1x1 projection of the pitch encoding."""

    def __init__(self, n_mels, d, dilations=(1, 3, 9, 27), p_drop=0.05):
        super().__init__()
        self.inp = Conv1d(2 * d, d, causal=True)
        self.drop = Dropout(p_drop)
        n_blocks = len(dilations) + 2
        dils = list(dilations) + [1, 1]
        self.blocks = nn.ModuleList([HighwayConv(d, 3, dil, causal=True, p_drop=p_drop) for dil in dils])
        self.cond = nn.ModuleList([Conv1d(d, 2 * d, bias=False) for _ in range(n_blocks)])
        self.post = nn.ModuleList([Conv1d(d, d, causal=True) for _ in range(3)])
        self.out = Conv1d(d, n_mels, causal=True)

    def forward(self, x: Tensor, pitch: Tensor) -> Tensor:
        x = self.drop(self.inp(x))
        for blk, proj in zip(self.blocks, self.cond):
            x = blk(x, proj(pitch))
        for conv in self.post:
            x = self.drop(F.relu(conv(x)))
        return self.out(x)


class MaskDecoder(nn.Module):
    """Text-only decoder producing mask logits (non-causal: text is known up front)."""

    def __init__(self, n_mels, d, dilations=(1, 3, 9), p_drop=0.05):
        super().__init__()
        self.inp = Conv1d(d, d)
        self.drop = Dropout(p_drop)
        self.blocks = nn.ModuleList([HighwayConv(d, 3, dil, p_drop=p_drop) for dil in dilations])
        self.post = Conv1d(d, d)
        self.out = Conv1d(d, n_mels)

    def forward(self, V: Tensor) -> Tensor:
        x = self.drop(self.inp(V))
        for blk in self.blocks:
            x = blk(x)
        return self.out(self.drop(F.relu(self.post(x))))


@dataclass
class Encodings:
    K: Tensor
    V: Tensor
    E_P: Tensor


@dataclass
class MelSynOutput:
    mel: Tensor
    mask: Tensor
    dm: Tensor
    attn: Tensor            # (B, N_text, T_time); columns sum to 1
    dm_logits: Tensor
    mask_logits: Optional[Tensor]
    enc: Encodings

    def log_probs(self):
        if self.mask_logits is None:
            return sigmoid_log_probs(self.dm_logits)
        return product_log_probs(self.mask_logits, self.dm_logits)


class MelSynNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.text_enc = Encoder(cfg.text_vocab, d, 2 * d, cfg.enc_dilations, cfg.dropout)
        self.pitch_enc = Encoder(cfg.pitch_vocab, d, d, cfg.enc_dilations, cfg.dropout)
        self.audio_enc = AudioEncoder(cfg.n_mels, d, cfg.enc_dilations, cfg.dropout)
        self.decoder = MelDecoder(cfg.n_mels, d, cfg.dec_dilations, cfg.dropout)
        self.mask_dec = MaskDecoder(cfg.n_mels, d, cfg.mask_dilations, cfg.dropout) if cfg.use_mask else None

    def encode(self, T: Tensor, P: Tensor) -> Encodings:
        if T.shape != P.shape:
            raise ValueError(f"T and P shapes differ: {tuple(T.shape)} vs {tuple(P.shape)}")
        K, V = self.text_enc(T).chunk(2, dim=1)
        return Encodings(K, V, self.pitch_enc(P))

    def forward(self, M_prev: Tensor, T: Tensor, P: Tensor,
                enc: Optional[Encodings] = None) -> MelSynOutput:
        """``M_prev`` (B, n_mels, L) is the one-frame-delayed mel; T, P are (B, L) ids."""
        if M_prev.shape[-1] != T.shape[-1] or T.shape != P.shape:
            raise ValueError(f"length mismatch: M_prev {M_prev.shape[-1]}, T {T.shape[-1]}, P {P.shape[-1]}")
        if enc is None:
            enc = self.encode(T, P)
        Q = self.audio_enc(M_prev)
        scores = torch.einsum("bdn,bdt->bnt", enc.K, Q) / math.sqrt(enc.K.shape[1])
        A = torch.softmax(scores, dim=1)
        R = torch.einsum("bdn,bnt->bdt", enc.V, A)
        dm_logits = self.decoder(torch.cat([R, Q], dim=1), enc.E_P)
        dm = torch.sigmoid(dm_logits)
        if self.mask_dec is not None:
            mask_logits = self.mask_dec(enc.V)
            mask = torch.sigmoid(mask_logits)
        else:
            mask_logits, mask = None, torch.ones_like(dm)
        return MelSynOutput(mask * dm, mask, dm, A, dm_logits, mask_logits, enc)

    @torch.no_grad()
    def synth_autoregressive(self, T: Tensor, P: Tensor, L: Optional[int] = None) -> MelSynOutput:
        """Generate frame by frame from an all-zero start frame (dropout off).

        Returns a final forward pass over the self-generated history, which by
        causality reproduces every step's frame.
        """
        if L is None:
            L = T.shape[-1]
        if L < 1:
            raise ValueError("L must be >= 1")
        T, P = T[..., :L], P[..., :L]
        was_training = self.training
        self.eval()
        try:
            enc = self.encode(T, P)
            M_prev = torch.zeros(T.shape[0], self.cfg.n_mels, L, dtype=enc.V.dtype)
            for t in range(L - 1):
                frame = self.forward(M_prev, T, P, enc).mel[..., t]
                M_prev[..., t + 1] = frame
            return self.forward(M_prev, T, P, enc)
        finally:
            self.train(was_training)


@dataclass
class MelSynLoss:
    l1: Tensor
    ld: Tensor
    att: Tensor
    l1_diff: Tensor

    @property
    def total(self) -> Tensor:
        return self.l1 + self.ld + self.att + self.l1_diff


def melsyn_loss(out: MelSynOutput, M: Tensor, g: float = 0.2) -> MelSynLoss:
    if out.mel.shape != M.shape:
        raise ValueError(f"shape mismatch: {tuple(out.mel.shape)} vs {tuple(M.shape)}")
    check_unit_range(M, "ground-truth mel")
    log_p, log_1mp = out.log_probs()
    return MelSynLoss(l1(out.mel, M), binary_divergence(log_p, log_1mp, M),
                      guided_attention_loss(out.attn, g), diff_l1(out.mel, M))
