"""Finite-difference checks of every differentiable op and the composite losses."""
from __future__ import annotations

import time
from typing import Callable, Dict

import torch
from torch.func import functional_call

from . import losses
from .adversary import Discriminator, adv_losses, r1_penalty
from .config import ModelConfig
from .melsyn import MelSynNet, melsyn_loss
from .srnet import SRNet, sr_loss
from .tensor import (HighwayConv, causal_dilated_conv1d, dropout, grad_check,
                     highway_forward, init_xavier_)

TOY = ModelConfig(n_mels=6, n_bins=33, d_model=4, sr_channels=4, enc_dilations=(1, 2),
                  dec_dilations=(1, 2), mask_dilations=(1,), disc_channels=(2, 3), dropout=0.0)


def _coords(n: int, k: int, g: torch.Generator):
    return torch.randperm(n, generator=g)[:k].tolist() if n > k else None


def _param_check(module, name, fn, g, k):
    """Check d fn / d (parameter ``name``) through a functional call."""
    base = dict(module.named_parameters())[name].detach().double()

    def f(w):
        return fn(lambda *a: functional_call(module, {name: w}, a))

    return grad_check(f, base, coords=_coords(base.numel(), k, g))


def checks(seed: int = 0, k: int = 24) -> Dict[str, Callable[[], float]]:
    g = torch.Generator().manual_seed(seed)
    rnd = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64)
    unit = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64) * 0.9 + 0.05
    ids = lambda vocab, *s: torch.randint(0, vocab, s, generator=g)

    def models():
        torch.manual_seed(seed)
        ms, sr = MelSynNet(TOY).double(), SRNet(TOY).double()
        disc = Discriminator(TOY.n_mels, TOY.n_bins, TOY.disc_channels).double()
        for i, m in enumerate((ms, sr, disc)):
            init_xavier_(m, torch.Generator().manual_seed(seed + i))
            m.eval()
        return ms, sr, disc

    ms, sr, disc = models()
    B, N, L = 2, 5, 5
    T, P = ids(TOY.text_vocab, B, L), ids(TOY.pitch_vocab, B, L)
    M, M_prev, S = unit(B, TOY.n_mels, L), unit(B, TOY.n_mels, L), unit(B, TOY.n_bins, 4 * L)
    x, w, a_, b_, tgt = rnd(2, 3, 7), rnd(4, 3, 3), rnd(3, 5), rnd(3, 5), unit(3, 5)
    hw = HighwayConv(3, 3, 2, causal=True).double()
    init_xavier_(hw, torch.Generator().manual_seed(seed))

    def ms_loss(call):
        return melsyn_loss(call(M_prev, T, P), M).total

    def sr_total(mel):
        enc = ms.encode(T, P)
        return sr_loss(sr(mel, enc.K, enc.V, enc.E_P), S).total

    def drop(v):
        return (dropout(v, 0.3, True, torch.Generator().manual_seed(1)) ** 2).sum()

    return {
        "causal_conv/x": lambda: grad_check(lambda v: causal_dilated_conv1d(v, w, 2).pow(2).sum(), x),
        "causal_conv/w": lambda: grad_check(lambda v: causal_dilated_conv1d(x, v, 2).pow(2).sum(), w),
        "highway": lambda: grad_check(lambda v: highway_forward(v, v.sin(), v.cos() * 2).sum(), a_),
        "highway_conv": lambda: grad_check(lambda v: hw(v).pow(2).sum(), x),
        "dropout": lambda: grad_check(drop, a_),
        "l1": lambda: grad_check(lambda v: losses.l1(v, tgt), a_),
        "diff_l1": lambda: grad_check(lambda v: losses.diff_l1(v, tgt), a_),
        "binary_divergence": lambda: grad_check(
            lambda v: losses.binary_divergence(*losses.sigmoid_log_probs(v), tgt), a_),
        "product_log_probs": lambda: grad_check(
            lambda v: losses.binary_divergence(*losses.product_log_probs(v, b_), tgt), a_),
        "guided_attention": lambda: grad_check(
            lambda v: losses.guided_attention_loss(torch.softmax(v, 0)), a_),
        "L_MS/M_prev": lambda: grad_check(lambda v: melsyn_loss(ms(v, T, P), M).total, M_prev,
                                          coords=_coords(M_prev.numel(), k, g)),
        "L_MS/decoder": lambda: _param_check(ms, "decoder.out.weight", ms_loss, g, k),
        "L_MS/mask": lambda: _param_check(ms, "mask_dec.out.weight", ms_loss, g, k),
        "L_MS/pitch_cond": lambda: _param_check(ms, "decoder.cond.0.weight", ms_loss, g, k),
        "L_MS/audio_enc": lambda: _param_check(ms, "audio_enc.pre.0.weight", ms_loss, g, k),
        "L_MS/text_embedding": lambda: _param_check(ms, "text_enc.embed.weight", ms_loss, g, k),
        "L_SR/mel": lambda: grad_check(sr_total, M, coords=_coords(M.numel(), k, g)),
        "L_SR/text_cond": lambda: _param_check(
            sr, "text_cond.conv.weight",
            lambda call: sr_loss(call(M, *_enc(ms, T, P)), S).total, g, k),
        "L_adv_G/spec": lambda: grad_check(lambda v: adv_losses(disc(M, S).logit, disc(M, v).logit)[1], S,
                                           coords=_coords(S.numel(), k, g)),
        "L_adv_G/mel": lambda: grad_check(lambda v: adv_losses(disc(M, S).logit, disc(v, S).logit)[1], M,
                                          coords=_coords(M.numel(), k, g)),
        "L_adv_D+R1/phi": lambda: _param_check(
            disc, "phi.weight",
            lambda call: adv_losses(call(M, S).logit, call(M_prev, 1 - S).logit,
                                    _r1_functional(disc, "phi.weight", call, M, S))[0], g, k),
    }


def _enc(ms, T, P):
    e = ms.encode(T, P)
    return e.K, e.V, e.E_P


def _r1_functional(disc, name, call, M, S, gamma=10.0):
    S_ = S.detach().requires_grad_(True)
    M_ = M.detach().requires_grad_(True)
    logit = call(M_, S_).logit
    gs = torch.autograd.grad(logit.sum(), [M_, S_], create_graph=True)
    return 0.5 * gamma * sum(x.pow(2).flatten(1).sum(1) for x in gs).mean()


def run_suite(seed: int = 0, k: int = 24, log=None) -> Dict[str, float]:
    results = {}
    for name, fn in checks(seed, k).items():
        t0 = time.time()
        results[name] = fn()
        if log:
            log(f"{name:24s} max rel err {results[name]:.2e}  ({time.time() - t0:.1f}s)")
    return results
