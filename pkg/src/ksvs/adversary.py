"""Conditional projection discriminator, R1 penalty and GAN losses."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

Tensor = torch.Tensor


def f_gan(t: Tensor) -> Tensor:
    """f(t) = -log(1 + exp(-t)) = log sigmoid(t), evaluated stably."""
    return -F.softplus(-t)


def _strided(n: int, stride: int) -> int:
    return (n + 2 - 3) // stride + 1


@dataclass
class DiscOutput:
    logit: Tensor
    base: Tensor
    proj: Tensor


class Discriminator(nn.Module):
    """Scores a (mel, linear spectrogram) pair.

    The spectrogram goes through a 2-D conv stack that reaches the mel's
    frame rate; a 3x3 conv of that feature map is inner-producted with a
    1-D conv of the mel condition and the result is added to an
    unconditional linear head.
    """

    def __init__(self, n_mels: int = 80, n_bins: int = 513, channels=(16, 32)):
        super().__init__()
        c1, c2 = channels
        strides = [(2, 1), (2, 2), (2, 2), (2, 1), (2, 1)]
        chans = [1, c1, c1, c2, c2, c2]
        self.convs = nn.ModuleList([nn.Conv2d(chans[i], chans[i + 1], 3, s, 1) for i, s in enumerate(strides)])
        f = n_bins
        for s, _ in strides:
            f = _strided(f, s)
        self.feat_bins, self.feat_ch = f, c2
        self.phi = nn.Conv2d(c2, c2, 3, 1, 1)
        self.psi = nn.Conv1d(n_mels, c2 * f, 3, padding=1)
        self.head = nn.Linear(c2, 1)

    def features(self, S: Tensor) -> Tensor:
        h = S.unsqueeze(1)
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        return h

    def forward(self, M: Tensor, S: Tensor) -> DiscOutput:
        if S.shape[-1] != 4 * M.shape[-1]:
            raise ValueError(f"time mismatch: spectrogram has {S.shape[-1]} frames, mel {M.shape[-1]} (need 4x)")
        h = self.features(S)
        base = self.head(h.mean(dim=(2, 3))).squeeze(-1)
        phi = self.phi(h)
        psi = self.psi(M).view(M.shape[0], self.feat_ch, self.feat_bins, M.shape[-1])
        proj = (phi * psi).sum(dim=(1, 2)).mean(dim=-1)
        return DiscOutput(base + proj, base, proj)


def _logit(out):
    return out.logit if isinstance(out, DiscOutput) else out


def r1_penalty(D, M: Tensor, S: Tensor, gamma: float = 10.0, wrt: str = "both") -> Tensor:
    """gamma/2 * E ||d logit / d(M, S)||^2 on real pairs only.

    Inputs that carry autograd history are treated as generated samples and
    rejected.  ``wrt="spec"`` restricts the gradient to the spectrogram.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if M.grad_fn is not None or S.grad_fn is not None:
        raise ValueError("R1 is defined on real samples only; got a tensor with autograd history")
    S_ = S.detach().requires_grad_(True)
    M_ = M.detach().requires_grad_(wrt == "both")
    inputs = [S_, M_] if wrt == "both" else [S_]
    logit = _logit(D(M_, S_))
    grads = torch.autograd.grad(logit.sum(), inputs, create_graph=True, allow_unused=True)
    sq = sum(g.pow(2).flatten(1).sum(1) for g in grads if g is not None)
    if not torch.is_tensor(sq):
        return logit.sum() * 0.0
    return 0.5 * gamma * sq.mean()


def adv_losses(logits_real: Tensor, logits_fake: Tensor, r1=0.0, mode: str = "vanilla"):
    """(L_adv_D, L_adv_G).

    ``vanilla``: D maximises log s(real) + log(1 - s(fake)); G minimises the
    non-saturating -log s(fake).  ``literal`` keeps the printed signs:
    D: -E f(real) - E f(fake) + R1, G: E f(fake).
    """
    if logits_real.numel() == 0 or logits_fake.numel() == 0:
        raise ValueError("empty logit batch")
    if mode == "vanilla":
        loss_d = -f_gan(logits_real).mean() - f_gan(-logits_fake).mean() + r1
        loss_g = -f_gan(logits_fake).mean()
    elif mode == "literal":
        loss_d = -f_gan(logits_real).mean() - f_gan(logits_fake).mean() + r1
        loss_g = f_gan(logits_fake).mean()
    else:
        raise ValueError(f"unknown gan mode {mode!r}")
    return loss_d, loss_g
