"""Autodiff primitives, layer building blocks and the Adam optimizer.

Reverse-mode differentiation is delegated to torch autograd (define-by-run
tape, freed after every backward).  This module holds the small set of
layer primitives the networks are assembled from, plus a central-difference
gradient checker used to verify every one of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

Tensor = torch.Tensor
ParamStore = Dict[str, Tensor]


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/Inf shows up where finite values are required."""


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {name}")
    return x


def xavier_init(shape, fan_in: int, fan_out: int, rng_seed=None,
                generator: Optional[torch.Generator] = None,
                dtype=torch.float32) -> Tensor:
    """Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)).

    Either pass ``rng_seed`` for a one-off draw or share a ``generator``
    across a whole model so each parameter gets a distinct stream.
    """
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")
    if generator is None:
        generator = torch.Generator().manual_seed(0 if rng_seed is None else int(rng_seed))
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    u = torch.rand(tuple(shape), generator=generator, dtype=torch.float64)
    return ((2.0 * u - 1.0) * bound).to(dtype)


def causal_dilated_conv1d(x: Tensor, w: Tensor, dilation: int = 1,
                          bias: Optional[Tensor] = None) -> Tensor:
    """1-D convolution that only looks at current and past frames.

    ``x`` is ``(C_in, L)`` or ``(B, C_in, L)``, ``w`` is ``(C_out, C_in, k)``;
    the last kernel tap multiplies the current frame.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    pad = (w.shape[2] - 1) * dilation
    y = F.conv1d(F.pad(x, (pad, 0)), w, bias, dilation=dilation)
    return y.squeeze(0) if squeeze else y


def same_dilated_conv1d(x: Tensor, w: Tensor, dilation: int = 1,
                        bias: Optional[Tensor] = None) -> Tensor:
    if x.shape[-2] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[-2]}, kernel expects {w.shape[1]}")
    total = (w.shape[2] - 1) * dilation
    left = total // 2
    return F.conv1d(F.pad(x, (left, total - left)), w, bias, dilation=dilation)


def highway_forward(x: Tensor, h: Tensor, gate_logits: Tensor) -> Tensor:
    """y = sigmoid(g) * h + (1 - sigmoid(g)) * x."""
    if not (x.shape == h.shape == gate_logits.shape):
        raise ValueError(f"shape mismatch: {tuple(x.shape)}, {tuple(h.shape)}, {tuple(gate_logits.shape)}")
    t = torch.sigmoid(gate_logits)
    return t * h + (1.0 - t) * x


def dropout(x: Tensor, p: float, training: bool,
            generator: Optional[torch.Generator] = None) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not training or p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


# -- modules -----------------------------------------------------------------

class Dropout(nn.Module):
    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.generator: Optional[torch.Generator] = None

    def forward(self, x):
        return dropout(x, self.p, self.training, self.generator)


class Conv1d(nn.Module):
    """Dilated 1-D conv with either causal or centred padding."""

    def __init__(self, c_in, c_out, k=1, dilation=1, causal=False, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(c_out, c_in, k))
        self.bias = nn.Parameter(torch.zeros(c_out)) if bias else None
        self.dilation = dilation
        self.causal = causal

    def forward(self, x):
        if self.causal:
            return causal_dilated_conv1d(x, self.weight, self.dilation, self.bias)
        return same_dilated_conv1d(x, self.weight, self.dilation, self.bias)


class HighwayConv(nn.Module):
    """Gated residual conv block: one conv produces both gate and candidate.

    ``cond`` inputs (already projected to ``2 * channels``) are added to the
    pre-activation, which is how local conditioning enters.
    """

    def __init__(self, channels, k=3, dilation=1, causal=False, p_drop=0.0):
        super().__init__()
        self.conv = Conv1d(channels, 2 * channels, k, dilation, causal)
        self.drop = Dropout(p_drop)

    def forward(self, x, cond: Optional[Tensor] = None):
        pre = self.conv(x)
        if cond is not None:
            pre = pre + cond
        gate, h = pre.chunk(2, dim=1)
        return self.drop(highway_forward(x, h, gate))


def init_xavier_(module: nn.Module, generator: torch.Generator) -> None:
    """Xavier-initialise every weight of ``module`` in registration order; zero biases."""
    for name, p in module.named_parameters():
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
                continue
            if p.dim() == 2:  # embedding table / linear
                fan_out, fan_in = p.shape
            else:
                receptive = math.prod(p.shape[2:])
                fan_in = p.shape[1] * receptive
                fan_out = p.shape[0] * receptive
            p.copy_(xavier_init(p.shape, fan_in, fan_out, generator=generator, dtype=p.dtype))


def set_dropout_generator(module: nn.Module, generator: Optional[torch.Generator]) -> None:
    for m in module.modules():
        if isinstance(m, Dropout):
            m.generator = generator


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, grads: Optional[Dict[str, Optional[Tensor]]],
              state: AdamState, lr: float, beta1: float = 0.5, beta2: float = 0.9,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's ``.grad``; missing gradients count
    as zero.  Gradients are screened for NaN/Inf before anything is touched.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + eps))
    return state


class Adam:
    """Thin stateful wrapper so training code reads like an optimizer loop."""

    def __init__(self, params: ParamStore, beta1=0.5, beta2=0.9, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        adam_step(self.params, None, self.state, lr, self.beta1, self.beta2, self.eps)


def param_store(**modules: nn.Module) -> ParamStore:
    """Flatten named modules into one ordered ``prefix.path -> Parameter`` map."""
    store: ParamStore = {}
    for prefix, mod in modules.items():
        for name, p in mod.named_parameters():
            store[f"{prefix}.{name}"] = p
    return store


# -- verification ------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Optional[Iterable[int]] = None) -> float:
    """Max relative error between autograd and central differences.

    Error per coordinate is ``|analytic - fd| / max(1, |analytic|)``.  ``f``
    is evaluated in float64; ``coords`` restricts the check to a subset of
    flat indices (all of them by default).
    """
    x = x.detach().to(torch.float64).clone().requires_grad_(True)
    y = f(x)
    if y.numel() != 1:
        raise ValueError("f must return a scalar")
    if not torch.isfinite(y).all():
        raise NonFiniteError("f(x) is not finite")
    (analytic,) = torch.autograd.grad(y, x, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)
    analytic = analytic.reshape(-1)
    flat = x.detach().reshape(-1)
    idx = range(flat.numel()) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i].item()
        xp = flat.clone()
        xp[i] = orig + eps
        fp = f(xp.view_as(x)).item()
        xp[i] = orig - eps
        fm = f(xp.view_as(x)).item()
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError(f"f not finite near coordinate {i}")
        fd = (fp - fm) / (2 * eps)
        a = analytic[i].item()
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
