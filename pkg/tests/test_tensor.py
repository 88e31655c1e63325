import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ksvs.tensor import (AdamState, Conv1d, Dropout, HighwayConv, NonFiniteError, adam_step,
                         causal_dilated_conv1d, dropout, grad_check, highway_forward,
                         param_store, xavier_init)


def test_xavier_bound_unit_fans():
    w = xavier_init((50, 50), 3, 3, rng_seed=1)
    assert w.abs().max() <= 1.0


def test_xavier_deterministic():
    assert torch.equal(xavier_init((4, 5), 4, 5, rng_seed=9), xavier_init((4, 5), 4, 5, rng_seed=9))
    assert not torch.equal(xavier_init((4, 5), 4, 5, rng_seed=9), xavier_init((4, 5), 4, 5, rng_seed=10))


def test_xavier_variance():
    w = xavier_init((1000, 1000), 600, 600, rng_seed=0, dtype=torch.float64)
    a = math.sqrt(6 / 1200)
    assert abs(w.var().item() - a * a / 3) < 0.2 * a * a / 3


def test_xavier_rejects_zero_fan():
    with pytest.raises(ValueError):
        xavier_init((2, 2), 0, 3)


def test_causal_conv_identity():
    x = torch.randn(3, 7)
    w = torch.eye(3).unsqueeze(-1)
    assert torch.equal(causal_dilated_conv1d(x, w), x)


def test_causal_conv_past_tap():
    x = torch.tensor([[1.0, 2.0, 3.0]])
    w = torch.tensor([[[1.0, 0.0]]])  # first tap looks one frame back
    assert causal_dilated_conv1d(x, w).tolist() == [[0.0, 1.0, 2.0]]


def test_causal_conv_channel_mismatch():
    with pytest.raises(ValueError):
        causal_dilated_conv1d(torch.randn(2, 5), torch.randn(1, 3, 2))


@settings(max_examples=30, deadline=None)
@given(t=st.integers(0, 11), dil=st.integers(1, 4), k=st.integers(1, 4))
def test_causal_conv_ignores_future(t, dil, k):
    g = torch.Generator().manual_seed(t * 31 + dil)
    x = torch.randn(2, 3, 12, generator=g)
    w = torch.randn(4, 3, k, generator=g)
    y0 = causal_dilated_conv1d(x, w, dil)
    x2 = x.clone()
    x2[..., t + 1:] += 5.0
    y1 = causal_dilated_conv1d(x2, w, dil)
    assert torch.equal(y0[..., :t + 1], y1[..., :t + 1])


def test_highway_gates():
    x, h = torch.randn(4, 5), torch.randn(4, 5)
    assert torch.equal(highway_forward(x, h, torch.full_like(x, -1e6)), x)
    assert torch.equal(highway_forward(x, h, torch.full_like(x, 1e6)), h)
    assert torch.allclose(highway_forward(x, h, torch.zeros_like(x)), (x + h) / 2)
    with pytest.raises(ValueError):
        highway_forward(x, h[:, :2], x)


def test_highway_conv_causal_module():
    blk = HighwayConv(3, 3, 2, causal=True)
    torch.nn.init.normal_(blk.conv.weight)
    x = torch.randn(1, 3, 10)
    x2 = x.clone()
    x2[..., 6:] = 0
    assert torch.equal(blk(x)[..., :6], blk(x2)[..., :6])


def test_dropout_inference_identity_and_seeded_training():
    x = torch.ones(100)
    assert torch.equal(dropout(x, 0.5, False), x)
    a = dropout(x, 0.5, True, torch.Generator().manual_seed(3))
    b = dropout(x, 0.5, True, torch.Generator().manual_seed(3))
    assert torch.equal(a, b)
    assert set(a.unique().tolist()) <= {0.0, 2.0}
    d = Dropout(0.5)
    d.eval()
    assert torch.equal(d(x), x)


def test_conv1d_module_shapes():
    c = Conv1d(3, 5, k=3, dilation=2)
    assert c(torch.randn(2, 3, 9)).shape == (2, 5, 9)


def _quad_setup():
    p = {"x": torch.nn.Parameter(torch.tensor([2.0]))}
    return p, AdamState()


def test_adam_zero_grad_keeps_params():
    p, st_ = _quad_setup()
    adam_step(p, {"x": torch.zeros(1)}, st_, 0.1)
    assert p["x"].item() == 2.0 and st_.t == 1
    assert st_.m["x"].shape == p["x"].shape


def test_adam_first_step_is_sign():
    p, st_ = _quad_setup()
    adam_step(p, {"x": torch.tensor([0.3])}, st_, 0.01)
    assert abs(p["x"].item() - (2.0 - 0.01)) < 1e-6


def test_adam_descends_quadratic():
    p, st_ = _quad_setup()
    vals = []
    for _ in range(100):
        adam_step(p, {"x": 2 * p["x"].detach()}, st_, 0.01)
        vals.append(p["x"].item() ** 2)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert st_.t == 100


def test_adam_nan_names_parameter():
    p, st_ = _quad_setup()
    with pytest.raises(NonFiniteError, match="'x'"):
        adam_step(p, {"x": torch.tensor([float("nan")])}, st_, 0.1)
    assert st_.t == 0


def test_adam_rejects_bad_lr():
    p, st_ = _quad_setup()
    with pytest.raises(ValueError):
        adam_step(p, {"x": torch.zeros(1)}, st_, 0.0)


def test_adam_deterministic():
    outs = []
    for _ in range(2):
        torch.manual_seed(0)
        p = {"w": torch.nn.Parameter(torch.randn(3, 3))}
        s = AdamState()
        for i in range(5):
            adam_step(p, {"w": torch.sin(p["w"].detach() * i)}, s, 1e-2)
        outs.append(p["w"].detach().clone())
    assert torch.equal(*outs)


def test_param_store_names_ordered():
    a, b = Conv1d(2, 3), Conv1d(3, 1, bias=False)
    store = param_store(enc=a, dec=b)
    assert list(store) == ["enc.weight", "enc.bias", "dec.weight"]


def test_grad_check_quadratic():
    assert grad_check(lambda v: (v ** 2).sum(), torch.tensor([3.0])) < 1e-8


def test_grad_check_l1_away_from_kinks():
    tgt = torch.tensor([0.1, 0.9, -0.4], dtype=torch.float64)
    assert grad_check(lambda v: (v - tgt).abs().mean(), torch.tensor([0.5, 0.2, 0.3])) < 1e-6


def test_grad_check_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(3, dtype=torch.float64)

    assert grad_check(Bad.apply, torch.tensor([1.0, 2.0, 3.0])) > 0.5


def test_grad_check_nonfinite():
    with pytest.raises(NonFiniteError):
        grad_check(lambda v: torch.log(v).sum(), torch.tensor([-1.0]))


@settings(max_examples=15, deadline=None)
@given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), L=st.integers(1, 8),
       k=st.integers(1, 3), dil=st.integers(1, 3), seed=st.integers(0, 1000))
def test_conv_grad_check_random_shapes(c_in, c_out, L, k, dil, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(c_in, L, generator=g, dtype=torch.float64)
    w = torch.randn(c_out, c_in, k, generator=g, dtype=torch.float64)
    assert grad_check(lambda v: causal_dilated_conv1d(v, w, dil).pow(2).sum(), x) < 1e-4
    assert grad_check(lambda v: causal_dilated_conv1d(x, v, dil).pow(2).sum(), w) < 1e-4
