"""Spectrogram reconstruction losses shared by the two generators."""
import torch
import torch.nn.functional as F

Tensor = torch.Tensor


def check_unit_range(x: Tensor, name: str = "target") -> None:
    if (x < 0).any() or (x > 1).any():
        raise ValueError(f"{name} must lie in [0, 1]")


def l1(pred: Tensor, target: Tensor) -> Tensor:
    return (pred - target).abs().mean()


def frame_diff(x: Tensor) -> Tensor:
    """x[..., t] - x[..., t-1] with an implicit zero frame before t=0."""
    return x - F.pad(x, (1, 0))[..., :-1]


def diff_l1(pred: Tensor, target: Tensor) -> Tensor:
    return l1(frame_diff(pred), frame_diff(target))


def binary_divergence(log_p: Tensor, log_1mp: Tensor, target: Tensor) -> Tensor:
    """Mean BCE given log p and log(1 - p) computed in logit space."""
    return -(target * log_p + (1.0 - target) * log_1mp).mean()


def sigmoid_log_probs(logits: Tensor):
    return F.logsigmoid(logits), F.logsigmoid(-logits)


def product_log_probs(a: Tensor, b: Tensor):
    """log p and log(1-p) for p = sigmoid(a) * sigmoid(b), without cancellation.

    1 - s(a)s(b) = (e^-a + e^-b + e^-(a+b)) * s(a) * s(b).
    """
    la, lb = F.logsigmoid(a), F.logsigmoid(b)
    log_p = la + lb
    log_1mp = torch.logsumexp(torch.stack([-a, -b, -a - b]), dim=0) + log_p
    return log_p, log_1mp


def guided_attention_weights(n_text: int, n_time: int, g: float = 0.2,
                             dtype=torch.float32) -> Tensor:
    """W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 g^2))."""
    n = torch.arange(n_text, dtype=torch.float64)[:, None] / n_text
    t = torch.arange(n_time, dtype=torch.float64)[None, :] / n_time
    return (1.0 - torch.exp(-((n - t) ** 2) / (2 * g * g))).to(dtype)


def guided_attention_loss(A: Tensor, g: float = 0.2) -> Tensor:
    """Mean of A * W; ``A`` is ``(..., N_text, T_time)``."""
    W = guided_attention_weights(A.shape[-2], A.shape[-1], g, A.dtype)
    return (A * W).mean()
