"""Differentiable building blocks: masked attention, causal convolution, FFN, head.

Gradients come from autograd; `grad_check` compares them against central
finite differences.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

KERNEL_SIZES = (3, 5, 7, 11)


def causal_mask(L: int, device=None) -> Tensor:
    """``(L, L)`` boolean mask, True where query ``t`` may attend key ``j <= t``."""
    return torch.ones(L, L, dtype=torch.bool, device=device).tril()


class MaskedMultiheadAttention(nn.Module):
    """Scaled dot-product attention restricted to ``j <= t`` and valid keys.

    Query rows with no admissible key output zeros.
    """

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

    def _weights(self, query: Tensor, key: Tensor, key_valid: Tensor | None) -> tuple[Tensor, Tensor]:
        q = self._heads(self.q_proj(query))
        k = self._heads(self.k_proj(key))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        allowed = causal_mask(query.shape[1], query.device)[None, None]
        if key_valid is not None:
            allowed = allowed & key_valid[:, None, None, :].bool()
        has_key = allowed.any(-1, keepdim=True)
        scores = scores.masked_fill(~allowed, float("-inf"))
        scores = torch.where(has_key, scores, torch.zeros_like(scores))
        return torch.softmax(scores, dim=-1) * has_key, has_key

    def attention_weights(self, query: Tensor, key: Tensor, key_valid: Tensor | None = None) -> Tensor:
        """``(B, H, L, L)`` attention probabilities (zeros on rows with no key)."""
        return self._weights(query, key, key_valid)[0]

    def forward(self, query: Tensor, key: Tensor, value: Tensor, key_valid: Tensor | None = None) -> Tensor:
        B, L, D = query.shape
        attn, has_key = self._weights(query, key, key_valid)
        v = self._heads(self.v_proj(value))
        ctx = (self.dropout(attn) @ v).transpose(1, 2).reshape(B, L, D)
        # has_key is identical across heads: (B or 1, 1, L, 1) -> (B or 1, L, 1)
        return self.out_proj(ctx) * has_key[:, 0].to(ctx.dtype)


class CausalConv1d(nn.Module):
    """Sequence-axis convolution over ``(B, L, D)`` with ``k - 1`` left padding."""

    def __init__(self, d_model: int, kernel_size: int, depthwise: bool = False):
        super().__init__()
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(
            d_model, d_model, kernel_size, groups=d_model if depthwise else 1
        )

    def forward(self, x: Tensor) -> Tensor:
        y = F.pad(x.transpose(1, 2), (self.kernel_size - 1, 0))
        return self.conv(y).transpose(1, 2)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.dropout(F.relu(self.fc1(x))))


class PredictionHead(nn.Module):
    """Affine ``D -> 1`` followed by a sigmoid; returns ``(B, L)`` probabilities."""

    def __init__(self, d_model: int):
        super().__init__()
        self.proj = nn.Linear(d_model, 1)

    def logits(self, x: Tensor) -> Tensor:
        return self.proj(x).squeeze(-1)

    def forward(self, x: Tensor) -> Tensor:
        return torch.sigmoid(self.logits(x))


class GradientCheckError(RuntimeError):
    pass


def grad_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """Max relative error between autograd and finite differences.

    ``fn`` recomputes the output from ``tensors`` (parameters and inputs, all
    double precision with ``requires_grad``).  The scalar loss is a fixed
    random projection of the output so every output element matters.  The
    numerical derivative uses the fourth-order central stencil
    ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``.  The relative error of
    one entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps entries
    whose exact gradient is zero from dividing round-off by zero.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probe = torch.randn(fn().shape, generator=gen, dtype=torch.float64)

    def loss() -> Tensor:
        return (fn().to(torch.float64) * probe).sum()

    analytic = torch.autograd.grad(loss(), list(tensors), allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        g = torch.zeros_like(t) if g is None else g
        if not torch.isfinite(g).all():
            raise GradientCheckError("non-finite analytic gradient")
        flat = t.data.view(-1)
        num = torch.empty_like(flat)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                vals = []
                for step in (2, 1, -1, -2):
                    flat[i] = orig + step * eps
                    vals.append(loss().item())
                flat[i] = orig
                num[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
        if not torch.isfinite(num).all():
            raise GradientCheckError("non-finite numerical gradient")
        a = g.reshape(-1)
        denom = torch.clamp(torch.maximum(a.abs(), num.abs()), min=floor)
        worst = max(worst, ((a - num).abs() / denom).max().item())
    return worst
