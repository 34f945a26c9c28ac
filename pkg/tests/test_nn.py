import math

import numpy as np
import pytest
import torch

from ktnas.nn import (
    CausalConv1d,
    FeedForward,
    GradientCheckError,
    MaskedMultiheadAttention,
    PredictionHead,
    causal_mask,
    grad_check,
)

f64 = torch.float64


def identity_attention(D, H=1):
    m = MaskedMultiheadAttention(D, H).double()
    with torch.no_grad():
        for lin in (m.q_proj, m.k_proj, m.v_proj, m.out_proj):
            lin.weight.copy_(torch.eye(D, dtype=f64))
            lin.bias.zero_()
    return m


class TestAttention:
    def test_two_token_hand_softmax(self):
        m = identity_attention(2)
        x = torch.tensor([[[1.0, 0.0], [0.5, 2.0]]], dtype=f64)
        w = m.attention_weights(x, x)[0, 0]
        # row 0 sees only itself; row 1 softmax over q1.k0 and q1.k1 scaled by 1/sqrt(2)
        s10 = (0.5 * 1.0 + 2.0 * 0.0) / math.sqrt(2)
        s11 = (0.5 * 0.5 + 2.0 * 2.0) / math.sqrt(2)
        e0, e1 = math.exp(s10), math.exp(s11)
        expected = torch.tensor([[1.0, 0.0], [e0 / (e0 + e1), e1 / (e0 + e1)]], dtype=f64)
        assert torch.allclose(w, expected, atol=1e-12)
        out = m(x, x, x)
        assert torch.allclose(out[0, 1], expected[1, 0] * x[0, 0] + expected[1, 1] * x[0, 1], atol=1e-12)

    def test_single_position_is_value_path(self):
        torch.manual_seed(0)
        m = MaskedMultiheadAttention(8, 2).double()
        x = torch.randn(3, 1, 8, dtype=f64)
        assert torch.allclose(m(x, x, x), m.out_proj(m.v_proj(x)), atol=1e-12)

    def test_causal(self):
        torch.manual_seed(1)
        m = MaskedMultiheadAttention(8, 2).double()
        x = torch.randn(2, 6, 8, dtype=f64)
        base = m(x, x, x)
        for t in range(5):
            y = x.clone()
            y[:, t + 1 :] += torch.randn_like(y[:, t + 1 :])
            assert torch.equal(m(y, y, y)[:, : t + 1], base[:, : t + 1])

    def test_padding_keys_ignored_and_empty_rows_zero(self):
        torch.manual_seed(2)
        m = MaskedMultiheadAttention(4, 2).double()
        x = torch.randn(1, 4, 4, dtype=f64)
        valid = torch.tensor([[False, True, True, False]])
        out = m(x, x, x, valid)
        assert torch.equal(out[0, 0], torch.zeros(4, dtype=f64))
        y = x.clone()
        y[0, 3] += 5.0  # padded key never attended
        y[0, 0] += 5.0
        assert torch.equal(m(y, y, y, valid)[0, 1:3], out[0, 1:3])
        w = m.attention_weights(x, x, valid)
        assert torch.allclose(w[0, :, 1:].sum(-1), torch.ones(2, 3, dtype=f64))
        assert torch.all(w[..., 0] == 0) and torch.all(w[..., 3] == 0)

    def test_causal_mask(self):
        assert causal_mask(3).tolist() == [[True, False, False], [True, True, False], [True, True, True]]

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            MaskedMultiheadAttention(6, 4)


def naive_conv(x, weight, bias):
    """O(L k D^2) reference: y[t, o] = b[o] + sum_{s, i} w[o, i, s] x[t - k + 1 + s, i]."""
    L, D = x.shape
    out_ch, in_ch, k = weight.shape
    y = np.zeros((L, out_ch))
    for t in range(L):
        for o in range(out_ch):
            acc = bias[o]
            for s in range(k):
                src = t - (k - 1) + s
                if src < 0:
                    continue
                for i in range(in_ch):
                    acc += weight[o, i, s] * x[src, i]
            y[t, o] = acc
    return y


class TestConv:
    @pytest.mark.parametrize("k", [3, 5, 7, 11])
    def test_matches_naive(self, k):
        torch.manual_seed(k)
        conv = CausalConv1d(4, k).double()
        x = torch.randn(1, 9, 4, dtype=f64)
        ref = naive_conv(x[0].numpy(), conv.conv.weight.detach().numpy(), conv.conv.bias.detach().numpy())
        assert np.allclose(conv(x)[0].detach().numpy(), ref, atol=1e-12)

    def test_impulse_response_support(self):
        torch.manual_seed(0)
        conv = CausalConv1d(3, 5).double()
        with torch.no_grad():
            conv.conv.bias.zero_()
        x = torch.zeros(1, 12, 3, dtype=f64)
        x[0, 4] = torch.tensor([1.0, -2.0, 0.5])
        y = conv(x)[0].abs().sum(-1)
        assert torch.all(y[:4] == 0) and torch.all(y[9:] == 0)
        assert torch.all(y[4:9] > 0)

    def test_zero_weights_bias_only(self):
        conv = CausalConv1d(3, 7).double()
        with torch.no_grad():
            conv.conv.weight.zero_()
            conv.conv.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
        y = conv(torch.randn(2, 5, 3, dtype=f64))
        assert torch.equal(y, torch.tensor([1.0, 2.0, 3.0], dtype=f64).expand(2, 5, 3))

    def test_depthwise_shapes(self):
        conv = CausalConv1d(4, 3, depthwise=True)
        assert conv.conv.weight.shape == (4, 1, 3)
        assert conv(torch.randn(2, 6, 4)).shape == (2, 6, 4)


class TestSmallOps:
    def test_layer_norm_constant_row(self):
        ln = torch.nn.LayerNorm(5).double()
        out = torch.nn.functional.layer_norm(torch.full((2, 5), 3.0, dtype=f64), (5,))
        assert torch.allclose(out, torch.zeros(2, 5, dtype=f64))
        assert torch.allclose(ln(torch.full((1, 5), -7.0, dtype=f64)), ln.bias.detach().expand(1, 5))

    def test_head_zero_weights(self):
        head = PredictionHead(6)
        with torch.no_grad():
            head.proj.weight.zero_()
            head.proj.bias.zero_()
        assert torch.equal(head(torch.randn(3, 4, 6)), torch.full((3, 4), 0.5))

    def test_dropout_zero_is_identity(self):
        ffn = FeedForward(4, 6, dropout=0.0).train()
        x = torch.randn(2, 3, 4)
        assert torch.equal(ffn(x), ffn.eval()(x))

    def test_shapes(self):
        x = torch.randn(2, 7, 8)
        assert FeedForward(8, 16)(x).shape == x.shape
        assert MaskedMultiheadAttention(8, 4)(x, x, x).shape == x.shape
        assert PredictionHead(8)(x).shape == (2, 7)


class TestGradCheck:
    def test_attention(self):
        torch.manual_seed(0)
        m = MaskedMultiheadAttention(4, 2).double()
        x = torch.randn(2, 4, 4, dtype=f64, requires_grad=True)
        valid = torch.tensor([[True] * 4, [True, True, True, False]])
        assert grad_check(lambda: m(x, x, x, valid), [x, *m.parameters()]) < 1e-4

    def test_conv(self):
        torch.manual_seed(0)
        conv = CausalConv1d(3, 3).double()
        x = torch.randn(1, 5, 3, dtype=f64, requires_grad=True)
        assert grad_check(lambda: conv(x), [x, *conv.parameters()]) < 1e-4

    def test_ffn_and_ln(self):
        torch.manual_seed(0)
        ffn = FeedForward(4, 5).double()
        ln = torch.nn.LayerNorm(4).double()
        x = torch.randn(2, 3, 4, dtype=f64, requires_grad=True)
        assert grad_check(lambda: ln(ffn(x)), [x, *ffn.parameters(), *ln.parameters()]) < 1e-4

    def test_detects_wrong_gradient(self):
        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x**2

            @staticmethod
            def backward(ctx, g):
                return g  # should be 2x * g

        x = torch.randn(5, dtype=f64, requires_grad=True)
        assert grad_check(lambda: Wrong.apply(x), [x]) > 1e-2

    def test_non_finite_gradient(self):
        x = torch.zeros(3, dtype=f64, requires_grad=True)
        with pytest.raises(GradientCheckError):
            grad_check(lambda: torch.sqrt(x), [x])  # d sqrt(x)/dx is inf at 0
