"""Trainable building blocks: linear maps, layer norm, sinusoidal position
tables, scaled-dot-product and multi-head attention, feed-forward nets, and
stacked LSTMs.

All layers are plain parameter containers exposing ``named_params()``;
forward passes are ordinary functions over :mod:`tripcast.tensor` values, so
every layer is differentiable end to end and checkable against finite
differences.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    layer_norm_core,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax,
    stack,
    tanh,
    transpose,
)

# Additive mask value for blocked attention positions. Large enough that
# exp(x - max) underflows to exactly 0.0 in float64, so masked positions get
# exactly zero weight.
MASK_VALUE = -1e30


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: Optional[tuple] = None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _prefixed(prefix: str, layer) -> list:
    return [(f"{prefix}.{name}", t) for name, t in layer.named_params()]


class Linear:
    """Affine map on the last axis: ``x @ W + b``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True):
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return out

    def named_params(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps


class LayerNorm:
    """Standardize the last axis, then apply a learned gain and bias."""

    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layer_norm_core(x), self.gain), self.bias)

    def named_params(self):
        return [("gain", self.gain), ("bias", self.bias)]


class FeedForward:
    """Position-wise two-layer net: linear, ReLU, linear."""

    def __init__(self, d_model: int, width: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, width, rng)
        self.lin2 = Linear(width, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(relu(self.lin1(x)))

    def named_params(self):
        return _prefixed("lin1", self.lin1) + _prefixed("lin2", self.lin2)


def positional_encoding(seq_len: int, d_model: int) -> Tensor:
    """Sinusoidal position table of shape ``(seq_len, d_model)``.

    Even columns carry ``sin(pos / 10000^(2i/d_model))``, odd columns the
    matching cosine. Added to embedded inputs, never concatenated.
    """
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even for sin/cos pairing, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    pair = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * pair / d_model)
    table = np.empty((seq_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return Tensor(table)


def causal_mask(size: int) -> Tensor:
    """Additive (size, size) mask: 0 at or below the diagonal, blocked above."""
    m = np.triu(np.full((size, size), MASK_VALUE), k=1)
    return Tensor(m)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: Optional[Tensor] = None,
                         return_weights: bool = False):
    """Softmax(q kᵀ / sqrt(d_k) + mask) v over the last two axes.

    ``mask`` is an additive (Lq, Lk) tensor; blocked positions receive
    exactly zero attention weight.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key dims disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths disagree: {k.shape} vs {v.shape}")
    d_k = q.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    if mask is not None:
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeError(
                f"mask shape {mask.shape} does not match (Lq, Lk)="
                f"({q.shape[-2]}, {k.shape[-2]})"
            )
        scores = add(scores, mask)
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention:
    """Per-head q/k/v projections, scaled-dot attention, concat, output map.

    Self-attention when the same tensor is passed as query and key/value
    source; cross-attention when ``x_kv`` is an encoder output.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads != 0:
            raise ValueError(
                f"d_model={d_model} not divisible by n_heads={n_heads}"
            )
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.heads = []
        for _ in range(n_heads):
            wq = Tensor(xavier_uniform(rng, d_model, self.d_head), requires_grad=True)
            wk = Tensor(xavier_uniform(rng, d_model, self.d_head), requires_grad=True)
            wv = Tensor(xavier_uniform(rng, d_model, self.d_head), requires_grad=True)
            self.heads.append((wq, wk, wv))
        self.wo = Tensor(xavier_uniform(rng, d_model, d_model), requires_grad=True)

    def __call__(self, x_q: Tensor, x_kv: Tensor,
                 mask: Optional[Tensor] = None) -> Tensor:
        # all heads in one pass: concatenated projections, then a head axis
        wq_all = concat([wq for wq, _, _ in self.heads], axis=-1)
        wk_all = concat([wk for _, wk, _ in self.heads], axis=-1)
        wv_all = concat([wv for _, _, wv in self.heads], axis=-1)
        lead = x_q.shape[:-2]
        lq, lk = x_q.shape[-2], x_kv.shape[-2]
        split_q = (*lead, lq, self.n_heads, self.d_head)
        split_k = (*lead, lk, self.n_heads, self.d_head)
        q = transpose(matmul(x_q, wq_all).reshape(*split_q), -3, -2)
        k = transpose(matmul(x_kv, wk_all).reshape(*split_k), -3, -2)
        v = transpose(matmul(x_kv, wv_all).reshape(*split_k), -3, -2)
        out = scaled_dot_attention(q, k, v, mask)
        merged = transpose(out, -3, -2).reshape(*lead, lq,
                                                self.n_heads * self.d_head)
        return matmul(merged, self.wo)

    def named_params(self):
        ps = []
        for i, (wq, wk, wv) in enumerate(self.heads):
            ps += [(f"heads.{i}.wq", wq), (f"heads.{i}.wk", wk),
                   (f"heads.{i}.wv", wv)]
        ps.append(("wo", self.wo))
        return ps


class _LstmLayer:
    """Gate parameters for one LSTM layer (input, forget, output, candidate)."""

    GATES = ("i", "f", "o", "g")

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.w = {}
        self.u = {}
        self.b = {}
        for gate in self.GATES:
            self.w[gate] = Tensor(xavier_uniform(rng, d_in, hidden),
                                  requires_grad=True)
            self.u[gate] = Tensor(xavier_uniform(rng, hidden, hidden),
                                  requires_grad=True)
            init = np.ones(hidden) if gate == "f" else np.zeros(hidden)
            self.b[gate] = Tensor(init, requires_grad=True)

    def named_params(self):
        ps = []
        for gate in self.GATES:
            ps += [(f"w_{gate}", self.w[gate]), (f"u_{gate}", self.u[gate]),
                   (f"b_{gate}", self.b[gate])]
        return ps


class Lstm:
    """Stacked LSTM. Forget-gate biases start at 1.0; other biases at zero."""

    def __init__(self, d_in: int, hidden: int, num_layers: int,
                 rng: np.random.Generator):
        self.hidden = hidden
        self.num_layers = num_layers
        self.layers = [
            _LstmLayer(d_in if i == 0 else hidden, hidden, rng)
            for i in range(num_layers)
        ]

    def __call__(self, x: Tensor, h0: Optional[Tensor] = None,
                 c0: Optional[Tensor] = None):
        """Run the stack over a (B, L, d_in) sequence.

        Returns ``(seq, h_last, c_last)`` where ``seq`` is the top layer's
        (B, L, hidden) output and the states are stacked (num_layers, B,
        hidden). Zero initial states are used when none are given.
        """
        batch, length = x.shape[0], x.shape[1]
        if length == 0:
            raise ShapeError("LSTM cannot run on a length-zero sequence")
        h_last, c_last = [], []
        hid = self.hidden
        seq = x
        for li, layer in enumerate(self.layers):
            if h0 is not None:
                h = h0[li]
                c = c0[li]
            else:
                h = Tensor(np.zeros((batch, hid)))
                c = Tensor(np.zeros((batch, hid)))
            # fuse the four gates into one projection each for input
            # (whole sequence at once) and recurrence (one gemm per step)
            w_cat = concat([layer.w[g] for g in layer.GATES], axis=-1)
            u_cat = concat([layer.u[g] for g in layer.GATES], axis=-1)
            b_cat = concat([layer.b[g] for g in layer.GATES], axis=-1)
            pre = add(matmul(seq, w_cat), b_cat)   # (B, L, 4*hid)
            hs = []
            for t in range(length):
                z = add(pre[:, t, :], matmul(h, u_cat))
                i_g = sigmoid(z[:, 0:hid])
                f_g = sigmoid(z[:, hid:2 * hid])
                o_g = sigmoid(z[:, 2 * hid:3 * hid])
                g_g = tanh(z[:, 3 * hid:4 * hid])
                c = add(mul(f_g, c), mul(i_g, g_g))
                h = mul(o_g, tanh(c))
                hs.append(h)
            seq = stack(hs, axis=1)
            h_last.append(h)
            c_last.append(c)
        return seq, stack(h_last, axis=0), stack(c_last, axis=0)

    def named_params(self):
        ps = []
        for i, layer in enumerate(self.layers):
            ps += _prefixed(f"layer.{i}", layer)
        return ps


class LstmSubLayer:
    """Single-layer LSTM drop-in for a block's feed-forward slot.

    Processes the block's sequence left to right and projects the hidden
    states back to model width; the caller adds the residual.
    """

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.lstm = Lstm(d_model, d_model, 1, rng)
        self.proj = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        seq, _, _ = self.lstm(x)
        return self.proj(seq)

    def named_params(self):
        return _prefixed("lstm", self.lstm) + _prefixed("proj", self.proj)


def _make_sublayer(kind: str, d_model: int, ffn_width: int,
                   rng: np.random.Generator):
    if kind == "ffn":
        return FeedForward(d_model, ffn_width, rng)
    if kind == "lstm":
        return LstmSubLayer(d_model, rng)
    raise ValueError(f"unknown sub-layer kind {kind!r}")


class EncoderBlock:
    """Pre-norm block: self-attention then a feed-forward (or LSTM) sub-layer."""

    def __init__(self, d_model: int, n_heads: int, ffn_width: int,
                 rng: np.random.Generator, sub_layer: str = "ffn"):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.sub = _make_sublayer(sub_layer, d_model, ffn_width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h))
        x = add(x, self.sub(self.ln2(x)))
        return x

    def named_params(self):
        return (_prefixed("ln1", self.ln1) + _prefixed("attn", self.attn)
                + _prefixed("ln2", self.ln2) + _prefixed("sub", self.sub))


class DecoderBlock:
    """Pre-norm block: masked self-attention, cross-attention, sub-layer."""

    def __init__(self, d_model: int, n_heads: int, ffn_width: int,
                 rng: np.random.Generator, sub_layer: str = "ffn"):
        self.ln1 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln3 = LayerNorm(d_model)
        self.sub = _make_sublayer(sub_layer, d_model, ffn_width, rng)

    def __call__(self, x: Tensor, enc_out: Tensor, mask: Tensor) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.self_attn(h, h, mask))
        x = add(x, self.cross_attn(self.ln2(x), enc_out))
        x = add(x, self.sub(self.ln3(x)))
        return x

    def named_params(self):
        return (_prefixed("ln1", self.ln1) + _prefixed("self_attn", self.self_attn)
                + _prefixed("ln2", self.ln2) + _prefixed("cross_attn", self.cross_attn)
                + _prefixed("ln3", self.ln3) + _prefixed("sub", self.sub))
