"""Differentiable building blocks: feature tokenizer/detokenizer, tensor
contraction layers, linear layers, and a pre-norm transformer stack.

All forwards are batched: row matrices are ``(B, F)`` and embedding stacks
are ``(B, tokens, d)``. Weights start at U(-1/sqrt(fan_in), +1/sqrt(fan_in))
and biases at zero; per-feature embedding tables use fan_in 1.
"""

from __future__ import annotations

import math

import numpy as np

from .schema import FeatureSchema
from .tensor import (Tensor, add, affine, attention, concat, contract,
                     layer_norm, matmul, mul, narrow, reshape, silu, sum_last)


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def count_params(params) -> int:
    """Total learnable scalars in a parameter mapping or iterable."""
    tensors = params.values() if isinstance(params, dict) else params
    return int(sum(t.data.size for t in tensors))


def break_even_hidden_width(m: int, m_prime: int, h_prime: int, d: int) -> float:
    """Linear hidden width with the same weight count as tokenize-then-contract."""
    return d * (1.0 + m * h_prime * d / m_prime)


class LinearLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = uniform_param(rng, (in_dim, out_dim), fan_in=in_dim)
        self.bias = zeros_param((out_dim,))

    @property
    def params(self) -> dict:
        return {"w": self.weight, "b": self.bias}

    def forward(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class TclLayer:
    """Affine map on an embedding stack through an order-4 weight tensor."""

    def __init__(self, m_in: int, m_out: int, d: int, rng: np.random.Generator):
        self.weight = uniform_param(rng, (m_in, d, m_out, d), fan_in=m_in * d)
        self.bias = zeros_param((m_out, d))

    @property
    def params(self) -> dict:
        return {"w": self.weight, "b": self.bias}

    def forward(self, e: Tensor) -> Tensor:
        return add(contract(e, self.weight), self.bias)


class Tokenizer:
    """Projects each feature of a preprocessed row into a d-vector.

    Numeric features scale a learned direction; categorical features look up
    the row of an embedding table selected by the one-hot block. The target
    class is treated as one extra categorical feature whose token conditions
    both the encoder and the decoder.
    """

    def __init__(self, schema: FeatureSchema, d: int, rng: np.random.Generator):
        self.schema = schema
        self.d = d
        self.num_w = uniform_param(rng, (schema.m_n, d), fan_in=1) if schema.m_n else None
        self.num_b = zeros_param((schema.m_n, d)) if schema.m_n else None
        self.cat_w = [uniform_param(rng, (w, d), fan_in=1) for w in schema.cat_widths()]
        self.cat_b = zeros_param((schema.m_c, d)) if schema.m_c else None
        self.target_w = uniform_param(rng, (schema.n_classes, d), fan_in=1)
        self.target_b = zeros_param((d,))

    @property
    def params(self) -> dict:
        out = {}
        if self.num_w is not None:
            out["num_w"] = self.num_w
            out["num_b"] = self.num_b
        for j, w in enumerate(self.cat_w):
            out[f"cat{j}_w"] = w
        if self.cat_b is not None:
            out["cat_b"] = self.cat_b
        out["target_w"] = self.target_w
        out["target_b"] = self.target_b
        return out

    def tokens(self, x_num: np.ndarray, cat_blocks) -> Tensor:
        """Embed one batch of feature rows into ``(B, M, d)``."""
        parts = []
        if self.num_w is not None:
            xn = reshape(constant(x_num), (x_num.shape[0], self.schema.m_n, 1))
            parts.append(add(mul(xn, self.num_w), self.num_b))
        if self.cat_w:
            toks = [reshape(matmul(constant(block), w), (block.shape[0], 1, self.d))
                    for block, w in zip(cat_blocks, self.cat_w)]
            cat = toks[0] if len(toks) == 1 else concat(toks, axis=1)
            parts.append(add(cat, self.cat_b))
        return parts[0] if len(parts) == 1 else concat(parts, axis=1)

    def target_token(self, y_onehot: np.ndarray) -> Tensor:
        tok = affine(constant(y_onehot), self.target_w, self.target_b)
        return reshape(tok, (y_onehot.shape[0], 1, self.d))


class Detokenizer:
    """Projects embedding rows back to numeric scalars and category logits."""

    def __init__(self, schema: FeatureSchema, d: int, rng: np.random.Generator):
        self.schema = schema
        self.d = d
        self.num_w = uniform_param(rng, (schema.m_n, d), fan_in=d) if schema.m_n else None
        self.num_b = zeros_param((schema.m_n,)) if schema.m_n else None
        self.cat_w = [uniform_param(rng, (d, w), fan_in=d) for w in schema.cat_widths()]
        self.cat_b = [zeros_param((w,)) for w in schema.cat_widths()]

    @property
    def params(self) -> dict:
        out = {}
        if self.num_w is not None:
            out["num_w"] = self.num_w
            out["num_b"] = self.num_b
        for j, (w, b) in enumerate(zip(self.cat_w, self.cat_b)):
            out[f"cat{j}_w"] = w
            out[f"cat{j}_b"] = b
        return out

    def forward(self, e: Tensor):
        """Split ``(B, M, d)`` back into numeric predictions and logits.

        Returns ``(numeric (B, M_n) or None, [logits_j (B, |C_j|)])``; the
        softmax of the logits is applied downstream, never here.
        """
        b = e.data.shape[0]
        m_n = self.schema.m_n
        num = None
        if self.num_w is not None:
            en = narrow(e, 1, 0, m_n)
            num = add(sum_last(mul(en, self.num_w)), self.num_b)
        logits = []
        for j, (w, bias) in enumerate(zip(self.cat_w, self.cat_b)):
            ej = reshape(narrow(e, 1, m_n + j, 1), (b, self.d))
            logits.append(affine(ej, w, bias))
        return num, logits


class TransformerBlockStack:
    """Pre-norm transformer: per layer, single-head self-attention then a
    SiLU feed-forward, each behind layer normalization with a residual."""

    def __init__(self, d: int, rng: np.random.Generator, n_layers: int = 2,
                 ffn_hidden: int = 128, n_heads: int = 1):
        if n_heads != 1:
            raise ValueError("only single-head attention is supported")
        self.d = d
        self.scale = 1.0 / math.sqrt(d)
        self.layers = []
        for _ in range(n_layers):
            layer = {
                "ln1_g": Tensor(np.ones(d), requires_grad=True),
                "ln1_b": zeros_param((d,)),
                "wq": uniform_param(rng, (d, d), fan_in=d),
                "bq": zeros_param((d,)),
                "wk": uniform_param(rng, (d, d), fan_in=d),
                "bk": zeros_param((d,)),
                "wv": uniform_param(rng, (d, d), fan_in=d),
                "bv": zeros_param((d,)),
                "wo": uniform_param(rng, (d, d), fan_in=d),
                "bo": zeros_param((d,)),
                "ln2_g": Tensor(np.ones(d), requires_grad=True),
                "ln2_b": zeros_param((d,)),
                "w1": uniform_param(rng, (d, ffn_hidden), fan_in=d),
                "b1": zeros_param((ffn_hidden,)),
                "w2": uniform_param(rng, (ffn_hidden, d), fan_in=ffn_hidden),
                "b2": zeros_param((d,)),
            }
            self.layers.append(layer)

    @property
    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.items():
                out[f"l{i}_{k}"] = v
        return out

    def forward(self, t: Tensor, attn_sink: list | None = None) -> Tensor:
        for p in self.layers:
            a = layer_norm(t, p["ln1_g"], p["ln1_b"])
            q = affine(a, p["wq"], p["bq"])
            k = affine(a, p["wk"], p["bk"])
            v = affine(a, p["wv"], p["bv"])
            ctx, weights = attention(q, k, v, self.scale)
            if attn_sink is not None:
                attn_sink.append(weights.copy())
            t = add(t, affine(ctx, p["wo"], p["bo"]))
            f = layer_norm(t, p["ln2_g"], p["ln2_b"])
            f = affine(silu(affine(f, p["w1"], p["b1"])), p["w2"], p["b2"])
            t = add(t, f)
        return t
