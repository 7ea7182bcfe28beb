"""Neural building blocks: embeddings, dense projection, LSTM cell, Luong attention.

Every op here accepts either a single vector or a batch (leading batch
axis); the batched form is what training uses, the vector form is the
documented contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import CategoryError, ContractError, NumericError, ShapeError
from .tensor import Tensor

ATTENTION_KINDS = ("dot", "general")


def uniform_init(rng, shape, fan_in):
    """Uniform in +-1/sqrt(fan_in)."""
    limit = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class EmbeddingTable:
    """Dense vectors for one categorical feature."""

    name: str
    cardinality: int
    dim: int
    weights: Tensor = None

    def __post_init__(self):
        if self.cardinality < 1 or self.dim < 1:
            raise ContractError(f"embedding {self.name}: cardinality and dim must be >= 1")
        if self.weights is None:
            self.weights = tc.param(np.zeros((self.cardinality, self.dim)))

    @classmethod
    def create(cls, name, cardinality, dim, rng):
        table = cls(name, cardinality, dim)
        table.weights = tc.param(uniform_init(rng, (cardinality, dim), dim))
        return table


@dataclass
class DenseParams:
    W: Tensor  # (out, in)
    b: Tensor  # (out,)

    @classmethod
    def create(cls, in_dim, out_dim, rng):
        return cls(W=tc.param(uniform_init(rng, (out_dim, in_dim), in_dim)),
                   b=tc.param(np.zeros(out_dim)))

    def params(self):
        return [self.W, self.b]


GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Gate parameters; W_* act on the input, U_* on the previous hidden state."""

    input_dim: int
    hidden_dim: int
    W: dict = field(default_factory=dict)  # gate -> (hidden, input)
    U: dict = field(default_factory=dict)  # gate -> (hidden, hidden)
    b: dict = field(default_factory=dict)  # gate -> (hidden,)

    @classmethod
    def create(cls, input_dim, hidden_dim, rng):
        p = cls(input_dim, hidden_dim)
        for gate in GATES:
            p.W[gate] = tc.param(uniform_init(rng, (hidden_dim, input_dim), input_dim))
            p.U[gate] = tc.param(uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim))
            p.b[gate] = tc.param(np.zeros(hidden_dim))
        return p

    def params(self):
        out = []
        for gate in GATES:
            out += [self.W[gate], self.U[gate], self.b[gate]]
        return out


@dataclass
class AttentionParams:
    """Luong attention: optional general-score projection plus the combine layer."""

    kind: str
    W_a: Tensor  # (hidden, hidden) when kind == "general", else None
    W_c: Tensor  # (hidden, 2 * hidden)

    def __post_init__(self):
        if self.kind not in ATTENTION_KINDS:
            raise ContractError(f"attention kind must be one of {ATTENTION_KINDS}, got {self.kind!r}")
        if (self.W_a is not None) != (self.kind == "general"):
            raise ContractError("W_a must be present exactly when kind is 'general'")

    @classmethod
    def create(cls, hidden_dim, kind, rng):
        W_a = tc.param(uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)) if kind == "general" else None
        W_c = tc.param(uniform_init(rng, (hidden_dim, 2 * hidden_dim), 2 * hidden_dim))
        return cls(kind=kind, W_a=W_a, W_c=W_c)

    def params(self):
        return ([self.W_a] if self.W_a is not None else []) + [self.W_c]


def embedding_lookup(table, index):
    """Row(s) of the table; gradient flows only into the selected rows.

    ``index`` may be a single id or an integer array of ids.
    """
    idx = np.asarray(index)
    if idx.size and (idx.min() < 0 or idx.max() >= table.cardinality):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise CategoryError(
            f"feature {table.name!r}: index {bad} outside [0, {table.cardinality})")
    if idx.ndim == 1:
        return tc.take_rows(table.weights, idx)
    rows = tc.take_rows(table.weights, idx.reshape(-1))
    if idx.ndim == 0:
        return tc.reshape(rows, (table.dim,))
    return tc.reshape(rows, idx.shape + (table.dim,))


def dense_forward(p, x):
    """W.x + b for a vector x, or x.W^T + b for a batch of rows."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    in_dim = p.W.shape[1]
    if x.shape[-1] != in_dim:
        raise ShapeError(f"dense: input has width {x.shape}, weight expects {in_dim}")
    if x.data.ndim == 1:
        return tc.add(tc.matmul(p.W, x), p.b)
    return tc.add(tc.matmul(x, tc.transpose(p.W)), p.b)


class FusedLstm:
    """Gate weights stacked (i, f, o, g) for a single pre-activation matmul.

    Build once per forward pass; the concat/transpose land on the tape so
    gradients still flow back to the individual gate parameters.
    """

    __slots__ = ("hidden", "wT", "uT", "b")

    def __init__(self, p):
        self.hidden = p.hidden_dim
        self.wT = tc.transpose(tc.concat([p.W[g] for g in GATES], axis=0))  # (in, 4H)
        self.uT = tc.transpose(tc.concat([p.U[g] for g in GATES], axis=0))  # (H, 4H)
        self.b = tc.concat([p.b[g] for g in GATES], axis=0)                 # (4H,)

    def step(self, x, h_prev, c_prev):
        pre = tc.add(tc.add(tc.matmul(x, self.wT), tc.matmul(h_prev, self.uT)), self.b)
        H = self.hidden

        def gate(k, activation):
            part = tc.slice_lastdim(pre, k * H, (k + 1) * H)
            try:
                return activation(part)
            except NumericError as err:
                raise NumericError(f"lstm gate {GATES[k]!r}: {err}") from None

        i = gate(0, tc.sigmoid)
        f = gate(1, tc.sigmoid)
        o = gate(2, tc.sigmoid)
        g = gate(3, tc.tanh)
        c = tc.add(tc.mul(f, c_prev), tc.mul(i, g))
        h = tc.mul(o, tc.tanh(c))
        return h, c


def lstm_cell_step(p, x, h_prev, c_prev):
    """One LSTM step.

    i = sigma(W_i x + U_i h + b_i), f and o likewise, g = tanh(...),
    c = f*c_prev + i*g, h = o*tanh(c).
    """
    return FusedLstm(p).step(x, h_prev, c_prev)


class FusedAttention:
    """Attention with the combine-weight transpose hoisted out of the step loop."""

    __slots__ = ("kind", "W_a", "WcT")

    def __init__(self, p):
        self.kind = p.kind
        self.W_a = p.W_a
        self.WcT = tc.transpose(p.W_c)  # (2H, H)

    def attend(self, decoder_h, encoder_hs):
        """Batched core: (b, hidden) against (b, steps, hidden)."""
        b, steps, hidden = encoder_hs.shape
        query = decoder_h if self.kind == "dot" else tc.matmul(decoder_h, self.W_a)
        q3 = tc.reshape(query, (b, 1, hidden))
        scores = tc.reduce_sum(tc.mul(encoder_hs, q3), axis=-1)  # (b, steps)
        weights = tc.softmax_lastdim(scores)
        w3 = tc.reshape(weights, (b, steps, 1))
        context = tc.reduce_sum(tc.mul(encoder_hs, w3), axis=-2)  # (b, hidden)
        combined = tc.concat([context, decoder_h], axis=-1)
        h_tilde = tc.tanh(tc.matmul(combined, self.WcT))
        return h_tilde, weights


def luong_attention(p, decoder_h, encoder_hs):
    """Attend over encoder states from one decoder state.

    Scores are dot products (optionally through W_a for the 'general'
    kind), normalized by softmax; the context is the score-weighted sum of
    encoder states and is combined as h_tilde = tanh(W_c [context; h]).

    Accepts (hidden,) against (steps, hidden), or batches with a leading
    axis on both.  Returns (h_tilde, weights).
    """
    single = decoder_h.data.ndim == 1
    if single:
        decoder_h = tc.reshape(decoder_h, (1,) + decoder_h.shape)
        encoder_hs = tc.reshape(encoder_hs, (1,) + encoder_hs.shape)
    if encoder_hs.data.ndim != 3 or encoder_hs.shape[-2] < 1:
        raise ContractError(f"attention needs >= 1 encoder step, got shape {encoder_hs.shape}")
    h_tilde, weights = FusedAttention(p).attend(decoder_h, encoder_hs)
    if single:
        steps, hidden = encoder_hs.shape[1], encoder_hs.shape[2]
        h_tilde = tc.reshape(h_tilde, (hidden,))
        weights = tc.reshape(weights, (steps,))
    return h_tilde, weights
