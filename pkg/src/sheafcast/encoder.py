"""Memory encoding of node stalks: a single-layer scalar-input LSTM.

Every node shares one set of parameters; a node's context sequence is run
through the recurrence and the final hidden state becomes its stalk vector.
Weights are fused per convention: columns of the (in+hidden, 4d) matrices
hold the [input, forget, candidate, output] gates in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError


@dataclass
class LstmParams:
    """Fused-gate LSTM parameters for scalar inputs."""

    w_x: ad.Tensor                    # (1, 4d)
    w_h: ad.Tensor                    # (d, 4d)
    bias: ad.Tensor                   # (4d,)

    @property
    def hidden_dim(self) -> int:
        return self.w_h.data.shape[0]

    @classmethod
    def init(cls, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        """Uniform +-1/sqrt(d) weights with the forget-gate bias at +1."""
        d = hidden_dim
        bound = 1.0 / np.sqrt(d)
        w_x = rng.uniform(-bound, bound, size=(1, 4 * d))
        w_h = rng.uniform(-bound, bound, size=(d, 4 * d))
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0
        return cls(w_x=ad.Tensor(w_x, requires_grad=True),
                   w_h=ad.Tensor(w_h, requires_grad=True),
                   bias=ad.Tensor(bias, requires_grad=True))

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmParams":
        d = hidden_dim
        return cls(w_x=ad.Tensor(np.zeros((1, 4 * d)), requires_grad=True),
                   w_h=ad.Tensor(np.zeros((d, 4 * d)), requires_grad=True),
                   bias=ad.Tensor(np.zeros(4 * d), requires_grad=True))

    def parameters(self) -> dict:
        return {"lstm.w_x": self.w_x, "lstm.w_h": self.w_h, "lstm.bias": self.bias}


def encode_all(context, params: LstmParams) -> ad.Tensor:
    """Encode every node's context row; returns the (n_nodes, d) stalk matrix.

    Nodes are independent and share parameters, so the whole batch runs
    through one recurrence.
    """
    x = context.data if isinstance(context, ad.Tensor) else np.asarray(context, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError("context must be (n_nodes, t_ctx)")
    if x.shape[1] < 1:
        raise ShapeMismatchError("context must contain at least one step")
    d = params.hidden_dim
    if params.w_x.data.shape != (1, 4 * d) or params.bias.data.shape != (4 * d,):
        raise ShapeMismatchError("LSTM parameter shapes are inconsistent")

    n, t_len = x.shape
    h = ad.Tensor(np.zeros((n, d)))
    c = ad.Tensor(np.zeros((n, d)))
    for t in range(t_len):
        x_t = x[:, t:t + 1]                       # (n, 1)
        z = x_t @ params.w_x + h @ params.w_h + params.bias
        i = ad.sigmoid(z[:, :d])
        f = ad.sigmoid(z[:, d:2 * d])
        g = ad.tanh(z[:, 2 * d:3 * d])
        o = ad.sigmoid(z[:, 3 * d:])
        c = f * c + i * g
        h = o * ad.tanh(c)
    return h


def encode_history(x, params: LstmParams) -> ad.Tensor:
    """Encode a single scalar sequence; returns the final hidden state (d,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError("encode_history expects a 1-D sequence")
    return encode_all(x[None, :], params).reshape(params.hidden_dim)


def raw_stalks(context: np.ndarray, hidden_dim: int) -> np.ndarray:
    """Encoder-ablation stalks: the raw window fitted to length d.

    Sequences longer than d lose their oldest samples; shorter ones are
    left-padded with zeros so the most recent sample stays last.
    """
    context = np.asarray(context, dtype=np.float64)
    n, t_len = context.shape
    if t_len >= hidden_dim:
        return context[:, t_len - hidden_dim:].copy()
    out = np.zeros((n, hidden_dim))
    out[:, hidden_dim - t_len:] = context
    return out
