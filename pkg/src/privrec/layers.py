"""Differentiable building blocks: attention pooling and multi-head self-attention.

Parameters live in flat name -> array mappings (see params.ParamSet) using the
conventions

    <prefix>.w1, <prefix>.b1, <prefix>.w2, <prefix>.b2   two-layer score network
    <prefix>.wq, <prefix>.wk, <prefix>.wv                per-model projections

All forward passes are deterministic given parameters and inputs; dropout is
opt-in and only used during training.
"""

import numpy as np

from . import autodiff as ad
from .params import ParamSet, collect_gradients, uniform_init

DEFAULT_ATT_HIDDEN = 128


def check_matrix(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def init_attention_pool(rng, d_in, d_hidden=DEFAULT_ATT_HIDDEN, prefix="", scale=0.1):
    """Parameters of the two-layer dense scoring network."""
    p = prefix + "." if prefix else ""
    return {
        p + "w1": uniform_init(rng, (d_in, d_hidden), scale),
        p + "b1": uniform_init(rng, (d_hidden,), scale),
        p + "w2": uniform_init(rng, (d_hidden,), scale),
        p + "b2": uniform_init(rng, (), scale),
    }


def init_self_attention(rng, d_in, heads, head_dim, prefix="", scale=0.1):
    p = prefix + "." if prefix else ""
    d_out = heads * head_dim
    return {
        p + "wq": uniform_init(rng, (d_in, d_out), scale),
        p + "wk": uniform_init(rng, (d_in, d_out), scale),
        p + "wv": uniform_init(rng, (d_in, d_out), scale),
    }


def sub_params(params, prefix):
    """Strip `prefix.` from matching keys of a node/array mapping."""
    pre = prefix + "."
    out = {k[len(pre) :]: v for k, v in params.items() if k.startswith(pre)}
    if not out:
        raise KeyError(f"no parameters with prefix '{prefix}'")
    return out


def dropout_node(x, p, rng):
    """Inverted dropout: zero with probability p, scale kept units by 1/(1-p)."""
    if p <= 0.0:
        return x
    x = ad.as_node(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask


# -- attention pooling -------------------------------------------------------


def attention_pool_nodes(H, p, dropout=0.0, rng=None):
    """Node-level attention pooling.

    Scores each row with the two-layer network w2 . tanh(row @ w1 + b1) + b2,
    softmaxes the scores and returns (pooled row, weights).
    """
    H = ad.as_node(H)
    n, d = H.shape
    if n == 0:
        raise ValueError("empty cluster")
    w1 = ad.as_node(p["w1"])
    if d != w1.shape[0]:
        raise ValueError(f"input dim {d} does not match params d_in {w1.shape[0]}")
    hidden = ad.tanh(H @ w1 + p["b1"])
    if dropout > 0.0:
        hidden = dropout_node(hidden, dropout, rng)
    scores = hidden @ ad.as_node(p["w2"]) + p["b2"]
    weights = ad.softmax(scores)
    pooled = weights @ H
    return pooled, weights


def attention_pool(H, params, dropout=0.0, rng=None):
    """Attention pooling over the rows of H; returns (pooled, weights) arrays."""
    H = check_matrix(H, "H")
    pooled, weights = attention_pool_nodes(H, params, dropout=dropout, rng=rng)
    return pooled.value, weights.value


# -- multi-head self-attention ------------------------------------------------


def self_attention_nodes(H, p, heads, head_dim, dropout=0.0, rng=None,
                         residual=False):
    """Node-level scaled dot-product self-attention, one output row per input row.

    With residual=True the input rows are added to the attention output
    (requires d_in == heads * head_dim). Without it, near-uniform attention at
    initialization maps every row to almost the same vector, which collapses
    any distance structure among the outputs.
    """
    H = ad.as_node(H)
    n, d = H.shape
    if n == 0:
        raise ValueError("empty input")
    wq = ad.as_node(p["wq"])
    if d != wq.shape[0]:
        raise ValueError(f"input dim {d} does not match params d_in {wq.shape[0]}")
    if wq.shape[1] != heads * head_dim:
        raise ValueError("projection width does not match heads * head_dim")
    if residual and d != heads * head_dim:
        raise ValueError("residual requires d_in == heads * head_dim")
    q = H @ p["wq"]
    k = H @ p["wk"]
    v = H @ p["wv"]
    scale = 1.0 / np.sqrt(head_dim)
    head_outs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        logits = (qh @ ad.transpose(kh)) * scale
        attn = ad.softmax_rows(logits)
        head_outs.append(attn @ vh)
    out = ad.concat(head_outs, axis=1)
    if residual:
        out = out + H
    if dropout > 0.0:
        out = dropout_node(out, dropout, rng)
    return out


def self_attention(H, params, heads, head_dim, residual=False):
    """Multi-head self-attention forward pass on plain arrays."""
    H = check_matrix(H, "H")
    return self_attention_nodes(H, params, heads, head_dim, residual=residual).value


# -- gradients ----------------------------------------------------------------


def compute_gradients(loss_builder, params: ParamSet):
    """Gradient of a scalar loss w.r.t. every parameter, as a flat vector.

    `loss_builder` receives a dict of leaf nodes (same names as `params`) and
    must return a scalar Node. Returns (loss value, flat gradient) with the
    gradient laid out in manifest order.
    """
    nodes = params.as_nodes()
    loss = loss_builder(nodes)
    loss_val = float(ad.value(loss))
    if not np.isfinite(loss_val):
        raise ValueError("non-finite loss")
    loss.backward()
    return loss_val, collect_gradients(nodes, params)
