"""Toy decoder-only transformer (GQA + RMSNorm + SwiGLU) with exact gradients.

Everything runs in float64 numpy with hand-derived backward passes so the
analytic gradients can be verified against finite differences.  Each block
exposes exactly the seven orthogonalization-managed operator types:
attn_{q,k,v,o} and mlp_{gate,up,down}.  Embeddings, positional table, norm
gains and the output head are element-wise-optimizer parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scheduler import OPERATOR_TYPES

_NORM_EPS = 1e-6
_MASK = -1e30


@dataclass(frozen=True)
class ToyModelConfig:
    layers: int = 4
    d_model: int = 64
    heads: int = 4
    kv_heads: int = 2
    d_ff: int = 128
    vocab: int = 64
    seq_len: int = 64
    seed: int = 42

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.heads % self.kv_heads != 0:
            raise ValueError("heads must be divisible by kv_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def init_params(cfg: ToyModelConfig) -> dict[str, np.ndarray]:
    """Gaussian(0, 0.02) linear/embedding weights, unit norm gains."""
    rng = np.random.default_rng(cfg.seed)
    dh = cfg.head_dim
    params: dict[str, np.ndarray] = {
        "embed": rng.normal(0.0, 0.02, (cfg.vocab, cfg.d_model)),
        "pos": rng.normal(0.0, 0.02, (cfg.seq_len, cfg.d_model)),
        "final_norm": np.ones(cfg.d_model),
        "head": rng.normal(0.0, 0.02, (cfg.d_model, cfg.vocab)),
    }
    for i in range(cfg.layers):
        p = f"layers.{i}."
        params[p + "attn_norm"] = np.ones(cfg.d_model)
        params[p + "attn_q"] = rng.normal(0.0, 0.02, (cfg.d_model, cfg.heads * dh))
        params[p + "attn_k"] = rng.normal(0.0, 0.02, (cfg.d_model, cfg.kv_heads * dh))
        params[p + "attn_v"] = rng.normal(0.0, 0.02, (cfg.d_model, cfg.kv_heads * dh))
        params[p + "attn_o"] = rng.normal(0.0, 0.02, (cfg.heads * dh, cfg.d_model))
        params[p + "mlp_norm"] = np.ones(cfg.d_model)
        params[p + "mlp_gate"] = rng.normal(0.0, 0.02, (cfg.d_model, cfg.d_ff))
        params[p + "mlp_up"] = rng.normal(0.0, 0.02, (cfg.d_model, cfg.d_ff))
        params[p + "mlp_down"] = rng.normal(0.0, 0.02, (cfg.d_ff, cfg.d_model))
    return params


def op_type_of(name: str) -> str | None:
    """Operator type of a parameter name, None for element-wise parameters."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf if leaf in OPERATOR_TYPES else None


def layer_of(name: str) -> int:
    return int(name.split(".")[1]) if name.startswith("layers.") else -1


def _rmsnorm_fwd(x):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _NORM_EPS)
    return x * inv, inv


def _rmsnorm_bwd(dy, x, inv):
    d = x.shape[-1]
    dot = np.sum(dy * x, axis=-1, keepdims=True)
    return dy * inv - x * (inv**3) * dot / d


def _silu_fwd(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig, sig


def _silu_bwd(dy, x, sig):
    return dy * sig * (1.0 + x * (1.0 - sig))


def forward(params: dict, cfg: ToyModelConfig, tokens: np.ndarray):
    """Forward pass; returns (logits, cache-for-backward)."""
    b, t = tokens.shape
    dh = cfg.head_dim
    groups = cfg.heads // cfg.kv_heads
    x = params["embed"][tokens] + params["pos"][:t]
    cache = {"tokens": tokens, "layers": []}
    mask = np.triu(np.full((t, t), _MASK), k=1)
    for i in range(cfg.layers):
        p = f"layers.{i}."
        entry = {"x_in": x}
        normed, inv = _rmsnorm_fwd(x)
        h1 = normed * params[p + "attn_norm"]
        entry.update(norm1=normed, inv1=inv, h1=h1)
        # head-major (b, h, t, d) layout so the contractions run as batched matmuls
        q = (h1 @ params[p + "attn_q"]).reshape(b, t, cfg.heads, dh).transpose(0, 2, 1, 3)
        k = (h1 @ params[p + "attn_k"]).reshape(b, t, cfg.kv_heads, dh).transpose(0, 2, 1, 3)
        v = (h1 @ params[p + "attn_v"]).reshape(b, t, cfg.kv_heads, dh).transpose(0, 2, 1, 3)
        k_rep = np.repeat(k, groups, axis=1)
        v_rep = np.repeat(v, groups, axis=1)
        scores = q @ k_rep.swapaxes(-1, -2) / np.sqrt(dh) + mask
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = (att @ v_rep).transpose(0, 2, 1, 3).reshape(b, t, cfg.heads * dh)
        attn_out = ctx @ params[p + "attn_o"]
        entry.update(q=q, k=k, v=v, att=att, ctx=ctx)
        x = x + attn_out
        entry["x_mid"] = x
        normed2, inv2 = _rmsnorm_fwd(x)
        h2 = normed2 * params[p + "mlp_norm"]
        gate = h2 @ params[p + "mlp_gate"]
        up = h2 @ params[p + "mlp_up"]
        act, sig = _silu_fwd(gate)
        hidden = act * up
        x = x + hidden @ params[p + "mlp_down"]
        entry.update(norm2=normed2, inv2=inv2, h2=h2, gate=gate, up=up, act=act, sig=sig,
                     hidden=hidden)
        cache["layers"].append(entry)
    normed_f, inv_f = _rmsnorm_fwd(x)
    hf = normed_f * params["final_norm"]
    logits = hf @ params["head"]
    cache.update(x_final=x, norm_f=normed_f, inv_f=inv_f, hf=hf)
    return logits, cache


def loss_and_grads(params: dict, cfg: ToyModelConfig, tokens: np.ndarray,
                   targets: np.ndarray):
    """Mean cross-entropy over all positions plus gradients for every parameter."""
    b, t = tokens.shape
    dh = cfg.head_dim
    groups = cfg.heads // cfg.kv_heads
    logits, cache = forward(params, cfg, tokens)

    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=-1, keepdims=True)
    n = b * t
    rows = np.arange(b)[:, None], np.arange(t)[None, :]
    loss = float(-np.mean(np.log(probs[rows[0], rows[1], targets] + 1e-300)))

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dlogits = probs.copy()
    dlogits[rows[0], rows[1], targets] -= 1.0
    dlogits /= n

    grads["head"] = cache["hf"].reshape(n, -1).T @ dlogits.reshape(n, -1)
    dhf = dlogits @ params["head"].T
    grads["final_norm"] = np.sum(dhf * cache["norm_f"], axis=(0, 1))
    dnorm_f = dhf * params["final_norm"]
    dx = _rmsnorm_bwd(dnorm_f, cache["x_final"], cache["inv_f"])

    for i in range(cfg.layers - 1, -1, -1):
        p = f"layers.{i}."
        e = cache["layers"][i]
        # mlp branch
        dhidden = dx @ params[p + "mlp_down"].T
        grads[p + "mlp_down"] = e["hidden"].reshape(n, -1).T @ dx.reshape(n, -1)
        dact = dhidden * e["up"]
        dup = dhidden * e["act"]
        dgate = _silu_bwd(dact, e["gate"], e["sig"])
        dh2 = dgate @ params[p + "mlp_gate"].T + dup @ params[p + "mlp_up"].T
        grads[p + "mlp_gate"] = e["h2"].reshape(n, -1).T @ dgate.reshape(n, -1)
        grads[p + "mlp_up"] = e["h2"].reshape(n, -1).T @ dup.reshape(n, -1)
        grads[p + "mlp_norm"] = np.sum(dh2 * e["norm2"], axis=(0, 1))
        dnorm2 = dh2 * params[p + "mlp_norm"]
        dx = dx + _rmsnorm_bwd(dnorm2, e["x_mid"], e["inv2"])
        # attention branch (all tensors head-major: (b, h, t, d))
        dattn_out = dx
        dctx = (
            (dattn_out @ params[p + "attn_o"].T)
            .reshape(b, t, cfg.heads, dh)
            .transpose(0, 2, 1, 3)
        )
        grads[p + "attn_o"] = e["ctx"].reshape(n, -1).T @ dattn_out.reshape(n, -1)
        k_rep = np.repeat(e["k"], groups, axis=1)
        v_rep = np.repeat(e["v"], groups, axis=1)
        datt = dctx @ v_rep.swapaxes(-1, -2)
        dv_rep = e["att"].swapaxes(-1, -2) @ dctx
        dscores = e["att"] * (datt - np.sum(datt * e["att"], axis=-1, keepdims=True))
        dq = dscores @ k_rep / np.sqrt(dh)
        dk_rep = dscores.swapaxes(-1, -2) @ e["q"] / np.sqrt(dh)
        dk = dk_rep.reshape(b, cfg.kv_heads, groups, t, dh).sum(axis=2)
        dv = dv_rep.reshape(b, cfg.kv_heads, groups, t, dh).sum(axis=2)
        dq_flat = dq.transpose(0, 2, 1, 3).reshape(b, t, -1)
        dk_flat = dk.transpose(0, 2, 1, 3).reshape(b, t, -1)
        dv_flat = dv.transpose(0, 2, 1, 3).reshape(b, t, -1)
        dh1 = (
            dq_flat @ params[p + "attn_q"].T
            + dk_flat @ params[p + "attn_k"].T
            + dv_flat @ params[p + "attn_v"].T
        )
        h1_flat = e["h1"].reshape(n, -1).T
        grads[p + "attn_q"] = h1_flat @ dq_flat.reshape(n, -1)
        grads[p + "attn_k"] = h1_flat @ dk_flat.reshape(n, -1)
        grads[p + "attn_v"] = h1_flat @ dv_flat.reshape(n, -1)
        grads[p + "attn_norm"] = np.sum(dh1 * e["norm1"], axis=(0, 1))
        dnorm1 = dh1 * params[p + "attn_norm"]
        dx = dattn_out + _rmsnorm_bwd(dnorm1, e["x_in"], e["inv1"])

    grads["pos"][:t] = dx.sum(axis=0)
    np.add.at(grads["embed"], cache["tokens"], dx)
    return loss, grads
