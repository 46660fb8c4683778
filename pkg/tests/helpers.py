"""Independent reference implementations used as test oracles.

Everything here is written as plain loops or direct formula evaluation,
deliberately sharing no code with the library kernels.
"""

from __future__ import annotations

import math

import numpy as np


def rel_err(a, b, floor: float = 1e-6) -> float:
    """Max elementwise relative error with a small-denominator floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def norm_rel_err(a, b) -> float:
    """Norm-wise relative error ||a-b|| / ||b||; the right scale for
    float32 kernels checked against float64 oracles."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(b.reshape(-1))), 1e-30)
    return float(np.linalg.norm((a - b).reshape(-1))) / scale


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple i/j/k loop, ascending k."""
    m, kk = a.shape
    k2, n = b.shape
    assert kk == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc += float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


def naive_avg_pool(x: np.ndarray, g: int) -> np.ndarray:
    b, h, w, c = x.shape
    out = np.zeros((b, h // g, w // g, c), dtype=np.float64)
    for bi in range(b):
        for i in range(h // g):
            for j in range(w // g):
                for ci in range(c):
                    acc = 0.0
                    for di in range(g):
                        for dj in range(g):
                            acc += float(x[bi, i * g + di, j * g + dj, ci])
                    out[bi, i, j, ci] = acc / (g * g)
    return out


def naive_conv2d(x: np.ndarray, w: np.ndarray, bias=None, stride: int = 1, padding=None, groups: int = 1) -> np.ndarray:
    """Direct sliding-window convolution (cross-correlation), all loops."""
    b, h, ww, cin = x.shape
    k = w.shape[0]
    cpg = cin // groups
    cout = w.shape[3]
    opg = cout // groups
    pad = k // 2 if padding is None else padding
    xp = np.zeros((b, h + 2 * pad, ww + 2 * pad, cin), dtype=np.float64)
    xp[:, pad : pad + h, pad : pad + ww, :] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (ww + 2 * pad - k) // stride + 1
    out = np.zeros((b, ho, wo, cout), dtype=np.float64)
    for bi in range(b):
        for oi in range(ho):
            for oj in range(wo):
                for oc in range(cout):
                    gidx = oc // opg
                    acc = 0.0
                    for ki in range(k):
                        for kj in range(k):
                            for ic in range(cpg):
                                acc += float(xp[bi, oi * stride + ki, oj * stride + kj, gidx * cpg + ic]) * float(
                                    w[ki, kj, ic, oc]
                                )
                    out[bi, oi, oj, oc] = acc + (float(bias[oc]) if bias is not None else 0.0)
    return out


def softmax_row(row: np.ndarray) -> np.ndarray:
    z = row - row.max()
    e = np.exp(z)
    return e / e.sum()


def dense_attention_oracle(tokens: np.ndarray, wq, wk, wv, num_heads: int) -> np.ndarray:
    """Per-head scaled dot-product attention over one token matrix [N,C].

    Queries, keys, and values all come from `tokens`. No output
    projection and no residual; heads are concatenated channel-wise.
    """
    return cross_attention_oracle(tokens, tokens, wq, wk, wv, num_heads)


def cross_attention_oracle(q_tokens: np.ndarray, kv_tokens: np.ndarray, wq, wk, wv, num_heads: int) -> np.ndarray:
    n, c = q_tokens.shape
    m = kv_tokens.shape[0]
    d = c // num_heads
    q = q_tokens.astype(np.float64) @ np.asarray(wq, dtype=np.float64)
    k = kv_tokens.astype(np.float64) @ np.asarray(wk, dtype=np.float64)
    v = kv_tokens.astype(np.float64) @ np.asarray(wv, dtype=np.float64)
    out = np.zeros((n, c), dtype=np.float64)
    for hh in range(num_heads):
        sl = slice(hh * d, (hh + 1) * d)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        for i in range(n):
            scores = np.array([qh[i] @ kh[j] / math.sqrt(d) for j in range(m)])
            p = softmax_row(scores)
            out[i, sl] = sum(p[j] * vh[j] for j in range(m))
    return out


def mhsa_oracle(tokens: np.ndarray, wq, wk, wv, wp, num_heads: int) -> np.ndarray:
    """Full dense unit on [N,C]: attention, output projection, residual."""
    a = dense_attention_oracle(tokens, wq, wk, wv, num_heads)
    return a @ np.asarray(wp, dtype=np.float64) + tokens.astype(np.float64)


def numerical_gradient(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences over every coordinate of theta (64-bit)."""
    theta = theta.astype(np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(theta))
        flat[i] = orig - h
        fm = float(f(theta))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
