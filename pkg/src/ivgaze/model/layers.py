"""Forward/backward pairs for the toy transformer, in plain numpy.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache, accumulates parameter gradients
into ``G`` (same names as ``P``) and returns the input gradient.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
LOGIT_CLAMP = 50.0
_GELU_K = np.sqrt(2.0 / np.pi)


def linear_forward(x, P, name):
    W, b = P[name + ".W"], P[name + ".b"]
    return x @ W + b, (x, name)


def linear_backward(dy, cache, P, G, need_dx=True):
    x, name = cache
    W = P[name + ".W"]
    G[name + ".W"] += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    G[name + ".b"] += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy @ W.T if need_dx else None


def layernorm_forward(x, P, name):
    gamma, beta = P[name + ".gamma"], P[name + ".beta"]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, name)


def layernorm_backward(dy, cache, P, G):
    xhat, inv, name = cache
    gamma = P[name + ".gamma"]
    flat_dy = dy.reshape(-1, dy.shape[-1])
    G[name + ".gamma"] += (flat_dy * xhat.reshape(flat_dy.shape)).sum(axis=0)
    G[name + ".beta"] += flat_dy.sum(axis=0)
    dxhat = dy * gamma
    n = dy.shape[-1]
    return inv / n * (
        n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )


def gelu_forward(x):
    inner = _GELU_K * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_backward(dy, cache):
    x, th = cache
    dinner = _GELU_K * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z):
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def mha_forward(x, P, name, heads):
    B, T, d = x.shape
    dh = d // heads
    q, cq = linear_forward(x, P, name + ".q")
    k, ck = linear_forward(x, P, name + ".k")
    v, cv = linear_forward(x, P, name + ".v")

    def split(a):
        return a.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q), split(k), split(v)
    scale = 1.0 / np.sqrt(dh)
    att = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale)
    oh = att @ vh
    o = oh.transpose(0, 2, 1, 3).reshape(B, T, d)
    y, co = linear_forward(o, P, name + ".o")
    return y, (cq, ck, cv, co, qh, kh, vh, att, scale, heads)


def mha_backward(dy, cache, P, G):
    cq, ck, cv, co, qh, kh, vh, att, scale, heads = cache
    do = linear_backward(dy, co, P, G)
    B, T, d = do.shape
    dh = d // heads
    doh = do.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    datt = doh @ vh.transpose(0, 1, 3, 2)
    dvh = att.transpose(0, 1, 3, 2) @ doh
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 1, 3, 2) @ qh

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(B, T, d)

    dx = linear_backward(merge(dqh), cq, P, G)
    dx += linear_backward(merge(dkh), ck, P, G)
    dx += linear_backward(merge(dvh), cv, P, G)
    return dx


def block_forward(x, P, name, heads):
    """Pre-norm encoder block: ``x + MHA(LN(x))`` then ``+ MLP(LN(.))``."""
    h1, c_ln1 = layernorm_forward(x, P, name + ".ln1")
    a, c_att = mha_forward(h1, P, name + ".att", heads)
    x1 = x + a
    h2, c_ln2 = layernorm_forward(x1, P, name + ".ln2")
    m1, c_fc1 = linear_forward(h2, P, name + ".fc1")
    m2, c_act = gelu_forward(m1)
    m3, c_fc2 = linear_forward(m2, P, name + ".fc2")
    return x1 + m3, (c_ln1, c_att, c_ln2, c_fc1, c_act, c_fc2)


def block_backward(dy, cache, P, G):
    c_ln1, c_att, c_ln2, c_fc1, c_act, c_fc2 = cache
    dm2 = linear_backward(dy, c_fc2, P, G)
    dm1 = gelu_backward(dm2, c_act)
    dh2 = linear_backward(dm1, c_fc1, P, G)
    dx1 = dy + layernorm_backward(dh2, c_ln2, P, G)
    dh1 = mha_backward(dx1, c_att, P, G)
    return dx1 + layernorm_backward(dh1, c_ln1, P, G)


def encoder_forward(x, P, name, layers, heads, final_norm=True):
    caches = []
    for i in range(layers):
        x, c = block_forward(x, P, f"{name}.blk{i}", heads)
        caches.append(c)
    c_ln = None
    if final_norm:
        x, c_ln = layernorm_forward(x, P, name + ".ln")
    return x, (caches, c_ln)


def encoder_backward(dy, cache, P, G):
    caches, c_ln = cache
    if c_ln is not None:
        dy = layernorm_backward(dy, c_ln, P, G)
    for c in reversed(caches):
        dy = block_backward(dy, c, P, G)
    return dy


def mlp_forward(x, P, name):
    h, c1 = linear_forward(x, P, name + ".fc1")
    a, ca = gelu_forward(h)
    y, c2 = linear_forward(a, P, name + ".fc2")
    return y, (c1, ca, c2)


def mlp_backward(dy, cache, P, G, need_dx=True):
    c1, ca, c2 = cache
    da = linear_backward(dy, c2, P, G)
    dh = gelu_backward(da, ca)
    return linear_backward(dh, c1, P, G, need_dx)


def l1_loss(pred, target):
    """Mean absolute error and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def cross_entropy(logits, labels):
    """Mean cross entropy (log-space, logits clamped) and gradient w.r.t. logits."""
    B = len(labels)
    lsm = log_softmax(logits)
    loss = -float(lsm[np.arange(B), labels].mean())
    grad = np.exp(lsm)
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    # clamped logits pass no gradient
    grad = np.where(np.abs(logits) > LOGIT_CLAMP, 0.0, grad)
    return loss, grad


# ---------------------------------------------------------------- layouts


def linear_shapes(name, n_in, n_out):
    return {name + ".W": (n_in, n_out), name + ".b": (n_out,)}


def layernorm_shapes(name, d):
    return {name + ".gamma": (d,), name + ".beta": (d,)}


def block_shapes(name, d, hidden):
    out = {}
    out.update(layernorm_shapes(name + ".ln1", d))
    for p in ("q", "k", "v", "o"):
        out.update(linear_shapes(f"{name}.att.{p}", d, d))
    out.update(layernorm_shapes(name + ".ln2", d))
    out.update(linear_shapes(name + ".fc1", d, hidden))
    out.update(linear_shapes(name + ".fc2", hidden, d))
    return out


def encoder_shapes(name, d, layers, hidden, final_norm=True):
    out = {}
    for i in range(layers):
        out.update(block_shapes(f"{name}.blk{i}", d, hidden))
    if final_norm:
        out.update(layernorm_shapes(name + ".ln", d))
    return out


def mlp_shapes(name, n_in, hidden, n_out):
    out = linear_shapes(name + ".fc1", n_in, hidden)
    out.update(linear_shapes(name + ".fc2", hidden, n_out))
    return out
