"""Independent straight-loop reference implementations used as test oracles.

Nothing here shares code with the package: convolutions are nested loops,
normalization and routing are written out step by step, so agreement with
the vectorized implementations is meaningful.
"""

import math

import numpy as np


def naive_conv1d(x, w, b, padding="same"):
    n, cin, t = x.shape
    cout, _, s = w.shape
    if padding == "same":
        pl = (s - 1) // 2
        pr = s - 1 - pl
        t_out = t
    else:
        pl = pr = 0
        t_out = t - s + 1
    xp = np.zeros((n, cin, t + pl + pr))
    xp[:, :, pl : pl + t] = x
    out = np.zeros((n, cout, t_out))
    for ni in range(n):
        for co in range(cout):
            for ti in range(t_out):
                acc = b[co]
                for ci in range(cin):
                    for si in range(s):
                        acc += w[co, ci, si] * xp[ni, ci, ti + si]
                out[ni, co, ti] = acc
    return out


def naive_instance_norm(x, gamma, beta, eps=1e-5):
    n, c, t = x.shape
    out = np.zeros_like(x)
    for ni in range(n):
        for ci in range(c):
            row = x[ni, ci]
            mu = sum(row) / t
            var = sum((v - mu) ** 2 for v in row) / t
            for ti in range(t):
                out[ni, ci, ti] = gamma[ci] * (row[ti] - mu) / math.sqrt(var + eps) + beta[ci]
    return out


def naive_gelu(x):
    return np.vectorize(lambda v: v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def naive_softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    z = sum(e)
    return np.array([v / z for v in e])


def naive_rfamoe(x_ntl, params, b, c):
    """Stage-by-stage reference of the adaptive-receptive-field block."""
    n, t_len, l_in = x_ntl.shape
    l = len(params.in_gamma)
    xt = np.transpose(x_ntl, (0, 2, 1))  # [N, L_in, T]

    pooled = xt.mean(axis=2)
    logits = pooled @ params.router.weight + params.router.bias
    routed = np.zeros((n, l, t_len))
    for ni in range(n):
        e = int(np.argmax(logits[ni]))
        y = naive_conv1d(xt[ni : ni + 1], params.experts[e].weight, params.experts[e].bias)
        if params.gate_mode == "raw":
            y = y * naive_softmax_row(logits[ni])[e]
        routed[ni] = y[0]

    h = naive_instance_norm(routed, params.in_gamma, params.in_beta)
    gated = naive_gelu(h[:, : l // 2]) * h[:, l // 2 :]
    body = naive_conv1d(gated, params.gate_proj.weight, params.gate_proj.bias)
    fused = naive_conv1d(
        body.reshape(b, c * l, t_len), params.fuse.weight, params.fuse.bias
    ).reshape(n, l, t_len)
    if params.res_proj is None:
        res = xt
    else:
        res = naive_conv1d(xt, params.res_proj.weight, params.res_proj.bias)
    return np.transpose(fused + res, (0, 2, 1))


def naive_bridge(h_ntl, t, params):
    d_emb = params.film.weight.shape[0]
    l = params.film.weight.shape[1] // 2
    emb = np.zeros(d_emb)
    for i in range(d_emb // 2):
        ang = t / 10000.0 ** (2.0 * i / d_emb)
        emb[2 * i] = math.sin(ang)
        emb[2 * i + 1] = math.cos(ang)
    gb = emb @ params.film.weight + params.film.bias
    gamma, beta = gb[:l], gb[l:]
    out = np.zeros_like(h_ntl)
    for ni in range(h_ntl.shape[0]):
        for ti in range(h_ntl.shape[1]):
            for li in range(l):
                out[ni, ti, li] = gamma[li] * h_ntl[ni, ti, li] + beta[li]
    return out


def naive_fusion_moe(x_ntl, params, gates=None):
    n, t_len, l = x_ntl.shape
    k = len(params.experts)
    if gates is None:
        pooled = x_ntl.mean(axis=1)
        logits = pooled @ params.router.weight + params.router.bias
        gates = np.stack([naive_softmax_row(row) for row in logits])
    out = np.zeros((n, t_len, 1))
    for ni in range(n):
        mw = sum(gates[ni, ki] * params.experts[ki].weight[0, :, 0] for ki in range(k))
        mb = sum(gates[ni, ki] * params.experts[ki].bias[0] for ki in range(k))
        for ti in range(t_len):
            out[ni, ti, 0] = mb + sum(mw[li] * x_ntl[ni, ti, li] for li in range(l))
    return out


def naive_backbone(x_t, x_bar, t, params):
    b, c, t_len = x_t.shape
    n = b * c
    h = naive_conv1d(x_t.reshape(n, 1, t_len), params.lift_xt.weight, params.lift_xt.bias)
    cond = naive_conv1d(x_bar.reshape(n, 1, t_len), params.lift_cond.weight, params.lift_cond.bias)
    h = np.transpose(h, (0, 2, 1))
    cond = np.transpose(cond, (0, 2, 1))
    for level in params.levels:
        cond = naive_rfamoe(cond, level.cond, b, c)
        h = naive_rfamoe(h, level.main, b, c) + naive_bridge(cond, t, level.bridge)
    return naive_fusion_moe(h, params.head).reshape(b, c, t_len)
