"""Straight-line numpy re-implementation of the network, used as a test oracle.

Written channel-first with einsum and explicit loops so it shares no code
path with the tape-based model.
"""

import numpy as np


def bn(x, gamma, beta, mean, var, training, eps, chan_axis):
    axes = tuple(i for i in range(x.ndim) if i != chan_axis)
    shape = [1] * x.ndim
    shape[chan_axis] = -1
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    return (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps) * gamma.reshape(shape) + beta.reshape(shape)


def softmax_rows(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def gconv(x, A, W, B, theta=None, phi=None):
    """x: (N, C, T, V)."""
    N, C, T, V = x.shape
    out = 0.0
    for k in range(A.shape[0]):
        adj = np.broadcast_to(A[k] + B[k], (N, V, V)).copy()
        if theta is not None:
            xm = x.mean(axis=2)  # (N, C, V)
            a = np.einsum("ncv,ce->nve", xm, theta[k])
            b = np.einsum("ncv,ce->nve", xm, phi[k])
            adj = adj + softmax_rows(np.einsum("nve,nwe->nvw", a, b) / theta.shape[-1])
        agg = np.einsum("nvw,nctw->nctv", adj, x)
        out = out + np.einsum("nctv,co->notv", agg, W[k])
    return out


def tconv(x, W, kernel, stride):
    N, C, T, V = x.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    T2 = (T + 2 * pad - kernel) // stride + 1
    Wk = W.reshape(kernel, C, -1)
    out = np.zeros((N, Wk.shape[2], T2, V))
    for t in range(T2):
        for k in range(kernel):
            out[:, :, t] += np.einsum("ncv,co->nov", xp[:, :, t * stride + k], Wk[k])
    return out


def gcn(params, buffers, cfg, A, batch, training):
    N, C, T, V, M = batch.shape
    eps = cfg.bn_eps
    x = batch.transpose(0, 4, 3, 1, 2).reshape(N * M, V * C, T)  # BN over joint-channel pairs
    x = bn(x, params["data_bn.gamma"], params["data_bn.beta"], buffers["data_bn.mean"],
           buffers["data_bn.var"], training, eps, 1)
    x = x.reshape(N * M, V, C, T).transpose(0, 2, 3, 1)  # (NM, C, T, V)
    for i, stride in enumerate(cfg.strides):
        pre = f"block{i}"
        P = lambda n: params[pre + n]  # noqa: E731
        Bf = lambda n: buffers[pre + n]  # noqa: E731
        theta = params.get(pre + ".gconv.theta") if cfg.data_graph else None
        phi = params.get(pre + ".gconv.phi") if cfg.data_graph else None
        h = gconv(x, A, P(".gconv.W"), P(".gconv.B"), theta, phi)
        h = np.maximum(bn(h, P(".bn1.gamma"), P(".bn1.beta"), Bf(".bn1.mean"), Bf(".bn1.var"), training, eps, 1), 0)
        h = tconv(h, P(".tconv.W"), cfg.temporal_kernel, stride)
        h = bn(h, P(".bn2.gamma"), P(".bn2.beta"), Bf(".bn2.mean"), Bf(".bn2.var"), training, eps, 1)
        if pre + ".res.W" in params:
            r = np.einsum("nctv,co->notv", x[:, :, ::stride], P(".res.W"))
            r = bn(r, P(".res_bn.gamma"), P(".res_bn.beta"), Bf(".res_bn.mean"), Bf(".res_bn.var"), training, eps, 1)
        else:
            r = x
        x = np.maximum(h + r, 0)
    seq = x.mean(axis=3)  # (NM, D, T')
    return seq.reshape(N, M, *seq.shape[1:]).mean(axis=1)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def gru(params, seq):
    N, D, T = seq.shape
    H = params["gru.U_z"].shape[0]
    h = np.zeros((N, H))
    for t in range(T):
        x = seq[:, :, t]
        z = sigmoid(x @ params["gru.W_z"] + h @ params["gru.U_z"] + params["gru.b_z"])
        r = sigmoid(x @ params["gru.W_r"] + h @ params["gru.U_r"] + params["gru.b_r"])
        c = np.tanh(x @ params["gru.W_h"] + (r * h) @ params["gru.U_h"] + params["gru.b_h"])
        h = (1 - z) * h + z * c
    return h


def infer(model, batch):
    p, b = model.params, model.buffers
    ctx = gru(p, gcn(p, b, model.cfg, model.graph, batch, False))
    return ctx @ p["fc.W"] + p["fc.b"]


def train_forward(model, clean, noisy):
    p, b = model.params, model.buffers
    alpha = gcn(p, b, model.cfg, model.graph, clean, True).mean(axis=2)
    ctx = gru(p, gcn(p, b, model.cfg, model.graph, noisy, True))
    return alpha, ctx, ctx @ p["fc.W"] + p["fc.b"]
