"""Explicit-loop reference implementations used as test oracles.

Nothing here calls into the package's forward code; only parameter values
are read from the parameter containers.
"""
import math

import numpy as np


def mm(a, b):
    n, k = len(a), len(b)
    p = len(b[0])
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i, j] = s
    return out


def affine(x, w, b):
    out = mm(x, w)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] += b[j]
    return out


def tanh(x):
    return np.vectorize(math.tanh)(x)


def normalized(adj):
    n = adj.shape[0]
    sq = max(sum(adj[i, j] ** 2 for i in range(n) for j in range(n)), 1e-8)
    return np.array([[0.5 * ((i == j) + adj[i, j] / sq) for j in range(n)] for i in range(n)])


def filters(alphas, a):
    n = a.shape[0]
    eye = np.eye(n)
    powers = [a]
    for _ in range(1, len(alphas) - 1):
        powers.append(mm(powers[-1], powers[-1]))
    out = []
    for k, coef in enumerate(alphas):
        if k == 0:
            out.append(coef[0] * a)
        elif k == 1:
            out.append(coef[0] * eye + coef[1] * a)
        else:
            out.append(sum(coef[j - 1] * powers[j - 1] for j in range(1, k + 1)))
    return out


def scatter(x, a, tree):
    """Leaves in path order, with shared or per-branch weights."""
    current = [x]
    for bank, ws in zip(tree.banks, tree.weights):
        hs = filters([c.data for c in bank.coeffs], a)
        nxt = []
        for p, parent in enumerate(current):
            for k, h in enumerate(hs):
                w = ws[k] if len(ws) == len(hs) else ws[p * len(hs) + k]
                nxt.append(tanh(mm(mm(h, parent), w.data)))
        current = nxt
    return current


def aggregate(chans, agg):
    if agg is None:
        return sum(chans) / len(chans)
    n, c = chans[0].shape
    mean = sum(chans) / len(chans)
    h_sp = np.maximum(mm(mean, agg.w_sp.data), 0.0)
    scores = []
    for ch in chans:
        z = tanh(affine(np.hstack([h_sp, ch]), agg.f1_w.data, agg.f1_b.data))
        node = affine(z, agg.f2_w.data, agg.f2_b.data)
        scores.append(sum(node[i, 0] for i in range(n)) / n)
    top = max(scores)
    ex = [math.exp(s - top) for s in scores]
    omega = [e / sum(ex) for e in ex]
    out = np.zeros((n, c))
    for w, ch in zip(omega, chans):
        out += w * ch
    return out


def source_softmax(s):
    out = np.zeros_like(s)
    for j in range(s.shape[1]):
        col = [s[i, j] for i in range(s.shape[0])]
        top = max(col)
        ex = [math.exp(v - top) for v in col]
        for i in range(s.shape[0]):
            out[i, j] = ex[i] / sum(ex)
    return out


def block_forward(x, block, cfg):
    """One multi-part block on a single ``(nodes, C')`` feature matrix."""
    def branch(feat, graph):
        return aggregate(scatter(feat, normalized(graph.adjacency.data), block.tree), block.aggregator)

    h = branch(x, block.graphs["whole"])
    mlp = block.mlp
    part = cfg.body_partition
    if part is None:
        fused_in = h + h
    else:
        up_idx, low_idx = part.upper, part.lower
        x_up = np.array([x[i] for i in up_idx])
        x_low = np.array([x[i] for i in low_idx])
        h_up = branch(x_up, block.graphs["upper"])
        h_low = branch(x_low, block.graphs["lower"])
        f_up, f_low = block.fusion.f_up, block.fusion.f_low
        e_up = affine(h_up, f_up.weight.data, f_up.bias.data)
        e_low = affine(h_low, f_low.weight.data, f_low.bias.data)
        a_ul = source_softmax(mm(e_up, e_low.T))
        a_lu = source_softmax(mm(e_low, e_up.T))
        new_low = h_low.copy()
        for d in range(len(low_idx)):
            for s in range(len(up_idx)):
                new_low[d] += a_ul[s, d] * h_up[s]
        new_up = h_up.copy()
        for d in range(len(up_idx)):
            for s in range(len(low_idx)):
                new_up[d] += a_lu[s, d] * h_low[s]
        placed = np.zeros_like(h)
        for r, i in enumerate(up_idx):
            placed[i] = new_up[r]
        for r, i in enumerate(low_idx):
            placed[i] = new_low[r]
        fused_in = h + placed
    z = affine(fused_in, mlp.first.weight.data, mlp.first.bias.data)
    if not mlp.linear:
        z = tanh(z)
    out = affine(z, mlp.second.weight.data, mlp.second.bias.data)
    return x + out if cfg.block_residuals else out


def dct_basis(n):
    return np.array(
        [[(math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)) * math.cos(math.pi * (2 * t + 1) * k / (2 * n))
          for t in range(n)] for k in range(n)]
    )


def full_forward(history, params, cfg):
    """One clip ``(T, M, 3)`` -> ``(dT, M, 3)`` through every stage by hand."""
    t_len, m = history.shape[0], history.shape[1]
    n = t_len + cfg.horizon
    seq = np.zeros((n, 3 * m))
    for t in range(n):
        src = history[min(t, t_len - 1)]
        for j in range(m):
            for d in range(3):
                seq[t, 3 * j + d] = src[j, d]
    basis = dct_basis(n)[: cfg.n_coeffs]
    x = mm(seq.T, basis.T)  # (3M, C)
    h = affine(x, params.in_proj.weight.data, params.in_proj.bias.data)
    for block in params.blocks:
        h = block_forward(h, block, cfg)
    y = affine(h, params.out_proj.weight.data, params.out_proj.bias.data)
    if cfg.global_skip:
        y = y + x
    rec = mm(y, basis)  # (3M, N)
    out = np.zeros((cfg.horizon, m, 3))
    for f in range(cfg.horizon):
        for j in range(m):
            for d in range(3):
                out[f, j, d] = rec[3 * j + d, t_len + f]
    return out
