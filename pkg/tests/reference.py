"""Slow, loop-based references used as independent oracles.

Everything here works on plain float64 arrays and Python scalars and shares no
code with the vectorized implementations under test.
"""

import math

import numpy as np


def layer_norm(v, gamma, beta, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((a - mu) ** 2 for a in v) / len(v)
    return np.array([(a - mu) / math.sqrt(var + eps) * g + b for a, g, b in zip(v, gamma, beta)])


def affine(v, w, b):
    return np.array([sum(v[i] * w[i, o] for i in range(len(v))) + b[o] for o in range(w.shape[1])])


def relu(v):
    return np.array([max(a, 0.0) for a in v])


def softmax(row):
    m = max(row)
    e = [math.exp(a - m) for a in row]
    s = sum(e)
    return [a / s for a in e]


def attention(params, prefix, queries, keys, values, heads):
    """Multi-head attention over lists of vectors; returns (outputs, head-averaged weights)."""
    p = lambda n: params[f"{prefix}.{n}"]
    d = len(queries[0])
    dh = d // heads
    q = [affine(v, p("q_proj.weight"), p("q_proj.bias")) for v in queries]
    k = [affine(v, p("k_proj.weight"), p("k_proj.bias")) for v in keys]
    v_ = [affine(v, p("v_proj.weight"), p("v_proj.bias")) for v in values]
    outputs = []
    avg = np.zeros((len(queries), len(keys)))
    for t in range(len(queries)):
        merged = np.zeros(d)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = [float(np.dot(q[t][sl], k[s][sl])) / math.sqrt(dh) for s in range(len(keys))]
            w = softmax(scores)
            avg[t] += np.array(w) / heads
            for s in range(len(keys)):
                merged[sl] += w[s] * v_[s][sl]
        outputs.append(affine(merged, p("out_proj.weight"), p("out_proj.bias")))
    return outputs, avg


def ffn(params, prefix, v):
    p = lambda n: params[f"{prefix}.{n}"]
    return affine(relu(affine(v, p("fc1.weight"), p("fc1.bias"))), p("fc2.weight"), p("fc2.bias"))


def norm(params, prefix, v):
    return layer_norm(v, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def encoder_layer(params, prefix, tokens, pe, heads):
    qk = [t + e for t, e in zip(tokens, pe)]
    att, _ = attention(params, f"{prefix}.self_attn", qk, qk, tokens, heads)
    x = [norm(params, f"{prefix}.norm1", t + a) for t, a in zip(tokens, att)]
    return [norm(params, f"{prefix}.norm2", t + ffn(params, f"{prefix}.ffn", t)) for t in x]


def decoder_layer(params, prefix, tgt, memory, pe, heads, self_attn=True):
    if self_attn:
        att, _ = attention(params, f"{prefix}.self_attn", tgt, tgt, tgt, heads)
        tgt = [norm(params, f"{prefix}.norm1", t + a) for t, a in zip(tgt, att)]
    keys = [m + e for m, e in zip(memory, pe)]
    att, weights = attention(params, f"{prefix}.cross_attn", tgt, keys, memory, heads)
    tgt = [norm(params, f"{prefix}.norm2", t + a) for t, a in zip(tgt, att)]
    return [norm(params, f"{prefix}.norm3", t + ffn(params, f"{prefix}.ffn", t)) for t in tgt], weights


def project(params, prefix, v, normalize=True):
    out = ffn(params, prefix, v)
    if normalize:
        out = out / math.sqrt(sum(a * a for a in out))
    return out


def sscl(x, y, snap_vectors=(), snap_classes=(), tau=0.1):
    """Loop form of the sample-to-sample loss; anchors are the batch's activated vectors."""
    n, num_classes, _ = x.shape
    pool = []
    for i in range(n):
        for j in range(num_classes):
            if y[i][j] == 1:
                pool.append((x[i, j], j, True))
    for v, c in zip(snap_vectors, snap_classes):
        pool.append((v, int(c), False))
    total = 0.0
    for a, (va, ca, current) in enumerate(pool):
        if not current:
            continue
        others = [b for b in range(len(pool)) if b != a]
        positives = [b for b in others if pool[b][1] == ca]
        if not positives:
            continue
        denom = sum(math.exp(float(np.dot(va, pool[b][0])) / tau) for b in others)
        acc = 0.0
        for p in positives:
            acc += math.log(math.exp(float(np.dot(va, pool[p][0])) / tau) / denom)
        total += -acc / len(positives)
    return total


def pscl(prototypes, classes, x, y, snap_vectors=(), snap_classes=(), tau=0.1):
    """Loop form of the prototype-to-sample loss; ``prototypes[k]`` belongs to ``classes[k]``."""
    n = x.shape[0]
    total = 0.0
    for c, j in zip(prototypes, classes):
        pos = [x[i, j] for i in range(n) if y[i][j] == 1]
        pos += [v for v, cls in zip(snap_vectors, snap_classes) if cls == j]
        neg = [x[i, j] for i in range(n) if y[i][j] == 0]
        if not pos:
            continue
        num = sum(math.exp(float(np.dot(c, p)) / tau) for p in pos)
        den = num + sum(math.exp(float(np.dot(c, q)) / tau) for q in neg)
        total += -math.log(num / den)
    return total


def bce(s, y):
    n = len(s)
    total = 0.0
    for i in range(n):
        for j in range(len(s[i])):
            total += y[i][j] * math.log(s[i][j]) + (1 - y[i][j]) * math.log(1 - s[i][j])
    return -total / n


def average_precision(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    acc = 0.0
    for rank, i in enumerate(order, 1):
        if labels[i] == 1:
            hits += 1
            acc += hits / rank
    return acc / hits
