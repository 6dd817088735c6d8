"""Naive reference implementations shared by the unit and acceptance tests."""
import itertools

import numpy as np

from mxfontpp.metrics import SSIM_C1, SSIM_C2


def softmax_row(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def naive_channel(z, p):
    """Loops over query and key channels; no batched matmuls."""
    d, h, w = z.shape
    feat = z.reshape(d, h * w)
    q = np.array([sum(p["wq"][i, j] * feat[j] for j in range(d)) for i in range(d)])
    k = np.array([sum(p["wk"][i, j] * feat[j] for j in range(d)) for i in range(d)])
    v = np.array([sum(p["wv"][i, j] * feat[j] for j in range(d)) for i in range(d)])
    attn = np.zeros((d, d))
    for i in range(d):
        logits = np.array([np.dot(q[i], k[j]) / np.sqrt(h * w) for j in range(d)])
        attn[i] = softmax_row(logits)
    mixed = np.array([sum(attn[i, j] * v[j] for j in range(d)) for i in range(d)])
    out = np.array([sum(p["wo"][i, j] * mixed[j] for j in range(d)) + p["bo"][i] for i in range(d)])
    return out.reshape(d, h, w), attn


def naive_spatial(z, p, s):
    """Explicit s×s block means, then one query position at a time."""
    d, h, w = z.shape
    pooled = np.zeros((d, h // s, w // s))
    for r in range(h // s):
        for c in range(w // s):
            pooled[:, r, c] = z[:, r * s : (r + 1) * s, c * s : (c + 1) * s].mean(axis=(1, 2))
    queries = [p["wq"] @ z[:, r, c] for r in range(h) for c in range(w)]
    keys = [p["wk"] @ pooled[:, r, c] for r in range(h // s) for c in range(w // s)]
    values = [p["wv"] @ pooled[:, r, c] for r in range(h // s) for c in range(w // s)]
    attn = np.zeros((h * w, len(keys)))
    out = np.zeros((d, h, w))
    for n, q in enumerate(queries):
        attn[n] = softmax_row(np.array([np.dot(q, k) / np.sqrt(d) for k in keys]))
        mixed = sum(a * v for a, v in zip(attn[n], values))
        out[:, n // w, n % w] = p["wo"] @ mixed + p["bo"]
    return out, attn


def brute_ssim(a, b, win=8):
    """One explicit window at a time; statistics from numpy reductions."""
    vals = []
    for r in range(a.shape[0] - win + 1):
        for c in range(a.shape[1] - win + 1):
            x, y = a[r : r + win, c : c + win].ravel(), b[r : r + win, c : c + win].ravel()
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            cxy = ((x - mx) * (y - my)).mean()
            num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
            vals.append(num / ((mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)))
    return float(np.mean(vals))


def brute_force_match(logits, gt, null_label):
    """Minimum mean cross-entropy over every permutation of the null-padded labels."""
    k = logits.shape[0]
    padded = sorted(gt) + [null_label] * (k - len(gt))
    logp = log_softmax(logits)
    return min(-sum(logp[i, lab] for i, lab in enumerate(perm)) / k for perm in itertools.permutations(padded))
