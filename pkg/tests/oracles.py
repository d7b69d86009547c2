"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools
import math
from fractions import Fraction

import numpy as np


def conv2d_loop(x, w, stride=(1, 1), padding=(0, 0), groups=1):
    cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    xp = np.zeros((cin, h + 2 * padding[0], wd + 2 * padding[1]))
    xp[:, padding[0]:padding[0] + h, padding[1]:padding[1] + wd] = x
    ho = (xp.shape[1] - kh) // stride[0] + 1
    wo = (xp.shape[2] - kw) // stride[1] + 1
    og = cout // groups
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        g = o // og
        for c in range(cg):
            for i in range(ho):
                for j in range(wo):
                    for a in range(kh):
                        for b in range(kw):
                            out[o, i, j] += w[o, c, a, b] * xp[g * cg + c, i * stride[0] + a, j * stride[1] + b]
    return out


def zoh_direct(a, b, delta):
    """A_bar, B_bar from the textbook formula with an explicit division."""
    da = delta * a
    return math.exp(da), (math.exp(da) - 1.0) / da * delta * b


def scan_unrolled(x, delta, a, bmat, cmat, h0=None):
    """y_k = sum_j C_k (prod_{i=j+1..k} Abar_i) Bbar_j x_j (+ decayed h0), one scalar at a time.

    x, delta: (L, D); a: (D, N); bmat, cmat: (L, N).
    """
    length, d = x.shape
    n = a.shape[1]
    y = np.zeros((length, d))
    for ch in range(d):
        for k in range(length):
            for s in range(n):
                total = 0.0
                for j in range(k + 1):
                    decay = 1.0
                    for i in range(j + 1, k + 1):
                        decay *= math.exp(delta[i, ch] * a[ch, s])
                    _, bbar = zoh_direct(a[ch, s], bmat[j, s], delta[j, ch])
                    total += decay * bbar * x[j, ch]
                if h0 is not None:
                    decay = 1.0
                    for i in range(k + 1):
                        decay *= math.exp(delta[i, ch] * a[ch, s])
                    total += decay * h0[ch, s]
                y[k, ch] += cmat[k, s] * total
    return y


def softplus(v):
    return math.log1p(math.exp(v)) if v < 30 else v


def grid_order(h, w, name):
    cells = [(r, c) for r in range(h) for c in range(w)]
    col_major = [(r, c) for c in range(w) for r in range(h)]
    return {"lr": cells, "tb": col_major, "rl": cells[::-1], "bt": col_major[::-1]}[name]


# ---------------------------------------------------------------- metrics

def subset_accuracy(p, t):
    hits = sum(all(a == b for a, b in zip(pr, tr)) for pr, tr in zip(p.tolist(), t.tolist()))
    return float(Fraction(hits, len(p)))


def hamming(p, t):
    wrong = sum(a != b for pr, tr in zip(p.tolist(), t.tolist()) for a, b in zip(pr, tr))
    return float(Fraction(wrong, len(p) * len(p[0])))


def f1(p, t):
    """Precision/recall form in exact rationals."""
    n, c = p.shape
    per, support = [], []
    for j in range(c):
        tp = sum(1 for i in range(n) if p[i, j] and t[i, j])
        fp = sum(1 for i in range(n) if p[i, j] and not t[i, j])
        fn = sum(1 for i in range(n) if not p[i, j] and t[i, j])
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        per.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
        support.append(tp + fn)
    m = sum(support)
    weighted = float(sum(f * s for f, s in zip(per, support)) / m) if m else None
    return [float(f) for f in per], float(sum(per) / c), weighted


def challenge(p, t, w, normal):
    """Enumerate (true, predicted) pairs record by record, in exact rationals."""
    wq = [[Fraction(float(v)) for v in row] for row in w]

    def score(pred):
        total = Fraction(0)
        for i in range(len(t)):
            truth = {j for j in range(t.shape[1]) if t[i, j]} or {normal}
            guess = {j for j in range(t.shape[1]) if pred[i, j]} or {normal}
            union = len(truth | guess)
            for a in truth:
                for b in guess:
                    total += wq[a][b] / union
        return total

    inactive = np.zeros_like(t)
    inactive[:, normal] = 1
    s_true, s_inactive = score(t), score(inactive)
    if s_true == s_inactive:
        return None
    return float((score(p) - s_inactive) / (s_true - s_inactive))


def auroc(scores, labels):
    c = scores.shape[1]
    vals = []
    for j in range(c):
        pos = [s for s, l in zip(scores[:, j], labels[:, j]) if l]
        neg = [s for s, l in zip(scores[:, j], labels[:, j]) if not l]
        if not pos or not neg:
            continue
        wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
        vals.append(wins / (len(pos) * len(neg)))
    return sum(vals) / len(vals) if vals else None
