"""Loop-based reference implementations used by the tests."""

import itertools
import math
from fractions import Fraction

import numpy as np


def joint_loops(p1, p2):
    n, k = p1.shape
    P = [[0.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            s = 0.0
            for t in range(n):
                s += p1[t][i] * p2[t][j]
            P[i][j] = s / n
    return np.array([[(P[i][j] + P[j][i]) / 2 for j in range(k)] for i in range(k)])


def ccl_loops(P, eta):
    k = len(P)
    row = [sum(P[i][j] for j in range(k)) for i in range(k)]
    col = [sum(P[i][j] for i in range(k)) for j in range(k)]
    out = 0.0
    for i in range(k):
        for j in range(k):
            if P[i][j] < 1e-16:
                continue
            lp = math.log(P[i][j])
            li = math.log(max(row[i], 1e-16))
            lj = math.log(max(col[j], 1e-16))
            out -= P[i][j] * (lp - (1 + eta) * li - (1 + eta) * lj)
    return out


def acc_enumerate(pred, truth):
    """Best accuracy over every injective map from clusters to labels."""
    clusters = sorted(set(pred))
    classes = sorted(set(truth))
    pool = classes + [None] * max(0, len(clusters) - len(classes))
    best = 0
    for perm in itertools.permutations(pool, len(clusters)):
        m = dict(zip(clusters, perm))
        best = max(best, sum(m[p] == t for p, t in zip(pred, truth)))
    return best / len(pred)


def ari_pairs(pred, truth):
    n = len(pred)
    a = b = c = d = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_p = pred[i] == pred[j]
            same_t = truth[i] == truth[j]
            a += same_p and same_t
            b += same_p and not same_t
            c += same_t and not same_p
            d += not same_p and not same_t
    pairs = n * (n - 1) // 2
    expected = Fraction((a + b) * (a + c), pairs) if pairs else Fraction(0)
    top = Fraction((a + b) + (a + c), 2)
    if top == expected:
        return 1.0
    return float((a - expected) / (top - expected))


def nmi_counts(pred, truth):
    n = len(pred)
    cp, ct, cj = {}, {}, {}
    for p, t in zip(pred, truth):
        cp[p] = cp.get(p, 0) + 1
        ct[t] = ct.get(t, 0) + 1
        cj[p, t] = cj.get((p, t), 0) + 1
    if len(cp) == 1 and len(ct) == 1:
        return 1.0
    hp = -sum(c / n * math.log(c / n) for c in cp.values())
    ht = -sum(c / n * math.log(c / n) for c in ct.values())
    if hp == 0 or ht == 0:
        return 0.0
    mi = sum(c / n * math.log(c * n / (cp[p] * ct[t])) for (p, t), c in cj.items())
    return mi / math.sqrt(hp * ht)
