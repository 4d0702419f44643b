"""Slow, obviously-correct reference implementations used as test oracles."""

import math
from itertools import combinations

import numpy as np


def brute_silhouette(X, y):
    n = len(y)
    out = []
    for i in range(n):
        same = [j for j in range(n) if y[j] == y[i] and j != i]
        if not same:
            out.append(0.0)
            continue
        dist = lambda j: math.sqrt(sum((X[i][t] - X[j][t]) ** 2 for t in range(len(X[i]))))  # noqa: E731
        a = sum(dist(j) for j in same) / len(same)
        b = min(
            sum(dist(j) for j in range(n) if y[j] == c) / sum(1 for j in range(n) if y[j] == c)
            for c in set(y) if c != y[i]
        )
        out.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return out


def brute_ari(u, v):
    """Pair counting straight from the definition."""
    pairs = list(combinations(range(len(u)), 2))
    both = sum(1 for i, j in pairs if u[i] == u[j] and v[i] == v[j])
    su = sum(1 for i, j in pairs if u[i] == u[j])
    sv = sum(1 for i, j in pairs if v[i] == v[j])
    expected = su * sv / len(pairs)
    top = (su + sv) / 2
    if top == expected:
        return 1.0
    return (both - expected) / (top - expected)


def brute_knn(train_X, train_y, test_X, k, tau):
    preds = []
    for x in test_X:
        sims = [float(np.dot(x, t)) for t in train_X]
        order = sorted(range(len(sims)), key=lambda j: (-sims[j], j))[:k]
        votes = {}
        for j in order:
            votes[train_y[j]] = votes.get(train_y[j], 0.0) + math.exp(sims[j] / tau)
        best = max(votes.values())
        preds.append(min(c for c, w in votes.items() if w == best))
    return preds
