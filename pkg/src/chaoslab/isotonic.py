"""Least-squares projection onto nondecreasing sequences (pool adjacent violators)."""
from __future__ import annotations

import numpy as np


def pava(y, weights=None):
    """Weighted isotonic regression of ``y`` (nondecreasing fit).

    >>> pava([2.0, 1.0, 3.0])
    array([1.5, 1.5, 3. ])
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n <= 1:
        return y.copy()
    if np.all(np.diff(y) >= 0):
        return y.copy()
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    # block stack: value, weight, length
    val = np.empty(n)
    wt = np.empty(n)
    length = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        val[top], wt[top], length[top] = y[i], w[i], 1
        while top > 0 and val[top - 1] > val[top]:
            tw = wt[top - 1] + wt[top]
            val[top - 1] = (wt[top - 1] * val[top - 1] + wt[top] * val[top]) / tw
            wt[top - 1] = tw
            length[top - 1] += length[top]
            top -= 1
    return np.repeat(val[: top + 1], length[: top + 1])


def is_nondecreasing(u, strict=False):
    d = np.diff(np.asarray(u, dtype=float))
    return bool(np.all(d > 0)) if strict else bool(np.all(d >= 0))
