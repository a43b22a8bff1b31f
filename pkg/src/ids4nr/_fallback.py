"""Pure NumPy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` and the two must agree
bit for bit; ``tests/test_kernels.py`` holds them to that.  Random draws come
from a counter-based hash (splitmix64 finalizer over ``seed``, ``stream`` and
``counter``), so the vectorized rounds below consume exactly the same stream
as the sequential compiled loops.
"""

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STEP = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(seed, stream, counter):
    """Hash ``(seed, stream, counter)`` to a uniform uint64 (vectorized)."""
    seed = np.asarray(seed, dtype=np.uint64)
    stream = np.asarray(stream, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    z = seed + stream * _GOLDEN + counter * _STEP
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _draw(seed, stream, counter, n):
    return (mix64(seed, stream, counter) % np.uint64(n)).astype(np.int64)


def kcore_mask(users, items, n_users, n_items, k):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    keep = np.ones(len(users), dtype=bool)
    while True:
        udeg = np.bincount(users[keep], minlength=n_users)
        ideg = np.bincount(items[keep], minlength=n_items)
        bad = keep & ((udeg[users] < k) | (ideg[items] < k))
        if not bad.any():
            return keep
        keep &= ~bad


def _train_keys(indptr, indices, n_items):
    rows = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    return rows * n_items + np.asarray(indices, dtype=np.int64)


def sample_negatives(indptr, indices, users, count, n_items, allowed, seed):
    users = np.asarray(users, dtype=np.int64)
    allowed = np.asarray(allowed, dtype=bool)
    keys = _train_keys(indptr, indices, n_items)
    out = np.full((len(users), count), -1, dtype=np.int64)
    filled = np.zeros(len(users), dtype=np.int64)
    attempt = np.zeros(len(users), dtype=np.uint64)
    pending = np.arange(len(users), dtype=np.int64)
    while len(pending):
        cand = _draw(seed, pending, attempt[pending], n_items)
        attempt[pending] += np.uint64(1)
        key = users[pending] * n_items + cand
        if len(keys):
            pos = np.minimum(np.searchsorted(keys, key), len(keys) - 1)
            in_train = keys[pos] == key
        else:
            in_train = np.zeros(len(key), dtype=bool)
        dup = (out[pending] == cand[:, None]).any(axis=1)
        ok = allowed[cand] & ~in_train & ~dup
        rows = pending[ok]
        out[rows, filled[rows]] = cand[ok]
        filled[rows] += 1
        pending = pending[filled[pending] < count]
    return out


def sample_disjoint(anchors, val_indptr, val_indices, allowed, seed,
                    stream_offset, cap):
    anchors = np.asarray(anchors, dtype=np.int64)
    allowed = np.asarray(allowed, dtype=bool)
    n_items = len(val_indptr) - 1
    n_vals = int(val_indices.max()) + 1 if len(val_indices) else 1
    inc = np.zeros((n_items, n_vals), dtype=bool)
    rows = np.repeat(np.arange(n_items), np.diff(val_indptr))
    inc[rows, val_indices] = True

    out = np.full(len(anchors), -1, dtype=np.int64)
    streams = np.arange(len(anchors), dtype=np.int64) + stream_offset
    pending = np.arange(len(anchors), dtype=np.int64)
    for t in range(cap):
        if not len(pending):
            break
        cand = _draw(seed, streams[pending], t, n_items)
        shared = (inc[anchors[pending]] & inc[cand]).any(axis=1)
        ok = allowed[cand] & (cand != anchors[pending]) & ~shared
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    for b in pending:
        shared = inc.astype(np.int64) @ inc[anchors[b]].astype(np.int64)
        shared = np.where(allowed, shared, np.iinfo(np.int64).max)
        shared[anchors[b]] = np.iinfo(np.int64).max
        out[b] = int(np.argmin(shared))
    return out


def topn(scores, users, indptr, indices, n):
    scores = np.array(scores, dtype=np.float64, copy=True)
    users = np.asarray(users, dtype=np.int64)
    for r, u in enumerate(users):
        scores[r, indices[indptr[u]:indptr[u + 1]]] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")[:, :n].astype(np.int64)
    # rows with fewer than n candidates are padded with -1
    order[np.isneginf(np.take_along_axis(scores, order, axis=1))] = -1
    return order


def scatter_add_rows(target, rows, values):
    np.add.at(target, np.asarray(rows, dtype=np.int64), values)


def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, step):
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    # python-float scalars keep the arithmetic in the array dtype
    denom = np.sqrt(v) / math.sqrt(bc2) + eps
    theta -= (lr / bc1) * m / denom
