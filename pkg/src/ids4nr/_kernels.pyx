# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Twin of ``_fallback.py``; both must return identical results.  Built with
``-ffp-contract=off`` so float arithmetic follows the same rounding sequence
as the NumPy reference.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt, sqrtf
from libc.stdint cimport int64_t, uint8_t, uint64_t

ctypedef fused real_t:
    float
    double


cdef inline uint64_t mix64(uint64_t seed, uint64_t stream, uint64_t counter) nogil:
    cdef uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL + counter * 0xD1B54A32D192ED03ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def kcore_mask(const int64_t[:] users, const int64_t[:] items, Py_ssize_t n_users,
               Py_ssize_t n_items, Py_ssize_t k):
    """Queue-based peeling; returns the keep mask over the edge list."""
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t e, j, node, head = 0, tail = 0
    udeg_a = np.zeros(n_users, dtype=np.int64)
    ideg_a = np.zeros(n_items, dtype=np.int64)
    keep_a = np.ones(n, dtype=np.uint8)
    cdef int64_t[:] udeg = udeg_a
    cdef int64_t[:] ideg = ideg_a
    cdef uint8_t[:] keep = keep_a
    for e in range(n):
        udeg[users[e]] += 1
        ideg[items[e]] += 1

    # adjacency: edges per node, users occupy ids [0, n_users)
    cdef Py_ssize_t n_nodes = n_users + n_items
    ptr_a = np.zeros(n_nodes + 1, dtype=np.int64)
    cdef int64_t[:] ptr = ptr_a
    for e in range(n):
        ptr[users[e] + 1] += 1
        ptr[n_users + items[e] + 1] += 1
    for j in range(n_nodes):
        ptr[j + 1] += ptr[j]
    fill_a = ptr_a[:-1].copy()
    adj_a = np.empty(2 * n, dtype=np.int64)
    cdef int64_t[:] fill = fill_a
    cdef int64_t[:] adj = adj_a
    for e in range(n):
        adj[fill[users[e]]] = e
        fill[users[e]] += 1
        adj[fill[n_users + items[e]]] = e
        fill[n_users + items[e]] += 1

    queue_a = np.empty(n_nodes, dtype=np.int64)
    dead_a = np.zeros(n_nodes, dtype=np.uint8)
    cdef int64_t[:] queue = queue_a
    cdef uint8_t[:] dead = dead_a
    for j in range(n_users):
        if udeg[j] < k:
            dead[j] = 1
            queue[tail] = j
            tail += 1
    for j in range(n_items):
        if ideg[j] < k:
            dead[n_users + j] = 1
            queue[tail] = n_users + j
            tail += 1
    while head < tail:
        node = queue[head]
        head += 1
        for j in range(ptr[node], ptr[node + 1]):
            e = adj[j]
            if not keep[e]:
                continue
            keep[e] = 0
            udeg[users[e]] -= 1
            ideg[items[e]] -= 1
            if not dead[users[e]] and udeg[users[e]] < k:
                dead[users[e]] = 1
                queue[tail] = users[e]
                tail += 1
            if not dead[n_users + items[e]] and ideg[items[e]] < k:
                dead[n_users + items[e]] = 1
                queue[tail] = n_users + items[e]
                tail += 1
    return keep_a.astype(bool)


cdef inline bint contains(const int64_t[:] indices, int64_t lo, int64_t end,
                          int64_t x) nogil:
    cdef int64_t mid, hi = end
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and indices[lo] == x


def sample_negatives(const int64_t[:] indptr, const int64_t[:] indices,
                     const int64_t[:] users, Py_ssize_t count, Py_ssize_t n_items,
                     const uint8_t[:] allowed, uint64_t seed):
    cdef Py_ssize_t n = users.shape[0]
    out_a = np.full((n, count), -1, dtype=np.int64)
    cdef int64_t[:, :] out = out_a
    cdef Py_ssize_t b, j, filled
    cdef uint64_t attempt
    cdef int64_t cand, u
    cdef bint bad
    with nogil:
        for b in range(n):
            u = users[b]
            filled = 0
            attempt = 0
            while filled < count:
                cand = <int64_t>(mix64(seed, <uint64_t>b, attempt) % <uint64_t>n_items)
                attempt += 1
                if not allowed[cand]:
                    continue
                if contains(indices, indptr[u], indptr[u + 1], cand):
                    continue
                bad = False
                for j in range(filled):
                    if out[b, j] == cand:
                        bad = True
                        break
                if bad:
                    continue
                out[b, filled] = cand
                filled += 1
    return out_a


def sample_disjoint(const int64_t[:] anchors, const int64_t[:] val_indptr,
                    const int64_t[:] val_indices, const uint8_t[:] allowed,
                    uint64_t seed, int64_t stream_offset, Py_ssize_t cap):
    cdef Py_ssize_t n = anchors.shape[0]
    cdef Py_ssize_t n_items = val_indptr.shape[0] - 1
    out_a = np.full(n, -1, dtype=np.int64)
    cdef int64_t[:] out = out_a
    cdef Py_ssize_t b, t, c
    cdef int64_t a, cand, best, best_shared, s
    with nogil:
        for b in range(n):
            a = anchors[b]
            for t in range(cap):
                cand = <int64_t>(mix64(seed, <uint64_t>(b + stream_offset), <uint64_t>t)
                                 % <uint64_t>n_items)
                if allowed[cand] and cand != a and _shared(val_indptr, val_indices, a, cand) == 0:
                    out[b] = cand
                    break
            if out[b] >= 0:
                continue
            best = -1
            best_shared = 0
            for c in range(n_items):
                if not allowed[c] or c == a:
                    continue
                s = _shared(val_indptr, val_indices, a, c)
                if best < 0 or s < best_shared:
                    best = c
                    best_shared = s
            out[b] = best
    return out_a


cdef inline int64_t _shared(const int64_t[:] ptr, const int64_t[:] idx,
                            int64_t a, int64_t c) nogil:
    # both value lists sorted ascending; count the intersection by merging
    cdef int64_t i = ptr[a], ie = ptr[a + 1], j = ptr[c], je = ptr[c + 1], s = 0
    while i < ie and j < je:
        if idx[i] == idx[j]:
            s += 1
            i += 1
            j += 1
        elif idx[i] < idx[j]:
            i += 1
        else:
            j += 1
    return s


def topn(const real_t[:, :] scores, const int64_t[:] users, const int64_t[:] indptr,
         const int64_t[:] indices, Py_ssize_t n):
    cdef Py_ssize_t n_rows = scores.shape[0], n_cols = scores.shape[1]
    out_a = np.full((n_rows, n), -1, dtype=np.int64)
    cdef int64_t[:, :] out = out_a
    best_a = np.empty(max(n, 1), dtype=np.float64)
    cdef double[:] best = best_a
    cdef Py_ssize_t r, c, size, pos, p
    cdef int64_t u, ti, te
    cdef double s
    with nogil:
        for r in range(n_rows):
            u = users[r]
            ti = indptr[u]
            te = indptr[u + 1]
            size = 0
            for c in range(n_cols):
                # train items are sorted, so walk the pointer alongside c
                while ti < te and indices[ti] < c:
                    ti += 1
                if ti < te and indices[ti] == c:
                    continue
                s = scores[r, c]
                if size == n and not (s > best[n - 1]):
                    continue
                # insertion keeps (score desc, index asc); equal scores stay behind
                pos = size if size < n else n - 1
                while pos > 0 and s > best[pos - 1]:
                    if pos < n:
                        best[pos] = best[pos - 1]
                        out[r, pos] = out[r, pos - 1]
                    pos -= 1
                best[pos] = s
                out[r, pos] = c
                if size < n:
                    size += 1
    return out_a


def scatter_add_rows(real_t[:, :] target, const int64_t[:] rows, const real_t[:, :] values):
    cdef Py_ssize_t n = rows.shape[0], d = target.shape[1], i, j
    cdef int64_t r
    with nogil:
        for i in range(n):
            r = rows[i]
            for j in range(d):
                target[r, j] = target[r, j] + values[i, j]


def adam_update(real_t[:] theta, const real_t[:] grad, real_t[:] m, real_t[:] v,
                double lr, double beta1, double beta2, double eps, long step):
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    # every scalar is rounded to the array dtype first, as NumPy does
    cdef real_t b1 = <real_t>beta1, c1 = <real_t>(1.0 - beta1)
    cdef real_t b2 = <real_t>beta2, c2 = <real_t>(1.0 - beta2)
    cdef real_t rs = <real_t>sqrt(bc2), st = <real_t>(lr / bc1), ep = <real_t>eps
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef real_t g, root
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = b1 * m[i] + c1 * g
            v[i] = b2 * v[i] + c2 * g * g
            if real_t is float:
                root = sqrtf(v[i])
            else:
                root = sqrt(v[i])
            theta[i] = theta[i] - st * m[i] / (root / rs + ep)
