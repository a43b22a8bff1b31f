"""Hot-kernel dispatch.

The compiled extension ``ids4nr._kernels`` is used when it imports; otherwise
the NumPy twins in ``ids4nr._fallback`` take over.  Set ``IDS4NR_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.

The wrappers normalize dtypes and memory layout so both backends see the same
inputs and return identical outputs.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("IDS4NR_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backend_module(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def _seed(seed):
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def kcore_mask(users, items, n_users, n_items, k, impl=None):
    """Boolean mask over the edge list that survives iterative k-core peeling."""
    impl = impl or _impl
    return impl.kcore_mask(_i64(users), _i64(items), int(n_users), int(n_items), int(k))


def sample_negatives(indptr, indices, users, count, n_items, allowed, seed, impl=None):
    """Draw ``count`` distinct allowed items per row that are absent from the
    row user's (sorted) CSR train list.  Callers check feasibility first."""
    impl = impl or _impl
    return impl.sample_negatives(_i64(indptr), _i64(indices), _i64(users), int(count),
                                 int(n_items), _u8(allowed), _seed(seed))


def sample_disjoint(anchors, val_indptr, val_indices, allowed, seed, stream_offset=0,
                    cap=100, impl=None):
    impl = impl or _impl
    return impl.sample_disjoint(_i64(anchors), _i64(val_indptr), _i64(val_indices),
                                _u8(allowed), _seed(seed), int(stream_offset), int(cap))


def topn(scores, users, indptr, indices, n, impl=None):
    """Top-``n`` columns per row by (score desc, column asc), skipping the
    row user's train items.  Rows with fewer candidates end in -1."""
    impl = impl or _impl
    scores = np.asarray(scores)
    if scores.dtype not in (np.float32, np.float64):
        scores = scores.astype(np.float64)
    scores = np.ascontiguousarray(scores)
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return impl.topn(scores, _i64(users), _i64(indptr), _i64(indices), int(n))


def scatter_add_rows(target, rows, values, impl=None):
    """In place: ``target[rows[i]] += values[i]`` with repeated rows summed in order."""
    impl = impl or _impl
    values = np.ascontiguousarray(values, dtype=target.dtype)
    impl.scatter_add_rows(target, _i64(rows), values.reshape(len(rows), -1))


def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, step, impl=None):
    """One in-place Adam step over flat contiguous arrays of a single dtype."""
    impl = impl or _impl
    impl.adam_update(theta, grad, m, v, float(lr), float(beta1), float(beta2),
                     float(eps), int(step))
