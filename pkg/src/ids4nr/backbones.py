"""Scoring heads and their losses.

All scores follow "higher is better": LFM is a dot product, NCF a NeuMF-style
logit, CML the negated squared Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("lfm", "ncf", "cml")
OBJECTIVE = {"lfm": "pointwise", "ncf": "pointwise", "cml": "pairwise"}


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "cml"
    ncf_tower_dims: tuple[int, ...] | None = None  # default (2D, D, D // 2)
    cml_margin: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"backbone must be one of {KINDS}, got {self.kind!r}")
        if self.cml_margin <= 0:
            raise ValueError("cml_margin must be positive")
        if self.ncf_tower_dims is not None and min(self.ncf_tower_dims) <= 0:
            raise ValueError("tower dims must be positive")

    @property
    def objective(self):
        return OBJECTIVE[self.kind]

    def tower(self, dim):
        if self.ncf_tower_dims is not None:
            dims = tuple(self.ncf_tower_dims)
            if dims[0] != 2 * dim:
                raise ValueError("the first NCF tower dim must be 2 * D")
            return dims
        return (2 * dim, dim, max(dim // 2, 1))


@dataclass
class NCFParams:
    """GMF fusion weights ``h_gmf`` (D), MLP tower layers, MLP fusion ``h_mlp``."""

    h_gmf: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    h_mlp: np.ndarray

    @staticmethod
    def shapes(dim, tower):
        shapes = {"h_gmf": (dim,)}
        for i in range(len(tower) - 1):
            shapes[f"w{i}"] = (tower[i + 1], tower[i])
            shapes[f"b{i}"] = (tower[i + 1],)
        shapes["h_mlp"] = (tower[-1],)
        return shapes

    @classmethod
    def from_arrays(cls, arrays):
        n = sum(1 for k in arrays if k.startswith("w"))
        return cls(arrays["h_gmf"], [arrays[f"w{i}"] for i in range(n)],
                   [arrays[f"b{i}"] for i in range(n)], arrays["h_mlp"])

    def arrays(self):
        out = {"h_gmf": self.h_gmf}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        out["h_mlp"] = self.h_mlp
        return out


def score_lfm(p, q):
    return np.sum(np.asarray(p) * np.asarray(q), axis=-1)


def _ncf_forward(params, p, q):
    gmf = p * q
    acts = [np.concatenate([p, q], axis=-1)]
    for w, b in zip(params.weights, params.biases):
        acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
    s = gmf @ params.h_gmf + acts[-1] @ params.h_mlp
    return s, (p, q, gmf, acts)


def score_ncf(params: NCFParams, p, q):
    s, _ = _ncf_forward(params, np.asarray(p), np.asarray(q))
    return s


def score_cml(p, q):
    d = np.asarray(p) - np.asarray(q)
    return -np.sum(d * d, axis=-1)


def score(kind, params, p, q):
    if kind == "lfm":
        return score_lfm(p, q)
    if kind == "ncf":
        return score_ncf(params, p, q)
    return score_cml(p, q)


def score_forward(kind, params, p, q):
    if kind == "ncf":
        return _ncf_forward(params, p, q)
    return score(kind, params, p, q), (p, q)


def score_backward(kind, params, grads, cache, ds):
    """Given d loss / d score (B,), return (dp, dq); NCF parameter
    gradients are accumulated into ``grads``."""
    if kind == "lfm":
        p, q = cache
        return ds[:, None] * q, ds[:, None] * p
    if kind == "cml":
        p, q = cache
        g = -2.0 * ds[:, None] * (p - q)
        return g, -g
    p, q, gmf, acts = cache
    grads.h_gmf += ds @ gmf
    grads.h_mlp += ds @ acts[-1]
    dgmf = ds[:, None] * params.h_gmf
    da = ds[:, None] * params.h_mlp
    for i in reversed(range(len(params.weights))):
        da = da * (acts[i + 1] > 0)
        grads.weights[i] += da.T @ acts[i]
        grads.biases[i] += da.sum(axis=0)
        da = da @ params.weights[i]
    d = p.shape[-1]
    return dgmf * q + da[:, :d], dgmf * p + da[:, d:]


def score_matrix(kind, params, P, Q, chunk=256):
    """All-pairs scores, shape (len(P), len(Q))."""
    if kind == "lfm":
        return P @ Q.T
    if kind == "cml":
        pp = np.sum(P * P, axis=1)[:, None]
        qq = np.sum(Q * Q, axis=1)[None, :]
        return -(pp - 2.0 * (P @ Q.T) + qq)
    d = P.shape[1]
    w0 = params.weights[0]
    # first tower layer splits over the concatenation
    up = P @ w0[:, :d].T + params.biases[0]
    iq = Q @ w0[:, d:].T
    out = np.empty((len(P), len(Q)), dtype=P.dtype)
    for s in range(0, len(P), chunk):
        sl = slice(s, s + chunk)
        a = np.maximum(up[sl, None, :] + iq[None, :, :], 0.0)
        for w, b in zip(params.weights[1:], params.biases[1:]):
            a = np.maximum(a @ w.T + b, 0.0)
        out[sl] = (P[sl] * params.h_gmf) @ Q.T + a @ params.h_mlp
    return out


def pointwise_loss(y, s):
    """Binary cross-entropy on logit ``s``: softplus(s) - y * s."""
    s = np.asarray(s, dtype=float)
    return np.logaddexp(0.0, s) - np.asarray(y) * s


def pointwise_grad(y, s):
    return 0.5 * (1.0 + np.tanh(0.5 * s)) - y


def pairwise_loss(s_pos, s_neg, margin=1.0):
    """Hinge: max(0, margin - (s_pos - s_neg))."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return np.maximum(0.0, margin - (np.asarray(s_pos) - np.asarray(s_neg)))


def regularize(params, lam):
    """``lam`` times the summed squared norm of the given arrays."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if isinstance(params, np.ndarray):
        params = [params]
    return lam * sum(float(np.sum(np.square(p))) for p in params)


def clip_to_unit_ball(table, skip=None):
    """In place: rescale rows with norm > 1 onto the unit sphere."""
    norms = np.sqrt(np.sum(table * table, axis=1))
    over = norms > 1.0
    if skip is not None:
        over &= ~skip
    if over.any():
        table[over] /= norms[over, None]
