"""Popularity/preference intent disentanglement.

Each feature of an entity (collaborative embedding first, then one embedding
per attribute field) is soft-assigned to a popularity and a preference
prototype by a two-way softmax over dot products.  The gated sums pass through
one affine map per intent.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np


@dataclass
class FeatureBundle:
    """Feature list ``[a0, a1, ..., ak]``; ``a0`` is the collaborative embedding."""

    features: np.ndarray  # (k + 1, D)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features))
        if self.features.shape[0] < 1:
            raise ValueError("a feature bundle needs at least the collaborative feature")

    @classmethod
    def from_parts(cls, collaborative, attributes=()):
        return cls(np.vstack([collaborative, *attributes]))

    @property
    def k(self):
        return self.features.shape[0] - 1


@dataclass
class IntentModule:
    c_pop: np.ndarray
    c_pref: np.ndarray
    w_pop: np.ndarray
    b_pop: np.ndarray
    w_pref: np.ndarray
    b_pref: np.ndarray

    @staticmethod
    def shapes(dim):
        return {"c_pop": (dim,), "c_pref": (dim,), "w_pop": (dim, dim), "b_pop": (dim,),
                "w_pref": (dim, dim), "b_pref": (dim,)}

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def swapped(self):
        return IntentModule(self.c_pref, self.c_pop, self.w_pref, self.b_pref,
                            self.w_pop, self.b_pop)


class DisentangledRepr(NamedTuple):
    pop: np.ndarray
    pref: np.ndarray


def _features(bundle):
    return bundle.features if isinstance(bundle, FeatureBundle) else np.asarray(bundle)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cluster_weights(module: IntentModule, bundle):
    """Soft assignment of every feature: returns ``(w_pop, w_pref)``, each of
    shape ``(..., k + 1)``, summing to one per feature."""
    f = _features(bundle)
    w_pop = _sigmoid(f @ module.c_pop - f @ module.c_pref)
    return w_pop, 1.0 - w_pop


def aggregate_intent(module: IntentModule, bundle, weights) -> DisentangledRepr:
    f = _features(bundle)
    w_pop, w_pref = weights
    h_pop = np.sum(w_pop[..., None] * f, axis=-2)
    h_pref = np.sum(w_pref[..., None] * f, axis=-2)
    return DisentangledRepr(h_pop @ module.w_pop.T + module.b_pop,
                            h_pref @ module.w_pref.T + module.b_pref)


def disentangle(module: IntentModule, bundle) -> DisentangledRepr:
    return aggregate_intent(module, bundle, cluster_weights(module, bundle))


def mean_representation(bundle):
    """Intent-free fallback: the plain average of all features."""
    return np.mean(_features(bundle), axis=-2)


def disentangle_forward(module, feats):
    """Batched forward over ``feats`` of shape (B, K, D)."""
    w = _sigmoid(feats @ module.c_pop - feats @ module.c_pref)
    h_pop = np.einsum("bk,bkd->bd", w, feats)
    h_pref = np.einsum("bk,bkd->bd", 1.0 - w, feats)
    pop = h_pop @ module.w_pop.T + module.b_pop
    pref = h_pref @ module.w_pref.T + module.b_pref
    return pop, pref, (feats, w, h_pop, h_pref)


def disentangle_backward(module, grads, cache, d_pop, d_pref):
    """Accumulate parameter gradients into ``grads``; return d feats."""
    feats, w, h_pop, h_pref = cache
    grads.w_pop += d_pop.T @ h_pop
    grads.b_pop += d_pop.sum(axis=0)
    grads.w_pref += d_pref.T @ h_pref
    grads.b_pref += d_pref.sum(axis=0)
    dh_pop = d_pop @ module.w_pop
    dh_pref = d_pref @ module.w_pref
    d_feats = w[..., None] * dh_pop[:, None, :] + (1.0 - w)[..., None] * dh_pref[:, None, :]
    dw = np.einsum("bkd,bd->bk", feats, dh_pop - dh_pref)
    dt = dw * w * (1.0 - w)
    dc = np.einsum("bk,bkd->d", dt, feats)
    grads.c_pop += dc
    grads.c_pref -= dc
    d_feats += dt[..., None] * (module.c_pop - module.c_pref)
    return d_feats
