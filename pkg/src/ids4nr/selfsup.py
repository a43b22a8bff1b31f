"""Collaborative-content feature self-supervision for items.

A content VAE maps an item's concatenated attribute embeddings ``x`` to a
Gaussian latent ``z`` (encoder) and back (decoder); a dot-product
discriminator pulls ``z`` toward the item's own collaborative embedding and
away from one of an attribute-disjoint item.  For cold items the latent mean
stands in for the missing collaborative embedding.

Batched functions take arrays with a leading batch axis; the single-item
operations accept 1-D vectors as well.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .errors import ColdItemWithoutAttributes

MIM_REJECTION_CAP = 100


@dataclass
class SelfSupModule:
    """Encoder ``x -> tanh -> (mu, logvar)`` and decoder ``z -> tanh -> x'``.

    Weight matrices are stored (out, in).
    """

    enc_w: np.ndarray
    enc_b: np.ndarray
    mu_w: np.ndarray
    mu_b: np.ndarray
    lv_w: np.ndarray
    lv_b: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @staticmethod
    def shapes(content_dim, dim):
        return {
            "enc_w": (dim, content_dim), "enc_b": (dim,),
            "mu_w": (dim, dim), "mu_b": (dim,),
            "lv_w": (dim, dim), "lv_b": (dim,),
            "dec_w": (dim, dim), "dec_b": (dim,),
            "out_w": (content_dim, dim), "out_b": (content_dim,),
        }

    @classmethod
    def zeros(cls, content_dim, dim, dtype=np.float64):
        return cls(**{k: np.zeros(s, dtype=dtype)
                      for k, s in cls.shapes(content_dim, dim).items()})

    @property
    def content_dim(self):
        return self.enc_w.shape[1]

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _encode(module, x):
    h = np.tanh(x @ module.enc_w.T + module.enc_b)
    mu = h @ module.mu_w.T + module.mu_b
    logvar = h @ module.lv_w.T + module.lv_b
    return h, mu, logvar


def encode_content(module: SelfSupModule, x):
    """Return ``(mu, sigma)`` of the approximate posterior for content ``x``."""
    _, mu, logvar = _encode(module, np.asarray(x))
    return mu, np.exp(0.5 * logvar)


def reparameterize(mu, sigma, eps):
    return mu + eps * sigma


def decode_latent(module: SelfSupModule, z):
    """Mean reconstruction under a unit-variance Gaussian likelihood."""
    g = np.tanh(np.asarray(z) @ module.dec_w.T + module.dec_b)
    return g @ module.out_w.T + module.out_b


def kl_term(mu, sigma):
    """KL(N(mu, sigma^2) || N(0, I)), summed over the last axis."""
    var = sigma * sigma
    return 0.5 * np.sum(var + mu * mu - 1.0 - np.log(var), axis=-1)


def vae_loss(x, mu, sigma, x_rec):
    """Negative ELBO: KL to the standard normal prior plus 0.5 * squared error."""
    diff = np.asarray(x) - np.asarray(x_rec)
    return kl_term(mu, sigma) + 0.5 * np.sum(diff * diff, axis=-1)


def mim_loss(z, q_pos, q_neg):
    """-log sigmoid(z.q_pos - z.q_neg), summed over a leading batch axis."""
    margin = np.sum(np.asarray(z) * (np.asarray(q_pos) - np.asarray(q_neg)), axis=-1)
    return float(np.sum(np.logaddexp(0.0, -margin)))


def sample_mim_negatives(item_attrs, anchors, rng, allowed=None, cap=MIM_REJECTION_CAP):
    """For each anchor item, an item sharing none of its attribute values.

    Rejection sampling with ``cap`` draws; past the cap, the allowed item
    with the fewest shared values (lowest index on ties).
    """
    n_items = item_attrs.num_entities
    if allowed is None:
        allowed = np.ones(n_items, dtype=bool)
    if int(np.count_nonzero(allowed)) < 2:
        raise ValueError("need at least two candidate items for MIM negatives")
    seed = int(rng.integers(0, 2**63 - 1))
    return kernels.sample_disjoint(anchors, item_attrs.indptr, item_attrs.value_ids,
                                   allowed, seed, cap=cap)


def sample_mim_negative(dataset, anchor_item, rng, allowed=None):
    if dataset.item_attrs.counts()[anchor_item] == 0:
        raise ValueError(f"anchor item {anchor_item} has no attribute values")
    return int(sample_mim_negatives(dataset.item_attrs, [anchor_item], rng, allowed)[0])


def self_supervision_loss(module: SelfSupModule, x, q_pos, q_neg, eps):
    """Batch mean of ``vae_loss + mim_loss`` (forward only)."""
    loss, _ = self_supervision_forward(module, x, q_pos, q_neg, eps)
    return loss


def self_supervision_forward(module, x, q_pos, q_neg, eps):
    h, mu, logvar = _encode(module, x)
    sigma = np.exp(0.5 * logvar)
    z = mu + eps * sigma
    g = np.tanh(z @ module.dec_w.T + module.dec_b)
    x_rec = g @ module.out_w.T + module.out_b
    diff = x_rec - x
    dq = q_pos - q_neg
    margin = np.sum(z * dq, axis=1)
    per_item = (0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1)
                + 0.5 * np.sum(diff * diff, axis=1)
                + np.logaddexp(0.0, -margin))
    cache = (x, h, mu, logvar, sigma, z, g, diff, dq, margin, eps)
    return float(per_item.mean()), cache


def self_supervision_backward(module, grads, cache, scale=1.0):
    """Accumulate parameter gradients of ``scale * loss`` into ``grads``.

    Returns the gradients w.r.t. ``x``, ``q_pos`` and ``q_neg``.
    """
    x, h, mu, logvar, sigma, z, g, diff, dq, margin, eps = cache
    c = scale / len(x)
    d_rec = c * diff
    grads.out_w += d_rec.T @ g
    grads.out_b += d_rec.sum(axis=0)
    da3 = (d_rec @ module.out_w) * (1.0 - g * g)
    grads.dec_w += da3.T @ z
    grads.dec_b += da3.sum(axis=0)
    dz = da3 @ module.dec_w

    # d/dm softplus(-m) = -sigmoid(-m)
    dm = -c * 0.5 * (1.0 - np.tanh(0.5 * margin))
    dz += dm[:, None] * dq
    dq_pos = dm[:, None] * z
    dq_neg = -dq_pos

    dmu = dz + c * mu
    dlv = 0.5 * dz * eps * sigma + 0.5 * c * (np.exp(logvar) - 1.0)
    grads.mu_w += dmu.T @ h
    grads.mu_b += dmu.sum(axis=0)
    grads.lv_w += dlv.T @ h
    grads.lv_b += dlv.sum(axis=0)
    dh = dmu @ module.mu_w + dlv @ module.lv_w
    da1 = dh * (1.0 - h * h)
    grads.enc_w += da1.T @ x
    grads.enc_b += da1.sum(axis=0)
    dx = da1 @ module.enc_w - d_rec
    return dx, dq_pos, dq_neg


def impute_cold_collaborative(module: SelfSupModule, x):
    """Latent mean used as a cold item's collaborative embedding."""
    x = np.asarray(x)
    if x.shape[-1] == 0 or module.content_dim == 0:
        raise ColdItemWithoutAttributes("cold item has no attribute features to impute from")
    mu, _ = encode_content(module, x)
    return mu
