"""Novelty-weighted combination of the two intent losses and the joint objective."""

import numpy as np

DEFAULT_GAMMA = 0.01


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def pointwise_intent_weight(alpha):
    """Weight on the preference loss for a point-wise example: its item's novelty."""
    return np.asarray(alpha, dtype=float)


def pairwise_intent_weight(alpha_pos, alpha_neg):
    return _sigmoid(np.asarray(alpha_pos) - np.asarray(alpha_neg))


def novelty_weighted_pointwise(loss_pref, loss_pop, alpha):
    a = pointwise_intent_weight(alpha)
    return a * loss_pref + (1.0 - a) * loss_pop


def novelty_weighted_pairwise(loss_pref, loss_pop, alpha_pos, alpha_neg):
    w = pairwise_intent_weight(alpha_pos, alpha_neg)
    return w * loss_pref + (1.0 - w) * loss_pop


def joint_loss(loss_rec, loss_ss, gamma=DEFAULT_GAMMA):
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return loss_rec + gamma * loss_ss
