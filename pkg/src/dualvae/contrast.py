"""Neighborhood-contrastive representation constraint.

Each entity's positive partner under aspect ``a`` is its neighborhood
representation: the aspect-probability-weighted sum of its train-split
neighbors' latents from the other side. Negatives come from two pools, the
same entity's neighborhood representations under other aspects (keeps
aspects apart) and other in-batch entities' representations under the same
aspect (keeps entities apart). The temperature-scaled cosine InfoNCE loss
ties them together.

Entities with an empty train neighborhood have no meaningful positive; they
are excluded from the loss and from the in-batch negative pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import generation as gen, tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class ContrastConfig:
    """Temperature, balance weight, and the ablation switches.

    ``use_user_negs`` governs the entity-level negative pool on either side
    (users in a user batch, items in an item batch); ``use_neighbor_pos``
    False replaces every neighborhood representation with the entity's own
    latent (the self-positive variant).
    """

    tau: float = 0.2
    gamma: float = 0.1
    use_user_negs: bool = True
    use_aspect_negs: bool = True
    use_neighbor_pos: bool = True

    def validate(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")


def neighborhood_repr(neighbors: np.ndarray, weight_col: np.ndarray,
                      latents: np.ndarray) -> np.ndarray:
    """Single entity, single aspect: sum of weighted neighbor latents.

    ``weight_col`` and ``latents`` are indexed over the whole frozen side;
    an empty neighbor set yields the zero vector.
    """
    if len(neighbors) == 0:
        return np.zeros(latents.shape[1], dtype=latents.dtype)
    return (weight_col[neighbors, None] * latents[neighbors]).sum(axis=0)


def batch_neighborhood_reprs(slab: np.ndarray, frozen_probs: np.ndarray,
                             frozen_means: np.ndarray) -> np.ndarray:
    """Neighborhood representations for a batch, all aspects at once.

    ``slab`` is the batch's dense interaction rows over the frozen side, so
    row b of the result under aspect a is sum_j slab[b, j] * probs[j, a] *
    means[j, a, :].
    """
    b, n = slab.shape
    n_aspects, dim = frozen_means.shape[1], frozen_means.shape[2]
    if frozen_probs.shape != (n, n_aspects):
        raise ShapeError("frozen prob matrix does not match slab width")
    out = np.empty((b, n_aspects, dim), dtype=frozen_means.dtype)
    for a in range(n_aspects):
        out[:, a, :] = (slab * frozen_probs[:, a][None, :]) @ frozen_means[:, a, :]
    return out


def infonce_losses(z_list, o, cfg: ContrastConfig, participate: np.ndarray):
    """Per-entity InfoNCE losses, one (b, 1) column per aspect.

    ``z_list`` holds the live per-aspect codes; ``o`` is the (b, A, d)
    neighborhood array, ignored when ``use_neighbor_pos`` is off (the codes
    themselves then act as both positives and negative pool). Non
    participating entities are masked out of the pairwise negative pool.
    """
    cfg.validate()
    n_aspects = len(z_list)
    batch = z_list[0].shape[0]
    inv_tau = 1.0 / cfg.tau

    def partner(a):
        if cfg.use_neighbor_pos:
            return T.constant(np.ascontiguousarray(o[:, a, :]))
        return z_list[a]

    part_col = participate.astype(float).reshape(batch, 1)
    losses = []
    for a in range(n_aspects):
        pos = T.cosine_rows(z_list[a], partner(a))
        pos_scaled = T.scale(pos, inv_tau)
        denom = T.exp(pos_scaled)
        if cfg.use_aspect_negs:
            for b_asp in range(n_aspects):
                if b_asp == a:
                    continue
                neg = T.cosine_rows(z_list[a], partner(b_asp))
                denom = T.add(denom, T.exp(T.scale(neg, inv_tau)))
        if cfg.use_user_negs and batch > 1:
            pairs = T.cosine_pairs(z_list[a], partner(a))
            mask = np.outer(np.ones(batch), part_col[:, 0])
            np.fill_diagonal(mask, 0.0)
            offdiag = T.mul(T.exp(T.scale(pairs, inv_tau)), mask)
            denom = T.add(denom, T.sum_rows(offdiag))
        losses.append(T.sub(T.log(denom), pos_scaled))
    return losses


def batch_contrast(z_list, o, cfg: ContrastConfig, participate: np.ndarray) -> Tensor:
    """Aspect-summed InfoNCE averaged over participating batch entities."""
    count = int(participate.sum())
    if count == 0:
        return T.constant(np.zeros((1, 1)))
    per_aspect = infonce_losses(z_list, o, cfg, participate)
    total = per_aspect[0]
    for col in per_aspect[1:]:
        total = T.add(total, col)
    masked = T.mul(total, participate.astype(float).reshape(-1, 1))
    return T.scale(T.sum_all(masked), 1.0 / count)


def total_loss(elbo: "gen.ElboTerms", contrast: "Tensor | None", gamma: float) -> Tensor:
    """Minimized objective: negative ELBO plus gamma-weighted contrast."""
    if gamma < 0.0:
        raise ConfigError("gamma must be non-negative")
    if contrast is None or gamma == 0.0:
        return elbo.loss
    return T.add(elbo.loss, T.scale(contrast, gamma))
