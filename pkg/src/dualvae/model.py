"""Parameter container and evaluation-mode state assembly.

A Snapshot is the phase-boundary view of the model: both sides' posterior
means (computed under the previous aspect probabilities), their decoder
images, and the refreshed aspect probability matrices. The side being
trained next reads the other side's half of the snapshot as constants, and
the same snapshot is what scoring, checkpointing and exports consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aspects, encoder as enc_mod, generation as gen
from .data import InteractionMatrix
from .errors import ShapeError
from .tensor import RngState


class ModelParams:
    """All trainable tensors, split into user-related and item-related groups."""

    def __init__(self, num_users: int, num_items: int, n_aspects: int, dim: int,
                 hidden: int, rng: RngState, dtype=np.float64):
        self.num_users = num_users
        self.num_items = num_items
        self.n_aspects = n_aspects
        self.dim = dim
        self.hidden = hidden
        self.enc_u = enc_mod.EncoderParams("enc_u", num_items, hidden, dim, rng.derive(1), dtype)
        self.enc_i = enc_mod.EncoderParams("enc_i", num_users, hidden, dim, rng.derive(2), dtype)
        self.dec_u = gen.DecoderParams("dec_u", dim, rng.derive(3), dtype)
        self.dec_i = gen.DecoderParams("dec_i", dim, rng.derive(4), dtype)
        self.protos = aspects.Prototypes(n_aspects, dim, rng.derive(5), dtype)

    def user_group(self):
        return self.enc_u.params() + self.dec_u.params() + [self.protos.user_protos]

    def item_group(self):
        return self.enc_i.params() + self.dec_i.params() + [self.protos.item_protos]

    def all_params(self):
        return self.user_group() + self.item_group()

    def named(self):
        return {p.name: p for p in self.all_params()}


@dataclass
class Snapshot:
    """Phase-boundary evaluation state; see module docstring."""

    C: np.ndarray             # (n, A) item aspect probabilities
    P: np.ndarray             # (m, A) user aspect probabilities
    user_means: np.ndarray    # (m, A, d)
    user_decoded: np.ndarray  # (m, A, d)
    item_means: np.ndarray    # (n, A, d)
    item_decoded: np.ndarray  # (n, A, d)

    def frozen_items(self) -> gen.FrozenSide:
        return gen.FrozenSide(self.item_means, self.item_decoded, self.C)

    def frozen_users(self) -> gen.FrozenSide:
        return gen.FrozenSide(self.user_means, self.user_decoded, self.P)


def compute_side_state(matrix: InteractionMatrix, side: str, params: ModelParams,
                       mask_probs: np.ndarray, block: int = 512, dtype=np.float64):
    """Evaluation-mode posterior means and decoder images for one whole side."""
    if side == "user":
        n_entities, enc, dec = matrix.num_users, params.enc_u, params.dec_u
    elif side == "item":
        n_entities, enc, dec = matrix.num_items, params.enc_i, params.dec_i
    else:
        raise ShapeError(f"unknown side {side!r}")
    n_aspects = params.n_aspects
    if mask_probs.shape[1] != n_aspects:
        raise ShapeError("mask probability column count != aspect count")

    means = np.empty((n_entities, n_aspects, params.dim), dtype=dtype)
    decoded = np.empty_like(means)
    for start in range(0, n_entities, block):
        idx = np.arange(start, min(start + block, n_entities))
        slab = (matrix.densify_users(idx, dtype) if side == "user"
                else matrix.densify_items(idx, dtype))
        for a in range(n_aspects):
            masked = enc_mod.mask_interactions(slab, mask_probs[:, a]).astype(dtype)
            mu, _, _ = enc_mod.encode(masked, enc)
            means[idx, a, :] = mu.value
            decoded[idx, a, :] = gen.decode(mu, dec).value
    return means, decoded


def refresh(matrix: InteractionMatrix, params: ModelParams, C: np.ndarray, P: np.ndarray,
            temp: float, pin_c: bool = False, pin_p: bool = False,
            first_pass: bool = False, dtype=np.float64) -> Snapshot:
    """Recompute both sides' states under the current masks, then the probs.

    On the very first pass (no trained state yet) the probability matrices
    stay uniform, which breaks the circular dependency between latents and
    aspect assignments.
    """
    item_means, item_decoded = compute_side_state(matrix, "item", params, P, dtype=dtype)
    user_means, user_decoded = compute_side_state(matrix, "user", params, C, dtype=dtype)
    if first_pass or pin_c:
        new_C = aspects.uniform_probs(matrix.num_items, params.n_aspects, dtype)
    else:
        new_C = aspects.item_aspect_probs(item_means, params.protos.item_protos.value, temp).astype(dtype)
    if first_pass or pin_p:
        new_P = aspects.uniform_probs(matrix.num_users, params.n_aspects, dtype)
    else:
        new_P = aspects.user_aspect_probs(user_means, params.protos.user_protos.value, temp).astype(dtype)
    return Snapshot(new_C, new_P, user_means, user_decoded, item_means, item_decoded)


def bootstrap(matrix: InteractionMatrix, params: ModelParams, temp: float,
              pin_c: bool = False, pin_p: bool = False, dtype=np.float64) -> Snapshot:
    """First-pass snapshot: uniform aspect probabilities throughout."""
    A = params.n_aspects
    C0 = aspects.uniform_probs(matrix.num_items, A, dtype)
    P0 = aspects.uniform_probs(matrix.num_users, A, dtype)
    snap = refresh(matrix, params, C0, P0, temp, pin_c, pin_p, first_pass=True, dtype=dtype)
    return snap
