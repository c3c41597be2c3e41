"""Aspect-masked variational encoders.

One shallow network per side, shared across aspects: the aspect identity
enters only through the masked interaction vector (interaction row times an
aspect probability column). The encoder maps that masked vector to the mean
and log-variance of a diagonal Gaussian posterior; samples come from the
usual reparameterization z = mu + sigma * eps.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError
from .tensor import Parameter, RngState, Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class EncoderParams:
    """input -> tanh hidden -> [mu; logvar] affine head."""

    def __init__(self, name: str, input_dim: int, hidden_dim: int, latent_dim: int,
                 rng: RngState, dtype=np.float64):
        self.name = name
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.w1 = Parameter(f"{name}.w1", rng.standard_normal(input_dim, hidden_dim, dtype) * (1.0 / float(np.sqrt(input_dim))))
        self.b1 = Parameter(f"{name}.b1", np.zeros((1, hidden_dim), dtype=dtype))
        self.w2 = Parameter(f"{name}.w2", rng.standard_normal(hidden_dim, 2 * latent_dim, dtype) * (1.0 / float(np.sqrt(hidden_dim))))
        self.b2 = Parameter(f"{name}.b2", np.zeros((1, 2 * latent_dim), dtype=dtype))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


def mask_interactions(rows: np.ndarray, aspect_col: np.ndarray) -> np.ndarray:
    """Aspect-level interaction vectors: rows times one probability column.

    Because probability rows sum to one across aspects, summing the masked
    vectors over aspects reconstructs the original rows exactly.
    """
    rows = np.asarray(rows)
    col = np.asarray(aspect_col).reshape(-1)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.shape[1] != col.shape[0]:
        raise ShapeError(f"mask length {col.shape[0]} vs row width {rows.shape[1]}")
    return rows * col[None, :]


def encode(x, enc: EncoderParams, tape: "T.Tape | None" = None):
    """Run the encoder; returns (mu, logvar, sigma) tensors.

    ``x`` may be a constant array (evaluation) or any tensor. When ``tape``
    is given the encoder weights are recorded as leaves so gradients reach
    them; otherwise everything stays off-tape.
    """
    if tape is not None:
        w1, b1, w2, b2 = (tape.leaf(p) for p in enc.params())
    else:
        w1, b1, w2, b2 = (p.value for p in enc.params())
    h = T.tanh(T.add(T.matmul(x, w1), b1))
    out = T.add(T.matmul(h, w2), b2)
    if not np.all(np.isfinite(out.value)):
        bad = np.nonzero(~np.isfinite(out.value).all(axis=1))[0]
        raise NumericError(f"{enc.name}: non-finite activations for batch rows {bad[:8].tolist()}")
    d = enc.latent_dim
    mu = T.slice_cols(out, 0, d)
    logvar = T.clip(T.slice_cols(out, d, 2 * d), LOGVAR_MIN, LOGVAR_MAX)
    sigma = T.exp(T.scale(logvar, 0.5))
    return mu, logvar, sigma


def reparameterize(mu, sigma, eps) -> Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I) (or zeros in evaluation mode)."""
    return T.add(mu, T.mul(sigma, eps))


def eval_noise(rows: int, cols: int, dtype=np.float64) -> Tensor:
    return T.constant(np.zeros((rows, cols), dtype=dtype))


def kl_rows(mu, logvar) -> Tensor:
    """Per-row KL( N(mu, sigma) || N(0, I) ) as a column vector.

    Closed form 0.5 * sum_j (sigma_j^2 + mu_j^2 - 1 - log sigma_j^2) with
    sigma^2 = exp(logvar).
    """
    inner = T.sub(T.sub(T.add(T.exp(logvar), T.mul(mu, mu)), 1.0), logvar)
    return T.scale(T.sum_rows(inner), 0.5)


def kl_gaussian(mu, sigma) -> float:
    """Scalar closed-form KL for plain arrays (diagnostics and tests)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    var = sigma * sigma
    return float(0.5 * np.sum(var + mu * mu - 1.0 - np.log(var)))
