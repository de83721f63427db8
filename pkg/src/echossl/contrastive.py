"""Normalized temperature-scaled cross-entropy (NT-Xent) and projection head.

For 2N unit-normalized embeddings z with positive-pair involution pi and
temperature tau > 0, the per-anchor loss is

    l_i = -log( exp(sim(z_i, z_pi(i)) / tau) / sum_{k != i} exp(sim(z_i, z_k) / tau) )

with sim(a, b) = a.b; only k = i is excluded from the denominator (the
positive term is included). The batch loss is the mean over all 2N anchors.

:func:`ntxent_loss` is the double-precision reference with a closed-form
gradient; :func:`ntxent_loss_torch` is the autograd-capable twin used
inside training graphs. The two are cross-checked in the test suite
against a brute-force evaluation and central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import (
    DegenerateInputError,
    InvalidInputError,
    InvalidPairingError,
    InvalidTemperatureError,
    ShapeError,
)

PROJECTION_DIM = 128


def l2_normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Scale vectors to unit Euclidean length, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0.0) or not np.all(np.isfinite(norm)):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / norm


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot-product similarity of two unit vectors; lies in [-1, 1]."""
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def block_pairing(n_clips: int) -> np.ndarray:
    """Pairing for the [view0 rows; view1 rows] batch layout: pi(i) = i +- N."""
    return np.concatenate(
        [np.arange(n_clips, 2 * n_clips), np.arange(0, n_clips)]
    ).astype(np.int64)


def _validate_pairing(pairing: np.ndarray, m: int) -> np.ndarray:
    pairing = np.asarray(pairing, dtype=np.int64)
    idx = np.arange(m)
    if pairing.shape != (m,) or not np.array_equal(np.sort(pairing), idx):
        raise InvalidPairingError("pairing must be a permutation of 0..2N-1")
    if np.any(pairing == idx):
        raise InvalidPairingError("pairing has a fixed point (an anchor paired with itself)")
    if not np.array_equal(pairing[pairing], idx):
        raise InvalidPairingError("pairing is not an involution")
    return pairing


@dataclass(frozen=True)
class EmbeddingBatch:
    """2N projected, unit-normalized embeddings plus the positive-pair map.

    Rows must be l2-normalized to within 1e-6; ``pairing`` must be a
    fixed-point-free involution on {0, ..., 2N-1}; ``temperature`` > 0.
    """

    z: np.ndarray
    pairing: np.ndarray
    temperature: float

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
            raise InvalidInputError(f"embeddings must be (2N, d) with N >= 1, got {z.shape}")
        norms = np.linalg.norm(z, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            worst = float(np.abs(norms - 1.0).max())
            raise InvalidInputError(f"rows must be unit-normalized (worst deviation {worst:.2e})")
        if not (self.temperature > 0):
            raise InvalidTemperatureError(f"temperature must be > 0, got {self.temperature}")
        _validate_pairing(np.asarray(self.pairing), z.shape[0])
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "pairing", np.asarray(self.pairing, dtype=np.int64))

    @property
    def n_clips(self) -> int:
        return self.z.shape[0] // 2


def ntxent_loss(batch: EmbeddingBatch) -> tuple[float, np.ndarray]:
    """Mean NT-Xent loss over all 2N anchors and its gradient w.r.t. z.

    Uses row-max subtraction before exponentiation (exact log-sum-exp
    stabilization); anchors whose positive attains the row max take a
    log1p path so near-zero losses keep full relative precision. The
    gradient is the closed form

        dL/dz = (G + G^T) @ z,   G = (P - E) / (2N * tau)

    where P is the row-softmax over off-diagonal scaled similarities and
    E the 0/1 positive-pair indicator.
    """
    z = batch.z
    tau = batch.temperature
    pairing = batch.pairing
    m = z.shape[0]
    rows = np.arange(m)

    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1)
    expd = np.exp(logits - row_max[:, np.newaxis])
    denom = expd.sum(axis=1)
    # l_i = -s_{i,pi(i)} + log sum_{k != i} exp(s_ik), all in units of 1/tau.
    # Where the positive is the row max that collapses to log(1 + r) with r
    # the negatives' mass; evaluating it as log1p(r) keeps a near-zero loss
    # at full relative precision instead of rounding r against the 1.
    pos_logits = logits[rows, pairing]
    neg_mass = expd.copy()
    neg_mass[rows, pairing] = 0.0
    losses = np.where(
        pos_logits == row_max,
        np.log1p(neg_mass.sum(axis=1)),
        row_max - pos_logits + np.log(denom),
    )
    loss = float(losses.mean())

    softmax = expd / denom[:, np.newaxis]
    grad_logits = softmax
    grad_logits[rows, pairing] -= 1.0
    grad_logits /= m * tau
    grad = (grad_logits + grad_logits.T) @ z
    return loss, grad


def ntxent_loss_brute(z: np.ndarray, pairing: np.ndarray, temperature: float) -> float:
    """Per-anchor evaluation; the slow reference used by tests.

    Folds the positive out of the denominator, l_i = log1p(sum over
    negatives of exp((s_ik - s_ip) / tau)), which is the same quantity as
    -log(pos / den) but stays accurate when the loss is near zero.
    """
    import math

    m = len(z)
    total = 0.0
    for i in range(m):
        s_pos = float(np.dot(z[i], z[pairing[i]])) / temperature
        ratios = [
            math.exp(float(np.dot(z[i], z[k])) / temperature - s_pos)
            for k in range(m)
            if k != i and k != pairing[i]
        ]
        total += math.log1p(math.fsum(ratios))
    return total / m


def ntxent_loss_torch(z: torch.Tensor, pairing: torch.Tensor,
                      temperature: float) -> torch.Tensor:
    """Autograd-capable NT-Xent on (2N, d) unit-normalized embeddings."""
    if not (temperature > 0):
        raise InvalidTemperatureError(f"temperature must be > 0, got {temperature}")
    m = z.shape[0]
    logits = (z @ z.T) / temperature
    eye = torch.eye(m, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    log_denom = torch.logsumexp(logits, dim=1)
    pos = logits[torch.arange(m, device=z.device), pairing]
    return (log_denom - pos).mean()


class ProjectionHead(nn.Module):
    """Two-layer MLP g(.) mapping encoder features into contrastive space.

    Widths are d_in -> d_in -> 128 by default; discarded after pretraining.
    """

    def __init__(self, in_dim: int, hidden_dim: int | None = None,
                 out_dim: int = PROJECTION_DIM):
        super().__init__()
        hidden_dim = in_dim if hidden_dim is None else hidden_dim
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(h)))


def project(head: ProjectionHead, h: torch.Tensor) -> torch.Tensor:
    """Forward pass through the projection head with a width check."""
    if h.shape[-1] != head.in_dim:
        raise ShapeError(f"projection head expects width {head.in_dim}, got {h.shape[-1]}")
    return head(h)
