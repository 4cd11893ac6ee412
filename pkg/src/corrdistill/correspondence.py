"""Agreement matrices and the correspondence distributions built from them.

Rows index audios and columns index captions throughout. A distribution
"over audios" is column-stochastic (for each caption, a distribution over
audios); one "over captions" is row-stochastic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .numerics import as_matrix, matmul, row_norms, stable_softmax_columns, stable_softmax_rows

OVER_AUDIOS = "over-audios"
OVER_CAPTIONS = "over-captions"
ORIENTATIONS = (OVER_AUDIOS, OVER_CAPTIONS)

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    lam: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class CorrespondenceDistribution:
    values: np.ndarray
    orientation: str

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ContractError(f"unknown orientation {self.orientation!r}")

    @property
    def num_queries(self) -> int:
        return self.values.shape[1] if self.orientation == OVER_AUDIOS else self.values.shape[0]


def agreement_matrix(emb_a, emb_c) -> np.ndarray:
    """Cosine agreements ``C[i, j] = <a_i, c_j>`` between unit-norm embeddings."""
    emb_a = as_matrix(emb_a)
    emb_c = as_matrix(emb_c)
    if emb_a.shape[1] != emb_c.shape[1]:
        raise ShapeError(f"embedding dims differ: {emb_a.shape[1]} vs {emb_c.shape[1]}")
    for name, e in (("audio", emb_a), ("caption", emb_c)):
        off = np.abs(row_norms(e) - 1.0)
        if off.size and off.max() > UNIT_TOL:
            raise ContractError(f"{name} embedding row {int(off.argmax())} is not unit norm")
    return matmul(emb_a, emb_c.T)


def distributions_from_agreements(c, tau: float):
    """Return ``(q_a, q_c)``: softmax of ``C / tau`` over audios and over captions."""
    c = as_matrix(c)
    return (
        CorrespondenceDistribution(stable_softmax_columns(c, tau), OVER_AUDIOS),
        CorrespondenceDistribution(stable_softmax_rows(c, tau), OVER_CAPTIONS),
    )


def identity_targets(n: int):
    """Hard targets: audio ``i`` matches caption ``j`` iff ``i == j``."""
    if n < 1:
        raise ConfigError(f"need at least one pair, got n={n}")
    eye = np.eye(n)
    return (
        CorrespondenceDistribution(eye, OVER_AUDIOS),
        CorrespondenceDistribution(eye.copy(), OVER_CAPTIONS),
    )


def ensemble_agreements(members) -> np.ndarray:
    """Entrywise mean of the members' agreement matrices."""
    members = [as_matrix(m) for m in members]
    if not members:
        raise ConfigError("ensemble needs at least one member")
    shape = members[0].shape
    for k, m in enumerate(members):
        if m.shape != shape:
            raise ShapeError(f"member {k} has shape {m.shape}, expected {shape}")
    if len(members) == 1:
        return members[0].copy()
    total = members[0].copy()
    for m in members[1:]:
        total += m
    return total / len(members)


def soft_targets(ensembled, tau: float):
    """Targets ``(p_hat_a, p_hat_c)`` from ensembled teacher agreements."""
    return distributions_from_agreements(ensembled, tau)
