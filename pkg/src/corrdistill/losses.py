"""Contrastive, distillation and mixed objectives over an agreement matrix.

All objectives share one code path: a pair of target distributions
``(p_a, p_c)`` scored against the student's temperature-scaled softmaxes in
both directions. Supervised training uses identity targets; distillation
uses softmaxed teacher agreements.
"""
from __future__ import annotations

import numpy as np

from .correspondence import (
    OVER_AUDIOS,
    OVER_CAPTIONS,
    CorrespondenceDistribution,
    LossConfig,
    identity_targets,
    soft_targets,
)
from .errors import ContractError, ShapeError
from .numerics import as_matrix, col_sums, log_softmax_columns, log_softmax_rows, row_sums


def cross_entropy_mean(p: CorrespondenceDistribution, log_q, orientation: str) -> float:
    """Mean over queries of ``-sum_candidates p * log_q``.

    Queries are columns for ``over-audios`` and rows for ``over-captions``.
    """
    if p.orientation != orientation:
        raise ContractError(f"targets are {p.orientation}, requested {orientation}")
    log_q = as_matrix(log_q)
    if p.values.shape != log_q.shape:
        raise ShapeError(f"targets {p.values.shape} vs log-probabilities {log_q.shape}")
    prod = p.values * log_q
    if orientation == OVER_AUDIOS:
        per_query = col_sums(prod)
    else:
        per_query = row_sums(prod)
    return -float(row_sums(per_query[None, :])[0]) / per_query.size


def _square(c) -> np.ndarray:
    c = as_matrix(c)
    if c.shape[0] != c.shape[1]:
        raise ShapeError(f"agreement matrix must be square, got {c.shape}")
    return c


def loss_from_targets(targets, c, cfg: LossConfig) -> float:
    """``H(p_a, q_a) + H(p_c, q_c)`` for the student agreements ``c``."""
    p_a, p_c = targets
    c = as_matrix(c)
    h_a = cross_entropy_mean(p_a, log_softmax_columns(c, cfg.tau), OVER_AUDIOS)
    h_c = cross_entropy_mean(p_c, log_softmax_rows(c, cfg.tau), OVER_CAPTIONS)
    return h_a + h_c


def supervised_loss(c, cfg: LossConfig) -> float:
    c = _square(c)
    return loss_from_targets(identity_targets(c.shape[0]), c, cfg)


def distillation_loss(c_student, c_teacher, cfg: LossConfig) -> float:
    c_student = _square(c_student)
    c_teacher = _square(c_teacher)
    if c_teacher.shape != c_student.shape:
        raise ShapeError(f"teacher {c_teacher.shape} vs student {c_student.shape}")
    return loss_from_targets(soft_targets(c_teacher, cfg.tau), c_student, cfg)


def combined_loss(c_student, c_teacher, cfg: LossConfig) -> float:
    """``lam * L_sup + (1 - lam) * L_dist``."""
    lam = cfg.lam
    return lam * supervised_loss(c_student, cfg) + (1.0 - lam) * distillation_loss(
        c_student, c_teacher, cfg
    )


def combined_targets(c_teacher, cfg: LossConfig):
    """Targets whose cross-entropy equals :func:`combined_loss`.

    Cross-entropy is linear in the target, so mixing targets with weight
    ``lam`` mixes the two losses. At ``lam == 1`` this returns the identity
    exactly, at ``lam == 0`` the soft targets exactly.
    """
    c_teacher = _square(c_teacher)
    hard = identity_targets(c_teacher.shape[0])
    soft = soft_targets(c_teacher, cfg.tau)
    lam = cfg.lam
    return tuple(
        CorrespondenceDistribution(lam * h.values + (1.0 - lam) * s.values, h.orientation)
        for h, s in zip(hard, soft)
    )


def loss_gradient_wrt_agreements(targets, c, cfg: LossConfig) -> np.ndarray:
    """dL/dC of :func:`loss_from_targets`.

    For the over-audios term with column mass ``s_j = sum_i p_ij`` this is
    ``(q_ij * s_j - p_ij) / (tau * n_queries)``; the other term is the
    row-wise analogue.
    """
    p_a, p_c = targets
    c = as_matrix(c)
    for p in (p_a, p_c):
        if p.values.shape != c.shape:
            raise ShapeError(f"targets {p.values.shape} vs agreements {c.shape}")
    if p_a.orientation != OVER_AUDIOS or p_c.orientation != OVER_CAPTIONS:
        raise ContractError("targets must be (over-audios, over-captions)")
    q_a = np.exp(log_softmax_columns(c, cfg.tau))
    q_c = np.exp(log_softmax_rows(c, cfg.tau))
    n_a, n_c = c.shape
    g_a = (q_a * col_sums(p_a.values)[None, :] - p_a.values) / (cfg.tau * n_c)
    g_c = (q_c * row_sums(p_c.values)[:, None] - p_c.values) / (cfg.tau * n_a)
    return g_a + g_c
