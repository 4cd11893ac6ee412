"""Runtime self-verification used by ``corrdistill self-check``.

Each group returns a list of ``(name, passed, detail)`` rows. The metric
oracle here is a plain-Python re-implementation that shares no code with
:mod:`corrdistill.metrics`.
"""
from __future__ import annotations

import math

import numpy as np

from .correspondence import LossConfig, agreement_matrix, distributions_from_agreements, identity_targets
from .encoder import forward_with_cache, init_params
from .losses import combined_targets, loss_from_targets, supervised_loss
from .metrics import retrieval_metrics
from .numerics import grad_check
from .trainer import batch_gradients

GRAD_TOL = 1e-4
NORM_TOL = 1e-9
EQUIV_TOL = 1e-12
METRIC_TOL = 1e-12


# central differences are meaningless if a ReLU input sits inside the stencil
KINK_MARGIN = 1e-3


def gradient_case(seed: int, objective: str, dims=(8, 16, 4), batch: int = 6):
    """Objective closure, parameter vector, analytic gradient and ReLU margin for one random case.

    The margin is the smallest ``|pre-activation|`` feeding a ReLU; cases
    below :data:`KINK_MARGIN` are not differentiable at finite-difference
    resolution.
    """
    rng = np.random.default_rng(seed)
    enc_a = init_params(list(dims), int(rng.integers(2**31)))
    enc_c = init_params(list(dims), int(rng.integers(2**31)))
    xa = rng.standard_normal((batch, dims[0]))
    xc = rng.standard_normal((batch, dims[0]))
    teacher = rng.uniform(-1.0, 1.0, (batch, batch))
    lam = {"supervised": 1.0, "distillation": 0.0, "combined": 0.5}[objective]
    cfg = LossConfig(lam=lam)
    targets = combined_targets(teacher, cfg)
    n_a = enc_a.flatten().size

    def f(vec):
        a, c_ = enc_a.unflatten(vec[:n_a]), enc_c.unflatten(vec[n_a:])
        emb_a, _ = forward_with_cache(a, xa)
        emb_c, _ = forward_with_cache(c_, xc)
        return loss_from_targets(targets, agreement_matrix(emb_a, emb_c), cfg)

    _, _, grads = batch_gradients(enc_a, enc_c, xa, xc, targets, cfg)
    margin = min(
        (float(np.abs(pre).min()) for enc, x in ((enc_a, xa), (enc_c, xc)) for pre in forward_with_cache(enc, x)[1][1][:-1]),
        default=np.inf,
    )
    params = np.concatenate([enc_a.flatten(), enc_c.flatten()])
    return f, params, np.concatenate([g.ravel() for g in grads]), margin


def smooth_seeds(count: int, start: int = 0, dims=(8, 16, 4), batch: int = 6):
    """First ``count`` seeds from ``start`` whose cases clear the ReLU margin."""
    seeds, seed = [], start
    while len(seeds) < count:
        if gradient_case(seed, "supervised", dims, batch)[3] >= KINK_MARGIN:
            seeds.append(seed)
        seed += 1
    return seeds


def check_gradients(seed: int, corrupt: bool = False):
    rows = []
    for objective in ("supervised", "distillation", "combined"):
        worst = 0.0
        for case_seed in smooth_seeds(3, start=seed * 1000):
            f, params, grad, _ = gradient_case(case_seed, objective)
            if corrupt:
                grad = grad.copy()
                grad[0] += 1e-2
            worst = max(worst, grad_check(f, params, grad, 1e-5))
        rows.append((f"gradient/{objective}", bool(worst < GRAD_TOL), float(worst)))
    return rows


def check_normalization(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for tau in (0.01, 0.05, 1.0):
        for _ in range(10):
            n_a, n_c = rng.integers(1, 20, 2)
            q_a, q_c = distributions_from_agreements(rng.uniform(-1, 1, (n_a, n_c)), tau)
            worst = max(
                worst,
                float(np.max(np.abs(q_a.values.sum(axis=0) - 1))),
                float(np.max(np.abs(q_c.values.sum(axis=1) - 1))),
            )
    return [("softmax/normalization", worst <= NORM_TOL, worst)]


def check_hard_targets(seed: int):
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 16))
        c = rng.uniform(-1, 1, (n, n))
        sup = supervised_loss(c, cfg)
        dist = loss_from_targets(identity_targets(n), c, cfg)
        worst = max(worst, abs(sup - dist) / max(abs(sup), 1e-300))
    return [("hard_targets/equivalence", worst <= EQUIV_TOL, worst)]


def _oracle_metrics(scores, targets):
    parts = [[], [], [], []]
    for row, t in zip(scores, targets):
        order = sorted(range(len(row)), key=lambda i: (-row[i], i))
        rank = order.index(t) + 1
        parts[0].append(1.0 / rank if rank <= 10 else 0.0)
        for slot, k in ((1, 1), (2, 5), (3, 10)):
            parts[slot].append(1.0 if rank <= k else 0.0)
    sums = [math.fsum(p) / len(targets) for p in parts]
    return dict(zip(("map_at_10", "r_at_1", "r_at_5", "r_at_10"), sums))


def check_metrics(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(25):
        n_audio = int(rng.integers(1, 51))
        n_q = n_audio * int(rng.integers(1, 6))
        scores = rng.integers(0, 12, (n_q, n_audio)) / 12.0
        targets = rng.integers(0, n_audio, n_q)
        got = retrieval_metrics(scores, targets)
        want = _oracle_metrics(scores.tolist(), targets.tolist())
        worst = max(worst, *(abs(getattr(got, k) - v) for k, v in want.items()))
    return [("metrics/oracle", worst <= METRIC_TOL, worst)]


def run_all(seed: int = 0, corrupt_gradient: bool = False):
    return (
        check_gradients(seed, corrupt_gradient)
        + check_normalization(seed)
        + check_hard_targets(seed)
        + check_metrics(seed)
    )
