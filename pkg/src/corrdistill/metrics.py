"""Text-to-audio retrieval metrics: mAP@10 and recall@k."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .correspondence import agreement_matrix
from .encoder import forward
from .errors import DataError

RECALL_KS = (1, 5, 10)
MAP_K = 10


@dataclass(frozen=True)
class RetrievalMetrics:
    map_at_10: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    num_queries: int

    def as_percentages(self) -> dict:
        """JSON-ready dict with metrics in percent, rounded to 4 decimals."""
        out = {k: round(100.0 * v, 4) for k, v in asdict(self).items() if k != "num_queries"}
        out["num_queries"] = self.num_queries
        return out


def rank_candidates(scores) -> np.ndarray:
    """Candidate indices by descending score; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DataError("cannot rank an empty score vector")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    return np.argsort(-scores, kind="stable")


def _check(relevant, k):
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise DataError("relevant set is empty")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    return relevant


def average_precision_at_k(ranking, relevant, k: int = MAP_K) -> float:
    relevant = _check(relevant, k)
    hits, total = 0, 0.0
    for r, idx in enumerate(ranking[:k], start=1):
        if int(idx) in relevant:
            hits += 1
            total += hits / r
    return total / min(len(relevant), k)


def recall_at_k(ranking, relevant, k: int) -> float:
    relevant = _check(relevant, k)
    found = sum(1 for idx in ranking[:k] if int(idx) in relevant)
    return found / len(relevant)


def retrieval_metrics(scores, targets) -> RetrievalMetrics:
    """Metrics for a query x candidate score matrix with one relevant candidate per query.

    ``scores[q, a]`` scores audio ``a`` for caption query ``q`` and
    ``targets[q]`` is that caption's audio.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] == 0:
        raise DataError(f"need a non-empty query x candidate matrix, got shape {scores.shape}")
    if targets.shape != (scores.shape[0],):
        raise DataError(f"{targets.size} targets for {scores.shape[0]} queries")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    # 1-based rank of the relevant audio under descending order, ties to lower index
    rows = np.arange(scores.shape[0])
    target_scores = scores[rows, targets][:, None]
    cand = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target_scores) | ((scores == target_scores) & (cand < targets[:, None]))
    ranks = ahead.sum(axis=1) + 1
    ap = np.where(ranks <= MAP_K, 1.0 / ranks, 0.0)
    n = scores.shape[0]
    return RetrievalMetrics(
        map_at_10=float(ap.sum() / n),
        r_at_1=float(np.count_nonzero(ranks <= 1) / n),
        r_at_5=float(np.count_nonzero(ranks <= 5) / n),
        r_at_10=float(np.count_nonzero(ranks <= 10) / n),
        num_queries=n,
    )


def split_agreements(checkpoint, manifest, split: str):
    """Agreements between every audio and every caption of ``split``.

    Returns ``(C, audios, captions)`` with ``C`` of shape
    ``len(audios) x len(captions)``; both index arrays ascend.
    """
    audios = manifest.split_audios(split)
    if audios.size == 0:
        raise DataError(f"split {split!r} has no audios")
    captions = manifest.split_captions(split)
    emb_a = forward(checkpoint.audio, manifest.audio_features[audios])
    emb_c = forward(checkpoint.caption, manifest.caption_features[captions])
    return agreement_matrix(emb_a, emb_c), audios, captions


def evaluate_retrieval(checkpoint, manifest, split: str) -> RetrievalMetrics:
    """Caption-to-audio retrieval over a split: every caption queries all split audios."""
    c, audios, captions = split_agreements(checkpoint, manifest, split)
    position = {int(a): i for i, a in enumerate(audios)}
    targets = np.array([position[int(manifest.caption_to_audio[j])] for j in captions])
    return retrieval_metrics(c.T, targets)
