"""Test-set metrics: ROC AUC (Mann-Whitney, ties half-credited) and Logloss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError, UndefinedMetricError

PROB_CLAMP = 1e-12


def _labels_scores(labels, scores):
    y = np.asarray(labels, dtype=float).reshape(-1)
    s = np.asarray(scores, dtype=float).reshape(-1)
    if y.shape != s.shape:
        raise InvalidInputError(f"labels and scores differ in length ({y.size} vs {s.size})")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("labels must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    return y.astype(bool), s


def auc(labels, scores) -> float:
    """Area under the ROC curve via the rank-sum form of the Mann-Whitney statistic."""
    pos, s = _labels_scores(labels, scores)
    n_pos = pos.sum()
    n_neg = pos.size - n_pos
    ranks = rankdata(s)  # average ranks give ties half credit
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pairwise(labels, scores) -> float:
    """Same statistic by explicit count over all positive/negative pairs, O(P*N)."""
    pos, s = _labels_scores(labels, scores)
    sp = s[pos][:, None]
    sn = s[~pos][None, :]
    wins = np.count_nonzero(sp > sn) + 0.5 * np.count_nonzero(sp == sn)
    return float(wins / (sp.size * sn.size))


def auc_rank_equivalence_check(labels, scores, tol: float = 1e-12) -> bool:
    return abs(auc(labels, scores) - auc_pairwise(labels, scores)) <= tol


def logloss(labels, probs) -> float:
    y = np.asarray(labels, dtype=float).reshape(-1)
    p = np.clip(np.asarray(probs, dtype=float).reshape(-1), PROB_CLAMP, 1.0 - PROB_CLAMP)
    if y.shape != p.shape:
        raise InvalidInputError(f"labels and probabilities differ in length ({y.size} vs {p.size})")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass(frozen=True)
class TaskMetrics:
    auc: float
    logloss: float
    n: int


def evaluate(Y, P) -> list[TaskMetrics]:
    """Per-task metrics for labels ``Y`` (N x K) and probabilities ``P`` (K x N)."""
    Y = np.asarray(Y, dtype=float)
    return [TaskMetrics(auc(Y[:, k], P[k]), logloss(Y[:, k], P[k]), len(Y)) for k in range(Y.shape[1])]


def aggregate_diagnostics(steps) -> dict:
    """Epoch summary of per-step combiner diagnostics.

    ``shared_mass_fraction`` and ``rank`` are ``None`` for combiners that do
    not decompose (their per-step values are NaN / absent).
    """
    steps = list(steps)
    if not steps:
        return {"steps": 0, "train_loss": None, "shared_mass_fraction": None, "mean_rank": None,
                "mean_update_norm": None, "empty_mask_steps": 0}
    fractions = np.array([d.shared_mass_fraction for d in steps], dtype=float)
    fractions = fractions[~np.isnan(fractions)]
    ranks = [d.rank for d in steps if d.rank is not None]
    return {
        "steps": len(steps),
        "train_loss": np.mean([d.task_losses for d in steps], axis=0).tolist(),
        "shared_mass_fraction": float(fractions.mean()) if fractions.size else None,
        "mean_rank": float(np.mean(ranks)) if ranks else None,
        "mean_update_norm": float(np.mean([d.update_norm for d in steps])),
        "empty_mask_steps": int(sum(bool(d.empty_mask) for d in steps)),
    }
