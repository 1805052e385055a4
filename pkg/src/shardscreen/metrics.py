"""Evaluation quantities for a screening outcome against a known truth set.

All index sets are 0-based.  ``auc`` follows the ranking-quality convention:
the probability that a randomly chosen important feature out-ranks a randomly
chosen unimportant one, with ties counting one half.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import ShardScreenError
from .shard_engine import rank_features


class DegenerateTruth(ShardScreenError):
    """AUC needs both an important and an unimportant class."""


def _as_index_set(s) -> frozenset:
    return frozenset(int(j) for j in s)


def ssr_indicator(truth, selected) -> int:
    """1 iff every important feature was selected."""
    return int(_as_index_set(truth) <= _as_index_set(selected))


def psr(truth, selected) -> float:
    """Fraction of important features that were selected."""
    truth = _as_index_set(truth)
    if not truth:
        raise ValueError("truth set must be nonempty")
    return len(truth & _as_index_set(selected)) / len(truth)


def fdr_realized(truth, selected) -> float:
    """Fraction of selected features that are not important (0 for an empty
    selection)."""
    selected = _as_index_set(selected)
    if not selected:
        return 0.0
    return len(selected - _as_index_set(truth)) / len(selected)


def auc(truth, utilities) -> float:
    """Rank-sum AUC of important vs unimportant utilities, ties at half
    weight.  Computed in O(p log p) via average ranks."""
    utilities = np.asarray(utilities, dtype=np.float64)
    p = len(utilities)
    mask = np.zeros(p, dtype=bool)
    truth = _as_index_set(truth)
    mask[list(truth)] = True
    n1 = int(mask.sum())
    n0 = p - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateTruth("need both important and unimportant features")
    ranks = rankdata(utilities)
    return (float(ranks[mask].sum()) - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def auc_double_sum(truth, utilities) -> float:
    """Literal O(|M| * |M^c|) pair enumeration; test oracle for `auc`."""
    utilities = np.asarray(utilities, dtype=np.float64)
    truth = _as_index_set(truth)
    comp = [j for j in range(len(utilities)) if j not in truth]
    if not truth or not comp:
        raise DegenerateTruth("need both important and unimportant features")
    penalty = 0.0
    for i in truth:
        for j in comp:
            if utilities[i] < utilities[j]:
                penalty += 1.0
            elif utilities[i] == utilities[j]:
                penalty += 0.5
    return 1.0 - penalty / (len(truth) * len(comp))


def minimum_model_size(truth, utilities) -> int:
    """Smallest top-rank cutoff (descending utility, index tie-break) whose
    retained set covers all important features."""
    truth = _as_index_set(truth)
    if not truth:
        raise ValueError("truth set must be nonempty")
    ranking = rank_features(np.asarray(utilities, dtype=np.float64))
    position = np.empty(len(ranking), dtype=np.intp)
    position[ranking] = np.arange(len(ranking))
    return int(max(position[j] for j in truth)) + 1
