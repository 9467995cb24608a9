"""Rank-weight functions and evaluation metrics (DCG family)."""

from __future__ import annotations

import numpy as np

from .dataset import Query


def lambda_dcg(ranks) -> np.ndarray:
    """DCG weight per 1-based rank: 1 / log2(rank + 1)."""
    r = np.asarray(ranks, dtype=np.float64)
    return 1.0 / np.log2(r + 1.0)


def lambda_top1(ranks) -> np.ndarray:
    """Top-1 weight: 1 at rank 1, 0 elsewhere."""
    return (np.asarray(ranks) == 1).astype(np.float64)


def ranks_of_docs(model, query: Query) -> np.ndarray:
    """1-based rank of each doc (indexed by doc id) under the model's scoring."""
    from .ranker import rank_query

    ranking = rank_query(model, query)
    ranks = np.empty(query.n_docs, dtype=np.int64)
    ranks[ranking.ordered_doc_ids] = np.arange(1, query.n_docs + 1)
    return ranks


def dcg_at_k(gains_in_rank_order: np.ndarray, k: int) -> float:
    g = np.asarray(gains_in_rank_order, dtype=np.float64)[:k]
    return float(np.sum(g / np.log2(np.arange(2, g.size + 2))))


def evaluate_ndcg(model, queries: list[Query], k: int = 10) -> float:
    """Mean nDCG@k over queries with binary labels as gains.

    Queries without any relevant document contribute 1.0; this avoids a 0/0
    and matches common LTR tooling, but it does shift absolute numbers.
    """
    if not queries:
        raise ValueError("empty split")
    from .ranker import rank_query

    total = 0.0
    for q in queries:
        ranking = rank_query(model, q)
        gains = q.binary_labels[ranking.ordered_doc_ids].astype(np.float64)
        ideal = dcg_at_k(np.sort(q.binary_labels)[::-1].astype(np.float64), k)
        total += dcg_at_k(gains, k) / ideal if ideal > 0 else 1.0
    return total / len(queries)


def true_delta(model, queries: list[Query], lambda_fn=lambda_dcg) -> float:
    """Expected metric value under uniform query sampling and true binary relevance."""
    if not queries:
        raise ValueError("empty split")
    total = 0.0
    for q in queries:
        lam = lambda_fn(ranks_of_docs(model, q))
        total += float(np.dot(q.binary_labels.astype(np.float64), lam))
    return total / len(queries)
