"""Click-based metric estimators: naive, IPS, Bayes-IPS, and affine.

Every estimator is a per-click correction weight that is affine in the click
indicator c at display rank k:

    naive      c
    ips        c / theta_k
    bayes-ips  c * eps_plus_k / ((eps_plus_k + eps_minus_k) * theta_k)
    affine     (c - beta_k) / alpha_k

The affine weight is the only one with a nonzero (negative) value for
unclicked impressions; that penalty is what cancels the incorrect clicks
caused by trust bias in expectation. Weights aggregate into metric
estimates (display ranks weight the clicks, the evaluated model's own ranks
supply the metric weights) and into per-document pseudo-labels for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biasmodel import BiasSchedule
from .clicksim import ClickLog, group_by_display
from .dataset import Query
from .metrics import lambda_dcg, ranks_of_docs
from .ranker import ScoringModel

KINDS = ("naive", "ips", "bayes-ips", "affine")


def weight_coefficients(kind: str, schedule: BiasSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Per-rank (slope, intercept) so that correction weight = c*slope + intercept."""
    if kind not in KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    if kind == "naive":
        return np.ones(schedule.max_rank), np.zeros(schedule.max_rank)
    if np.any(schedule.theta <= 0):
        raise ValueError("propensity correction undefined: some theta_k is not positive")
    if kind == "ips":
        return 1.0 / schedule.theta, np.zeros(schedule.max_rank)
    if kind == "bayes-ips":
        denom = schedule.eps_plus + schedule.eps_minus
        if np.any(denom <= 0):
            raise ValueError("bayes-ips undefined: eps_plus_k + eps_minus_k is zero at some rank")
        return schedule.eps_plus / (denom * schedule.theta), np.zeros(schedule.max_rank)
    # affine
    if np.any(schedule.alpha == 0):
        bad = int(np.nonzero(schedule.alpha == 0)[0][0]) + 1
        raise ValueError(f"uncorrectable rank {bad}: alpha_k = 0, clicks carry no relevance signal")
    return 1.0 / schedule.alpha, -schedule.beta / schedule.alpha


def _clip_weights(values: np.ndarray, clip: float | None) -> np.ndarray:
    if clip is None:
        return values
    return np.sign(values) * np.minimum(np.abs(values), clip)


def correction_weight(kind: str, clicked: int, rank: int, schedule: BiasSchedule, clip: float | None = None) -> float:
    """Correction weight of one impression with click indicator `clicked` at `rank`."""
    if clicked not in (0, 1):
        raise ValueError(f"clicked must be 0 or 1, got {clicked}")
    if not 1 <= rank <= schedule.max_rank:
        raise ValueError(f"rank {rank} outside [1, {schedule.max_rank}]")
    slope, intercept = weight_coefficients(kind, schedule)
    w = clicked * slope[rank - 1] + intercept[rank - 1]
    return float(_clip_weights(np.asarray(w), clip))


def weight_sums(
    kind: str, log: ClickLog, schedule: BiasSchedule, clip: float | None = None
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray], int]:
    """Sum of correction weights and impression counts per (query, doc).

    Returns ({qid: weight_sum per doc id}, {qid: impressions per doc id},
    n_sessions). These sums are the sufficient statistics of a log for any
    fixed estimator: both metric estimates and pseudo-labels derive from
    them.
    """
    if log.n_sessions == 0:
        raise ValueError("empty click log")
    slope, intercept = weight_coefficients(kind, schedule)
    wsum: dict[int, np.ndarray] = {}
    imps: dict[int, np.ndarray] = {}
    for grp in group_by_display(log):
        n_docs = grp.ranking.size
        if n_docs > schedule.max_rank:
            raise ValueError(f"log contains rank {n_docs} beyond schedule max_rank {schedule.max_rank}")
        w_click = _clip_weights(slope[:n_docs] + intercept[:n_docs], clip)
        w_skip = _clip_weights(intercept[:n_docs], clip)
        c = grp.clicks_per_doc[grp.ranking].astype(np.float64)  # clicks by display position
        per_pos = c * w_click + (grp.n_sessions - c) * w_skip
        if grp.query_id not in wsum:
            wsum[grp.query_id] = np.zeros(n_docs)
            imps[grp.query_id] = np.zeros(n_docs, dtype=np.int64)
        wsum[grp.query_id][grp.ranking] += per_pos
        imps[grp.query_id][grp.ranking] += grp.n_sessions
    return wsum, imps, log.n_sessions


def estimate_delta(
    kind: str,
    log: ClickLog,
    queries: list[Query],
    schedule: BiasSchedule,
    model: ScoringModel,
    lambda_fn=lambda_dcg,
    clip: float | None = None,
) -> float:
    """Estimated metric value of `model` from a click log.

    Correction weights use the logged display ranks; the metric weights use
    the evaluated model's own ranking of each logged query.
    """
    return make_delta_evaluator(kind, log, queries, schedule, lambda_fn, clip)(model)


def make_delta_evaluator(
    kind: str,
    log: ClickLog,
    queries: list[Query],
    schedule: BiasSchedule,
    lambda_fn=lambda_dcg,
    clip: float | None = None,
):
    """Precompute a log's weight sums; returns a fast model -> estimate callable."""
    wsum, _, n_sessions = weight_sums(kind, log, schedule, clip)
    by_qid = {q.query_id: q for q in queries}
    missing = set(wsum) - set(by_qid)
    if missing:
        raise ValueError(f"log references query ids not in the split: {sorted(missing)[:5]}")
    pairs = [(by_qid[qid], w) for qid, w in wsum.items()]

    def evaluate(model: ScoringModel) -> float:
        total = 0.0
        for query, w in pairs:
            lam = lambda_fn(ranks_of_docs(model, query))
            total += float(np.dot(w, lam))
        return total / n_sessions

    return evaluate


@dataclass(eq=False)
class PseudoLabels:
    """Per-(query, doc) training targets derived from correction weights."""

    gamma_hat: dict[tuple[int, int], float]
    impressions: dict[tuple[int, int], int]

    def get(self, query_id: int, doc_id: int, default: float = 0.0) -> float:
        return self.gamma_hat.get((query_id, doc_id), default)

    def label_vector(self, query: Query, default: float = 0.0) -> tuple[np.ndarray, int]:
        """Labels for every doc of a query plus the count of uncovered docs."""
        labels = np.full(query.n_docs, default, dtype=np.float64)
        missing = 0
        for d in range(query.n_docs):
            key = (query.query_id, d)
            if key in self.gamma_hat:
                labels[d] = self.gamma_hat[key]
            else:
                missing += 1
        return labels, missing

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write("qid,docid,impressions,gamma_hat\n")
            for (qid, did) in sorted(self.gamma_hat):
                fh.write(f"{qid},{did},{self.impressions[(qid, did)]},{self.gamma_hat[(qid, did)]!r}\n")


def aggregate_pseudo_labels(
    kind: str, log: ClickLog, schedule: BiasSchedule, clip: float | None = None
) -> PseudoLabels:
    """Mean correction weight per displayed (query, doc), with impression counts."""
    wsum, imps, _ = weight_sums(kind, log, schedule, clip)
    gamma_hat: dict[tuple[int, int], float] = {}
    impressions: dict[tuple[int, int], int] = {}
    for qid, w in wsum.items():
        n = imps[qid]
        for d in np.nonzero(n > 0)[0]:
            gamma_hat[(qid, int(d))] = float(w[d] / n[d])
            impressions[(qid, int(d))] = int(n[d])
    return PseudoLabels(gamma_hat, impressions)
