"""Pairwise lambda-gradient training with AdaGrad.

The objective per query is a DCG-weighted pairwise logistic loss over all
ordered label pairs (l_i > l_j):

    loss = sum_{l_i > l_j} (l_i - l_j) * |dcg_w(rank_i) - dcg_w(rank_j)|
           * log(1 + exp(-sigma * (s_i - s_j)))

where the rank-weight difference is taken at the model's current ranks and
treated as a constant, in the usual lambda-gradient fashion. Labels are
arbitrary reals, so pseudo-labels from the affine estimator (which can be
negative) form pairs like any other label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, Query
from .estimators import PseudoLabels
from .metrics import lambda_dcg
from .ranker import ScoringModel, backprop_scores, forward_with_cache, score_query

logger = logging.getLogger(__name__)

_EXP_CLAMP = 500.0


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 32
    seed: int = 0
    sigma: float = 1.0  # pairwise logistic sharpness
    optimizer: str = "adagrad"
    adagrad_eps: float = 1e-8
    dropout: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.optimizer != "adagrad":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


class Adagrad:
    """Per-parameter learning rates from accumulated squared gradients."""

    def __init__(self, n_params: int, learning_rate: float, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.eps = eps
        self.accum = np.zeros(n_params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.accum += grad * grad
        params -= self.learning_rate * grad / (np.sqrt(self.accum) + self.eps)


def _current_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def pair_weight_matrix(scores: np.ndarray, labels: np.ndarray, lambda_fn=lambda_dcg) -> np.ndarray:
    """Weight (l_i - l_j) * |lam_i - lam_j| for ordered pairs with l_i > l_j, else 0."""
    lam = lambda_fn(_current_ranks(np.asarray(scores, dtype=np.float64)))
    dl = np.subtract.outer(labels, labels)
    dlam = np.abs(np.subtract.outer(lam, lam))
    return np.where(dl > 0, dl * dlam, 0.0)


def pairwise_loss(
    scores: np.ndarray,
    labels: np.ndarray,
    lambda_fn=lambda_dcg,
    sigma: float = 1.0,
    pair_weights: np.ndarray | None = None,
) -> float:
    """Weighted pairwise logistic loss; pass pair_weights to freeze the rank weights."""
    s = np.asarray(scores, dtype=np.float64)
    w = pair_weight_matrix(s, np.asarray(labels, dtype=np.float64), lambda_fn) if pair_weights is None else pair_weights
    sdiff = np.clip(sigma * np.subtract.outer(s, s), -_EXP_CLAMP, _EXP_CLAMP)
    return float(np.sum(w * np.log1p(np.exp(-sdiff))))


def lambda_gradients(
    scores: np.ndarray,
    labels: np.ndarray,
    lambda_fn=lambda_dcg,
    sigma: float = 1.0,
    pair_weights: np.ndarray | None = None,
) -> np.ndarray:
    """d(loss)/d(score) per document; contributions per pair are equal and opposite."""
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels, dtype=np.float64)
    if s.size < 2:
        raise ValueError("lambda gradients need at least two documents")
    w = pair_weight_matrix(s, l, lambda_fn) if pair_weights is None else pair_weights
    sdiff = np.clip(sigma * np.subtract.outer(s, s), -_EXP_CLAMP, _EXP_CLAMP)
    g = w * sigma / (1.0 + np.exp(sdiff))  # sigma * logistic(-sigma*(s_i - s_j)), weighted
    return g.sum(axis=0) - g.sum(axis=1)


@dataclass(eq=False)
class TrainResult:
    model: ScoringModel
    trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _train_lambda(
    queries: list[Query],
    labels_by_qid: dict[int, np.ndarray],
    template: ScoringModel,
    config: TrainConfig,
    validation_fn=None,
    lambda_fn=lambda_dcg,
) -> TrainResult:
    model = template.copy()
    opt = Adagrad(model.params.size, config.learning_rate, config.adagrad_eps)
    rng = np.random.default_rng(config.seed)

    def full_loss() -> float:
        total = 0.0
        for q in queries:
            total += pairwise_loss(score_query(model, q.feature_matrix), labels_by_qid[q.query_id],
                                   lambda_fn, config.sigma)
        return total

    trace: list[dict] = []
    best_value = -np.inf
    best_params = model.params.copy()
    best_epoch = 0

    def record(epoch: int, loss: float):
        nonlocal best_value, best_params, best_epoch
        row = {"epoch": epoch, "train_loss": loss}
        if validation_fn is not None:
            value = float(validation_fn(model))
            row["validation_delta_hat"] = value
            if value > best_value:
                best_value, best_params, best_epoch = value, model.params.copy(), epoch
        trace.append(row)

    record(0, full_loss())
    for epoch in range(1, config.epochs + 1):
        epoch_loss = 0.0
        for qi in rng.permutation(len(queries)):
            q = queries[qi]
            labels = labels_by_qid[q.query_id]
            scores, cache = forward_with_cache(
                model, q.feature_matrix,
                dropout_rate=config.dropout, dropout_rng=rng if config.dropout > 0 else None,
            )
            weights = pair_weight_matrix(scores, labels, lambda_fn)
            epoch_loss += pairwise_loss(scores, labels, lambda_fn, config.sigma, pair_weights=weights)
            if not weights.any():
                continue
            score_grads = lambda_gradients(scores, labels, lambda_fn, config.sigma, pair_weights=weights)
            opt.step(model.params, backprop_scores(model, cache, score_grads))
        record(epoch, epoch_loss)

    if validation_fn is not None:
        model.params[:] = best_params
    else:
        best_epoch = config.epochs
    return TrainResult(model, trace, best_epoch)


def train_full_info(
    queries: list[Query],
    template: ScoringModel,
    config: TrainConfig,
    validation_fn=None,
) -> TrainResult:
    """Supervised skyline: train on the true binary relevance labels."""
    labels = {q.query_id: q.binary_labels.astype(np.float64) for q in queries}
    return _train_lambda(queries, labels, template, config, validation_fn)


def train_counterfactual(
    queries: list[Query],
    pseudo: PseudoLabels,
    template: ScoringModel,
    config: TrainConfig,
    validation_fn=None,
) -> TrainResult:
    """Train against estimator pseudo-labels; never-displayed docs default to 0.

    With a validation function the returned model is the epoch with the best
    validation estimate, otherwise the final epoch.
    """
    labels: dict[int, np.ndarray] = {}
    uncovered = 0
    for q in queries:
        labels[q.query_id], missing = pseudo.label_vector(q, default=0.0)
        uncovered += missing
    if uncovered:
        logger.warning("pseudo-labels missing for %d never-displayed documents; defaulting to 0.0", uncovered)
    return _train_lambda(queries, labels, template, config, validation_fn)


def train_production(
    dataset: Dataset,
    template: ScoringModel,
    config: TrainConfig,
    n_queries: int = 20,
    seed: int = 0,
) -> TrainResult:
    """Full-info training on a small seeded random subset of training queries.

    Stands in for a deployed system that is decent but leaves clear room for
    improvement.
    """
    if n_queries > len(dataset.train):
        raise ValueError(f"n_queries {n_queries} exceeds {len(dataset.train)} training queries")
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(dataset.train), size=n_queries, replace=False).tolist())
    subset = [dataset.train[i] for i in picked]
    return train_full_info(subset, template, config)


def write_trace_csv(rows: list[dict], path, header_lines: list[str] | None = None) -> None:
    """Per-epoch CSV trace; the test metric column is oracle-only (true labels)."""
    path = Path(path)
    columns = ["epoch", "train_loss", "validation_delta_hat", "test_ndcg10"]
    extra = [k for k in rows[0] if k not in columns] if rows else []
    cols = extra + [c for c in columns if any(c in r for r in rows)]
    with path.open("w", encoding="utf-8") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r.get(c, "")) for c in cols) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
