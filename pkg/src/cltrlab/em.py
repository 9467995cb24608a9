"""Regression EM for the two per-rank bias parameters of the trust-bias model.

Only two quantities per rank are identifiable from clicks and needed by the
affine correction:

    zeta_plus_k  = P(C=1 | R=1, k) = alpha_k + beta_k
    zeta_minus_k = P(C=1 | R=0, k) = beta_k

The expectation step updates zeta from relevance posteriors computed with
Bayes's law from the current relevance model; the maximization step refits
the relevance model (a scorer with a [0,1] activation head) by mean squared
error regression onto those posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .biasmodel import BiasSchedule
from .clicksim import ClickLog, group_by_display
from .dataset import Query
from .ranker import (
    ScoringModel,
    apply_head,
    backprop_scores,
    forward_with_cache,
    head_backward,
    init_model,
)
from .train import Adagrad, TrainConfig

ZETA_MARGIN = 1e-4  # clamp bound and minimum zeta_plus - zeta_minus gap


@dataclass(eq=False)
class ZetaParams:
    zeta_plus: np.ndarray
    zeta_minus: np.ndarray

    def __post_init__(self):
        self.zeta_plus = np.asarray(self.zeta_plus, dtype=np.float64)
        self.zeta_minus = np.asarray(self.zeta_minus, dtype=np.float64)
        if self.zeta_plus.shape != self.zeta_minus.shape or self.zeta_plus.ndim != 1:
            raise ValueError("zeta_plus and zeta_minus must be 1-d arrays of equal length")
        if np.any(self.zeta_minus <= 0) or np.any(self.zeta_plus > 1) or np.any(
            self.zeta_minus >= self.zeta_plus
        ):
            raise ValueError("need 0 < zeta_minus_k < zeta_plus_k <= 1 at every rank")

    @property
    def max_rank(self) -> int:
        return int(self.zeta_plus.size)

    @property
    def alpha(self) -> np.ndarray:
        return self.zeta_plus - self.zeta_minus

    @property
    def beta(self) -> np.ndarray:
        return self.zeta_minus.copy()


def init_zeta(max_rank: int) -> ZetaParams:
    """Deliberately wrong but correctly ordered starting point."""
    k = np.arange(1, max_rank + 1, dtype=np.float64)
    return _project(1.0 / np.sqrt(k), 0.1 / k)


def _project(zeta_plus: np.ndarray, zeta_minus: np.ndarray) -> ZetaParams:
    zp = np.clip(zeta_plus, ZETA_MARGIN, 1.0 - ZETA_MARGIN)
    zm = np.clip(zeta_minus, ZETA_MARGIN, 1.0 - ZETA_MARGIN)
    zm = np.minimum(zm, zp - ZETA_MARGIN)
    zm = np.maximum(zm, ZETA_MARGIN / 2)  # keep positive if zp is at the floor
    return ZetaParams(zp, zm)


def zeta_to_schedule(zeta: ZetaParams) -> BiasSchedule:
    """Schedule exposing the estimated alpha/beta (theta fixed at 1).

    Position bias and perception probabilities are not separately
    identifiable from zeta; this convention keeps the affine correction
    exact while inverse-propensity weights degenerate to raw clicks.
    """
    return BiasSchedule(np.ones(zeta.max_rank), zeta.zeta_plus.copy(), zeta.zeta_minus.copy())


def posterior_relevance(gamma_hat, clicked: int, zeta: ZetaParams, rank: int):
    """P(R=1 | C=clicked) by Bayes inversion of the per-rank click model.

    A zero denominator is only possible at the gamma extremes with
    degenerate zeta; the prior is returned unchanged there.
    """
    if clicked not in (0, 1):
        raise ValueError(f"clicked must be 0 or 1, got {clicked}")
    if not 1 <= rank <= zeta.max_rank:
        raise ValueError(f"rank {rank} outside [1, {zeta.max_rank}]")
    g = np.asarray(gamma_hat, dtype=np.float64)
    scalar = g.ndim == 0
    g = np.atleast_1d(g)
    zp, zm = zeta.zeta_plus[rank - 1], zeta.zeta_minus[rank - 1]
    if clicked:
        num, den = zp * g, zp * g + zm * (1.0 - g)
    else:
        num, den = (1.0 - zp) * g, (1.0 - zp) * g + (1.0 - zm) * (1.0 - g)
    with np.errstate(invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), g)
    return float(out[0]) if scalar else out


def _posteriors_for_positions(gamma: np.ndarray, zp: np.ndarray, zm: np.ndarray):
    """Vectorized click/skip posteriors over display positions."""
    num1 = zp * gamma
    den1 = num1 + zm * (1.0 - gamma)
    p_rel_click = np.where(den1 > 0, num1 / np.where(den1 > 0, den1, 1.0), gamma)
    num0 = (1.0 - zp) * gamma
    den0 = num0 + (1.0 - zm) * (1.0 - gamma)
    p_rel_skip = np.where(den0 > 0, num0 / np.where(den0 > 0, den0, 1.0), gamma)
    return p_rel_click, p_rel_skip


def _head_gamma(model: ScoringModel, query: Query) -> np.ndarray:
    if model.activation_head == "none":
        raise ValueError("relevance model needs a [0,1] activation head")
    scores, _ = forward_with_cache(model, query.feature_matrix)
    return apply_head(model.activation_head, scores)


def e_step(log: ClickLog, queries: list[Query], gamma_model: ScoringModel, zeta: ZetaParams) -> ZetaParams:
    """One expectation step: per-rank zeta updates from relevance posteriors.

    Ranks with no impressions (or a vanishing update denominator) retain
    their current values.
    """
    by_qid = {q.query_id: q for q in queries}
    max_rank = zeta.max_rank
    plus_num = np.zeros(max_rank)
    plus_den = np.zeros(max_rank)
    minus_num = np.zeros(max_rank)
    minus_den = np.zeros(max_rank)

    gamma_cache: dict[int, np.ndarray] = {}
    for grp in group_by_display(log):
        if grp.ranking.size > max_rank:
            raise ValueError(f"log contains rank {grp.ranking.size} beyond zeta max_rank {max_rank}")
        if grp.query_id not in gamma_cache:
            gamma_cache[grp.query_id] = _head_gamma(gamma_model, by_qid[grp.query_id])
        n_pos = grp.ranking.size
        gamma = gamma_cache[grp.query_id][grp.ranking]
        zp, zm = zeta.zeta_plus[:n_pos], zeta.zeta_minus[:n_pos]
        p_rel_click, p_rel_skip = _posteriors_for_positions(gamma, zp, zm)
        c = grp.clicks_per_doc[grp.ranking].astype(np.float64)
        skips = grp.n_sessions - c
        plus_num[:n_pos] += c * p_rel_click
        plus_den[:n_pos] += c * p_rel_click + skips * p_rel_skip
        minus_num[:n_pos] += c * (1.0 - p_rel_click)
        minus_den[:n_pos] += c * (1.0 - p_rel_click) + skips * (1.0 - p_rel_skip)

    new_plus = np.where(plus_den > 0, plus_num / np.where(plus_den > 0, plus_den, 1.0), zeta.zeta_plus)
    new_minus = np.where(minus_den > 0, minus_num / np.where(minus_den > 0, minus_den, 1.0), zeta.zeta_minus)
    return _project(new_plus, new_minus)


def regression_targets(
    log: ClickLog, queries: list[Query], gamma_model: ScoringModel, zeta: ZetaParams
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-query (targets, impression counts): posteriors averaged over sessions."""
    by_qid = {q.query_id: q for q in queries}
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, np.ndarray] = {}
    gamma_cache: dict[int, np.ndarray] = {}
    for grp in group_by_display(log):
        q = by_qid[grp.query_id]
        if grp.query_id not in gamma_cache:
            gamma_cache[grp.query_id] = _head_gamma(gamma_model, q)
            sums[grp.query_id] = np.zeros(q.n_docs)
            counts[grp.query_id] = np.zeros(q.n_docs, dtype=np.int64)
        n_pos = grp.ranking.size
        gamma = gamma_cache[grp.query_id][grp.ranking]
        zp, zm = zeta.zeta_plus[:n_pos], zeta.zeta_minus[:n_pos]
        p_rel_click, p_rel_skip = _posteriors_for_positions(gamma, zp, zm)
        c = grp.clicks_per_doc[grp.ranking].astype(np.float64)
        per_pos = c * p_rel_click + (grp.n_sessions - c) * p_rel_skip
        sums[grp.query_id][grp.ranking] += per_pos
        counts[grp.query_id][grp.ranking] += grp.n_sessions
    return {
        qid: (np.where(counts[qid] > 0, s / np.maximum(counts[qid], 1), 0.0), counts[qid])
        for qid, s in sums.items()
    }


def m_step(
    log: ClickLog,
    queries: list[Query],
    zeta: ZetaParams,
    model: ScoringModel,
    config: TrainConfig,
) -> ScoringModel:
    """Refit the relevance model to posterior targets by MSE gradient descent.

    Targets are computed once from the incoming model's own head outputs and
    held fixed for the configured number of epochs (a generalized M step
    with a bounded budget). Zero epochs return the model unchanged.
    """
    trained = model.copy()
    if config.epochs == 0:
        return trained
    by_qid = {q.query_id: q for q in queries}
    targets = regression_targets(log, queries, model, zeta)
    covered = [by_qid[qid] for qid in sorted(targets)]
    opt = Adagrad(trained.params.size, config.learning_rate, config.adagrad_eps)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        for qi in rng.permutation(len(covered)):
            q = covered[qi]
            t, counts = targets[q.query_id]
            scores, cache = forward_with_cache(trained, q.feature_matrix)
            y = apply_head(trained.activation_head, scores)
            err = np.where(counts > 0, y - t, 0.0)
            dy = 2.0 * err / q.n_docs
            ds = head_backward(trained.activation_head, scores, dy)
            opt.step(trained.params, backprop_scores(trained, cache, ds))
    return trained


@dataclass(eq=False)
class EmResult:
    zeta: ZetaParams
    model: ScoringModel
    trajectory: list[ZetaParams]


def run_em(
    log: ClickLog,
    queries: list[Query],
    head: str,
    iterations: int = 10,
    seed: int = 0,
    architecture: tuple[int, ...] = (32, 16),
    learning_rate: float = 0.05,
    epochs_per_iteration: int = 8,
) -> EmResult:
    """Alternate expectation and maximization steps from a fixed initialization.

    Deterministic given (log, seed, head, iterations); the per-iteration
    zeta trajectory is recorded for export.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if head == "none":
        raise ValueError("EM needs a [0,1] activation head (sigmoid, softmax, or soft-min-max)")
    feature_dim = queries[0].feature_matrix.shape[1]
    max_rank = log.schedule.max_rank
    zeta = init_zeta(max_rank)
    model = init_model(architecture, feature_dim, seed=_mix(seed, 0), activation_head=head)
    trajectory: list[ZetaParams] = []
    for it in range(1, iterations + 1):
        zeta = e_step(log, queries, model, zeta)
        config = TrainConfig(learning_rate=learning_rate, epochs=epochs_per_iteration, seed=_mix(seed, it))
        model = m_step(log, queries, zeta, model, config)
        trajectory.append(zeta)
    return EmResult(zeta, model, trajectory)


def _mix(seed: int, salt: int) -> int:
    return (seed * 1_000_003 + salt) % (2**63)


def write_zeta_csv(trajectory: list[ZetaParams], path, header_lines: list[str] | None = None) -> None:
    """Per-iteration zeta trajectory: iteration, k, zeta_plus, zeta_minus, alpha, beta."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write("iteration,k,zeta_plus,zeta_minus,alpha,beta\n")
        for it, z in enumerate(trajectory, start=1):
            for k in range(z.max_rank):
                fh.write(
                    f"{it},{k + 1},{z.zeta_plus[k]!r},{z.zeta_minus[k]!r},"
                    f"{z.alpha[k]!r},{z.beta[k]!r}\n"
                )
