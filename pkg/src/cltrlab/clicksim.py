"""Simulation of logged interactions under a fixed production ranker.

Each session samples a query uniformly at random, displays the production
ranking, and draws one independent Bernoulli click per displayed document
with probability alpha_k * gamma + beta_k at its display rank k. Logs are
stored columnar (flat click array plus per-session offsets) so million-click
logs stay cheap; distinct displayed orderings are deduplicated in a table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biasmodel import BiasSchedule
from .dataset import Query
from .ranker import Ranking, ScoringModel, rank_query

_CHUNK = 8192  # sessions simulated per vectorized batch


@dataclass(eq=False)
class ClickLog:
    query_ids: np.ndarray  # (n_sessions,)
    ranking_idx: np.ndarray  # (n_sessions,) index into ranking_table
    ranking_table: list[np.ndarray]  # distinct displayed orderings (doc ids)
    ranking_qid: list[int]  # query id owning each table entry
    clicks_flat: np.ndarray  # uint8, concatenated session click vectors
    offsets: np.ndarray  # (n_sessions + 1,) into clicks_flat
    schedule: BiasSchedule
    seed: int = 0
    budget: int | None = None
    budget_unit: str = "sessions"

    @property
    def n_sessions(self) -> int:
        return int(self.query_ids.size)

    @property
    def total_clicks(self) -> int:
        return int(self.clicks_flat.sum())

    def session(self, i: int) -> tuple[int, np.ndarray, np.ndarray]:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return int(self.query_ids[i]), self.ranking_table[self.ranking_idx[i]], self.clicks_flat[lo:hi]

    def __iter__(self):
        return (self.session(i) for i in range(self.n_sessions))

    @classmethod
    def from_sessions(cls, sessions, schedule, seed=0, budget=None, budget_unit="sessions"):
        """Build a log from (query_id, ranking, clicks) triples.

        `ranking` may be a Ranking or a doc-id array.
        """
        qids, ridx, clicks_parts = [], [], []
        table: list[np.ndarray] = []
        table_qid: list[int] = []
        keys: dict[tuple, int] = {}
        for qid, ranking, clicks in sessions:
            order = ranking.ordered_doc_ids if isinstance(ranking, Ranking) else np.asarray(ranking, dtype=np.int64)
            clicks = np.asarray(clicks, dtype=np.uint8)
            if clicks.size != order.size:
                raise ValueError("click vector length does not match ranking length")
            key = (int(qid), tuple(order.tolist()))
            if key not in keys:
                keys[key] = len(table)
                table.append(order.copy())
                table_qid.append(int(qid))
            qids.append(int(qid))
            ridx.append(keys[key])
            clicks_parts.append(clicks)
        if not qids:
            raise ValueError("no sessions")
        lengths = np.array([c.size for c in clicks_parts], dtype=np.int64)
        offsets = np.zeros(len(qids) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        return cls(
            query_ids=np.array(qids, dtype=np.int64),
            ranking_idx=np.array(ridx, dtype=np.int64),
            ranking_table=table,
            ranking_qid=table_qid,
            clicks_flat=np.concatenate(clicks_parts),
            offsets=offsets,
            schedule=schedule,
            seed=seed,
            budget=budget,
            budget_unit=budget_unit,
        )


@dataclass(eq=False)
class DisplayGroup:
    """All sessions of one (query, displayed ordering) pair, aggregated."""

    query_id: int
    ranking: np.ndarray  # doc ids in display order
    n_sessions: int
    clicks_per_doc: np.ndarray  # indexed by doc id


def group_by_display(log: ClickLog) -> list[DisplayGroup]:
    """Aggregate a log into per-(query, ranking) click counts, one pass."""
    n_groups = len(log.ranking_table)
    lengths = np.diff(log.offsets)
    max_len = int(lengths.max())
    counts = np.zeros((n_groups, max_len), dtype=np.int64)
    group_per_flat = np.repeat(log.ranking_idx, lengths)
    pos_per_flat = np.arange(log.offsets[-1]) - np.repeat(log.offsets[:-1], lengths)
    np.add.at(counts, (group_per_flat, pos_per_flat), log.clicks_flat)
    sessions_per_group = np.bincount(log.ranking_idx, minlength=n_groups)

    groups = []
    for g in range(n_groups):
        ranking = log.ranking_table[g]
        by_doc = np.zeros(ranking.size, dtype=np.int64)
        by_doc[ranking] = counts[g, : ranking.size]
        groups.append(DisplayGroup(log.ranking_qid[g], ranking, int(sessions_per_group[g]), by_doc))
    return groups


def simulate_session(
    query: Query,
    ranking: Ranking,
    gamma: np.ndarray,
    schedule: BiasSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One session: independent Bernoulli click per displayed document."""
    order = ranking.ordered_doc_ids
    if order.size > schedule.max_rank:
        raise ValueError(f"ranking of {order.size} documents exceeds schedule max_rank {schedule.max_rank}")
    g = np.asarray(gamma, dtype=np.float64)[order]
    p = schedule.alpha[: order.size] * g + schedule.beta[: order.size]
    return (rng.random(order.size) < p).astype(np.uint8)


def simulate_log(
    queries: list[Query],
    production: ScoringModel,
    schedule: BiasSchedule,
    budget: int,
    budget_unit: str = "clicks",
    seed: int = 0,
) -> ClickLog:
    """Simulate sessions until the click or session budget is reached.

    Queries are sampled uniformly; the production ranking per query is fixed
    for the whole log. Deterministic for a fixed seed. With unit "clicks"
    the final session may overshoot the budget by at most one ranking length.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget_unit not in ("clicks", "sessions"):
        raise ValueError(f"unknown budget unit {budget_unit!r}")
    if not queries:
        raise ValueError("empty split")

    rankings = [rank_query(production, q) for q in queries]
    lengths = np.array([len(r) for r in rankings], dtype=np.int64)
    if lengths.max() > schedule.max_rank:
        raise ValueError(
            f"longest ranking ({lengths.max()}) exceeds schedule max_rank {schedule.max_rank}"
        )
    probs = [
        schedule.alpha[: len(r)] * q.binary_labels[r.ordered_doc_ids] + schedule.beta[: len(r)]
        for q, r in zip(queries, rankings)
    ]
    prob_concat = np.concatenate(probs)
    prob_offsets = np.zeros(len(queries) + 1, dtype=np.int64)
    np.cumsum(lengths, out=prob_offsets[1:])
    if budget_unit == "clicks" and prob_concat.max() <= 0.0:
        raise RuntimeError("click budget unreachable: every click probability is zero")

    rng_query = np.random.default_rng([seed, 0])
    rng_click = np.random.default_rng([seed, 1])

    qidx_parts, clicks_parts = [], []
    clicks_per_session_parts = []
    done = 0.0
    while True:
        qidx = rng_query.integers(0, len(queries), size=_CHUNK)
        lens = lengths[qidx]
        ends = np.cumsum(lens)
        starts = ends - lens
        flat_q = np.repeat(qidx, lens)
        within = np.arange(ends[-1]) - np.repeat(starts, lens)
        p = prob_concat[prob_offsets[flat_q] + within]
        clicks = (rng_click.random(p.size) < p).astype(np.uint8)
        per_session = np.add.reduceat(clicks, starts)

        unit_per_session = per_session if budget_unit == "clicks" else np.ones(_CHUNK, dtype=np.int64)
        running = done + np.cumsum(unit_per_session)
        hit = np.nonzero(running >= budget)[0]
        if hit.size:
            cut = int(hit[0]) + 1
            qidx_parts.append(qidx[:cut])
            clicks_parts.append(clicks[: ends[cut - 1]])
            clicks_per_session_parts.append(per_session[:cut])
            break
        qidx_parts.append(qidx)
        clicks_parts.append(clicks)
        clicks_per_session_parts.append(per_session)
        done = float(running[-1])

    qidx_all = np.concatenate(qidx_parts)
    lens_all = lengths[qidx_all]
    offsets = np.zeros(qidx_all.size + 1, dtype=np.int64)
    np.cumsum(lens_all, out=offsets[1:])
    qid_by_index = np.array([q.query_id for q in queries], dtype=np.int64)
    return ClickLog(
        query_ids=qid_by_index[qidx_all],
        ranking_idx=qidx_all.astype(np.int64),
        ranking_table=[r.ordered_doc_ids for r in rankings],
        ranking_qid=[q.query_id for q in queries],
        clicks_flat=np.concatenate(clicks_parts),
        offsets=offsets,
        schedule=schedule,
        seed=seed,
        budget=budget,
        budget_unit=budget_unit,
    )


def write_click_log(log: ClickLog, path) -> None:
    """Line-oriented text format with a header recording seed, budget, schedule."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("# cltrlab-clicklog v1\n")
        fh.write(f"# seed={log.seed}\n")
        fh.write(f"# budget={'' if log.budget is None else log.budget}\n")
        fh.write(f"# budget_unit={log.budget_unit}\n")
        fh.write(f"# schedule_checked={int(log.schedule.checked)}\n")
        s = log.schedule
        for k in range(s.max_rank):
            fh.write(f"# schedule {k + 1} {s.theta[k]!r} {s.eps_plus[k]!r} {s.eps_minus[k]!r}\n")
        for i, (qid, ranking, clicks) in enumerate(log):
            fh.write(
                f"session {i} qid:{qid} "
                f"ranking:{','.join(map(str, ranking.tolist()))} "
                f"clicks:{''.join(map(str, clicks.tolist()))}\n"
            )


def read_click_log(path) -> ClickLog:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "# cltrlab-clicklog v1":
        raise ValueError(f"{path}: not a cltrlab click log")
    meta: dict[str, str] = {}
    sched_rows: list[tuple[float, float, float]] = []
    sessions = []
    for line in lines[1:]:
        if line.startswith("# schedule "):
            _, _, k, th, ep, em = line.split(" ")
            sched_rows.append((float(th), float(ep), float(em)))
        elif line.startswith("# "):
            key, _, val = line[2:].partition("=")
            meta[key] = val
        elif line.startswith("session "):
            parts = line.split(" ")
            qid = int(parts[2][4:])
            ranking = np.array([int(t) for t in parts[3][8:].split(",")], dtype=np.int64)
            clicks = np.array([int(c) for c in parts[4][7:]], dtype=np.uint8)
            sessions.append((qid, ranking, clicks))
        elif line.strip():
            raise ValueError(f"{path}: unrecognized line {line!r}")
    schedule = BiasSchedule(
        np.array([r[0] for r in sched_rows]),
        np.array([r[1] for r in sched_rows]),
        np.array([r[2] for r in sched_rows]),
        checked=bool(int(meta.get("schedule_checked", "1"))),
    )
    return ClickLog.from_sessions(
        sessions,
        schedule,
        seed=int(meta["seed"]),
        budget=None if meta["budget"] == "" else int(meta["budget"]),
        budget_unit=meta["budget_unit"],
    )
