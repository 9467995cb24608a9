"""Learning-to-rank datasets: text-format parsing, synthetic generation, splits.

The on-disk format is the standard LTR text format, one document per line:

    <graded_label> qid:<query_id> <feature_id>:<value> ... [# comment]

Feature ids are 1-based and may be sparse; missing ids are filled with 0.0
after parsing, so the in-memory representation is always dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRADE_MIN = 0
GRADE_MAX = 4
RELEVANT_ABOVE = 2  # binary relevance: graded label strictly greater than this

TRAIN_FRACTION = 0.70
VALIDATION_FRACTION = 0.15

LABEL_NOISE_STD = 0.5  # gaussian noise on the planted latent score


class LtrFormatError(ValueError):
    """Malformed LTR text file; message carries the 1-based line number."""


def binarize(graded_label: int) -> int:
    """Collapse a 0..4 graded label to binary relevance (1 iff label > 2)."""
    if not GRADE_MIN <= graded_label <= GRADE_MAX:
        raise ValueError(f"graded label {graded_label} outside [{GRADE_MIN}, {GRADE_MAX}]")
    return int(graded_label > RELEVANT_ABOVE)


@dataclass(eq=False)
class Document:
    doc_id: int
    features: np.ndarray
    graded_label: int
    binary_label: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.binary_label != binarize(self.graded_label):
            raise ValueError(
                f"binary label {self.binary_label} inconsistent with graded "
                f"label {self.graded_label}"
            )


def make_document(doc_id: int, features, graded_label: int) -> Document:
    return Document(doc_id, features, graded_label, binarize(graded_label))


@dataclass(eq=False)
class Query:
    query_id: int
    documents: list[Document]
    feature_matrix: np.ndarray = field(init=False, repr=False)
    graded_labels: np.ndarray = field(init=False, repr=False)
    binary_labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.documents:
            raise ValueError(f"query {self.query_id} has no documents")
        ids = [d.doc_id for d in self.documents]
        if ids != list(range(len(ids))):
            raise ValueError(f"query {self.query_id} doc ids are not 0..n-1: {ids}")
        dims = {d.features.shape for d in self.documents}
        if len(dims) != 1:
            raise ValueError(f"query {self.query_id} has mixed feature dimensions")
        self.feature_matrix = np.stack([d.features for d in self.documents])
        self.graded_labels = np.array([d.graded_label for d in self.documents], dtype=np.int64)
        self.binary_labels = np.array([d.binary_label for d in self.documents], dtype=np.int64)

    @property
    def n_docs(self) -> int:
        return len(self.documents)


@dataclass(eq=False)
class Dataset:
    train: list[Query]
    validation: list[Query]
    test: list[Query]
    feature_dim: int

    def __post_init__(self):
        seen: set[int] = set()
        for q in self.all_queries():
            if q.query_id in seen:
                raise ValueError(f"duplicate query id {q.query_id} across splits")
            seen.add(q.query_id)

    def all_queries(self) -> list[Query]:
        return [*self.train, *self.validation, *self.test]

    def split(self, name: str) -> list[Query]:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def max_docs_per_query(self) -> int:
        return max(q.n_docs for q in self.all_queries())


def _parse_line(line: str, lineno: int) -> tuple[int, int, dict[int, float]]:
    tokens = line.split()
    if len(tokens) < 2:
        raise LtrFormatError(f"line {lineno}: expected '<label> qid:<q> ...'")
    try:
        graded = int(tokens[0])
    except ValueError:
        raise LtrFormatError(f"line {lineno}: label {tokens[0]!r} is not an integer") from None
    if not GRADE_MIN <= graded <= GRADE_MAX:
        raise LtrFormatError(f"line {lineno}: label {graded} outside [{GRADE_MIN}, {GRADE_MAX}]")
    if not tokens[1].startswith("qid:"):
        raise LtrFormatError(f"line {lineno}: second token must be 'qid:<id>', got {tokens[1]!r}")
    try:
        qid = int(tokens[1][4:])
    except ValueError:
        raise LtrFormatError(f"line {lineno}: bad query id in {tokens[1]!r}") from None
    feats: dict[int, float] = {}
    for tok in tokens[2:]:
        fid_str, sep, val_str = tok.partition(":")
        if not sep:
            raise LtrFormatError(f"line {lineno}: feature token {tok!r} is not '<id>:<value>'")
        try:
            fid = int(fid_str)
            val = float(val_str)
        except ValueError:
            raise LtrFormatError(f"line {lineno}: feature token {tok!r} is not '<id>:<value>'") from None
        if fid < 1:
            raise LtrFormatError(f"line {lineno}: feature ids are 1-based, got {fid}")
        if fid in feats:
            raise LtrFormatError(f"line {lineno}: duplicate feature id {fid}")
        feats[fid] = val
    return graded, qid, feats


def parse_ltr_file(path) -> list[Query]:
    """Parse an LTR text file into queries grouped by contiguous qid blocks.

    Documents keep file order within their query; qid blocks must be
    contiguous (a qid reappearing after a different qid is an error, which
    catches shuffled or corrupted files).
    """
    path = Path(path)
    rows: list[tuple[int, int, dict[int, float]]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            rows.append(_parse_line(line, lineno) + (lineno,))
    if not rows:
        raise LtrFormatError(f"{path}: no documents found")

    feature_dim = max((max(feats) for _, _, feats, _ in rows if feats), default=0)
    if feature_dim == 0:
        raise LtrFormatError(f"{path}: no features found in any document")

    queries: list[Query] = []
    finished_qids: set[int] = set()
    current_qid: int | None = None
    current_docs: list[Document] = []

    def close_block():
        if current_qid is not None:
            queries.append(Query(current_qid, current_docs))
            finished_qids.add(current_qid)

    for graded, qid, feats, lineno in rows:
        if qid != current_qid:
            if qid in finished_qids:
                raise LtrFormatError(f"line {lineno}: non-contiguous qid blocks (qid {qid} reappears)")
            close_block()
            current_qid = qid
            current_docs = []
        dense = np.zeros(feature_dim)
        for fid, val in feats.items():
            dense[fid - 1] = val
        current_docs.append(make_document(len(current_docs), dense, graded))
    close_block()
    return queries


def write_ltr_file(queries: list[Query], path) -> None:
    """Write queries in the LTR text format with dense 6-significant-digit features."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for q in queries:
            for d in q.documents:
                feats = " ".join(f"{i + 1}:{v:.6g}" for i, v in enumerate(d.features))
                fh.write(f"{d.graded_label} qid:{q.query_id} {feats}\n")


def _quantize6(values: np.ndarray) -> np.ndarray:
    # Snap to 6 significant digits so text round-trips reproduce values exactly.
    flat = values.ravel()
    out = np.fromiter((float(f"{v:.6g}") for v in flat), dtype=np.float64, count=flat.size)
    return out.reshape(values.shape)


def generate_synthetic(
    n_queries: int,
    docs_per_query: int,
    feature_dim: int,
    seed: int,
    return_planted: bool = False,
):
    """Generate a seeded synthetic dataset with a planted linear relevance signal.

    Features are i.i.d. standard normal. A hidden weight vector defines a
    latent score w.x plus gaussian noise; graded labels are the global
    quintile bucket of the latent score, so binary relevance (label > 2) is
    pinned at roughly 40% of documents. Splits are 70/15/15% by query.
    """
    if n_queries < 1 or docs_per_query < 1 or feature_dim < 1:
        raise ValueError("n_queries, docs_per_query, and feature_dim must all be >= 1")
    rng = np.random.default_rng(seed)
    planted = rng.standard_normal(feature_dim)
    n_docs = n_queries * docs_per_query
    features = _quantize6(rng.standard_normal((n_docs, feature_dim)))
    latent = features @ planted + LABEL_NOISE_STD * rng.standard_normal(n_docs)
    edges = np.quantile(latent, [0.2, 0.4, 0.6, 0.8])
    graded = np.searchsorted(edges, latent, side="right")

    queries = []
    for qi in range(n_queries):
        lo = qi * docs_per_query
        docs = [
            make_document(di, features[lo + di], int(graded[lo + di]))
            for di in range(docs_per_query)
        ]
        queries.append(Query(qi, docs))

    n_train = int(n_queries * TRAIN_FRACTION)
    n_val = int(n_queries * VALIDATION_FRACTION)
    dataset = Dataset(
        train=queries[:n_train],
        validation=queries[n_train:n_train + n_val],
        test=queries[n_train + n_val:],
        feature_dim=feature_dim,
    )
    if return_planted:
        return dataset, planted
    return dataset


def load_dataset(train_path, validation_path, test_path) -> Dataset:
    """Load a dataset from three LTR files, padding features to a common width."""
    splits = [parse_ltr_file(p) for p in (train_path, validation_path, test_path)]
    dim = max(q.feature_matrix.shape[1] for split in splits for q in split)

    def pad(queries: list[Query]) -> list[Query]:
        out = []
        for q in queries:
            if q.feature_matrix.shape[1] == dim:
                out.append(q)
                continue
            docs = []
            for d in q.documents:
                feats = np.zeros(dim)
                feats[: d.features.size] = d.features
                docs.append(Document(d.doc_id, feats, d.graded_label, d.binary_label))
            out.append(Query(q.query_id, docs))
        return out

    train, validation, test = (pad(s) for s in splits)
    return Dataset(train=train, validation=validation, test=test, feature_dim=dim)
