"""Document scorers (linear and elu-MLP) with exact reverse-mode gradients.

A model is a flat parameter vector plus an architecture descriptor. The
architecture is a tuple of hidden-layer sizes; the empty tuple is a plain
linear scorer. Hidden layers use elu, the output is a single raw score.
The optional activation head (sigmoid / softmax / soft-min-max) is only
applied explicitly via `apply_head`; scoring itself always returns raw
scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Query

HEADS = ("none", "sigmoid", "softmax", "soft-min-max")
SIGMOID_CLAMP = 30.0  # inputs are clamped to +- this before exponentiation


def layer_shapes(architecture: tuple[int, ...], feature_dim: int) -> list[tuple[int, int]]:
    sizes = [feature_dim, *architecture, 1]
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def parameter_count(architecture: tuple[int, ...], feature_dim: int) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in layer_shapes(architecture, feature_dim))


@dataclass(eq=False)
class ScoringModel:
    architecture: tuple[int, ...]
    feature_dim: int
    params: np.ndarray
    activation_head: str = "none"

    def __post_init__(self):
        self.architecture = tuple(int(h) for h in self.architecture)
        if any(h < 1 for h in self.architecture):
            raise ValueError(f"hidden sizes must be >= 1: {self.architecture}")
        if self.activation_head not in HEADS:
            raise ValueError(f"unknown activation head {self.activation_head!r}")
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = parameter_count(self.architecture, self.feature_dim)
        if self.params.shape != (expected,):
            raise ValueError(
                f"parameter vector has shape {self.params.shape}, architecture "
                f"{self.architecture} with feature_dim {self.feature_dim} needs ({expected},)"
            )

    def copy(self) -> "ScoringModel":
        return ScoringModel(self.architecture, self.feature_dim, self.params.copy(), self.activation_head)

    def layers(self):
        """Yield (W, b) views into the flat parameter vector, layer by layer."""
        offset = 0
        for n_in, n_out in layer_shapes(self.architecture, self.feature_dim):
            w = self.params[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = self.params[offset:offset + n_out]
            offset += n_out
            yield w, b


def init_model(
    architecture: tuple[int, ...],
    feature_dim: int,
    seed: int,
    activation_head: str = "none",
) -> ScoringModel:
    """Seeded init: every layer parameter uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in layer_shapes(tuple(architecture), feature_dim):
        bound = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out + n_out))
    return ScoringModel(tuple(architecture), feature_dim, np.concatenate(chunks), activation_head)


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(z))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def forward_with_cache(
    model: ScoringModel,
    features: np.ndarray,
    dropout_rate: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
):
    """Batch forward pass; returns (scores, cache) for a later backward pass.

    Dropout, when enabled, uses inverted scaling and is applied to the
    outputs of the last two hidden layers only.
    """
    x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != model.feature_dim:
        raise ValueError(f"feature dim {x.shape[1]} does not match model dim {model.feature_dim}")

    layers = list(model.layers())
    n_hidden = len(layers) - 1
    dropped = {n_hidden - 2, n_hidden - 1} if dropout_rate > 0 else set()
    if dropout_rate > 0 and dropout_rng is None:
        raise ValueError("dropout requires an rng")

    activations = [x]
    pre_acts = []
    masks = []
    a = x
    for li, (w, b) in enumerate(layers[:-1]):
        z = a @ w + b
        a = _elu(z)
        mask = None
        if li in dropped:
            mask = (dropout_rng.random(a.shape) >= dropout_rate) / (1.0 - dropout_rate)
            a = a * mask
        pre_acts.append(z)
        masks.append(mask)
        activations.append(a)
    w_out, b_out = layers[-1]
    scores = (a @ w_out + b_out)[:, 0]
    cache = (activations, pre_acts, masks, squeeze)
    return (scores[0] if squeeze else scores), cache


def score_query(model: ScoringModel, features: np.ndarray) -> np.ndarray:
    """Raw scores for a feature matrix; the activation head is not applied."""
    return forward_with_cache(model, features)[0]


def score(model: ScoringModel, features: np.ndarray) -> float:
    """Raw score of a single feature vector."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1:
        raise ValueError("score expects a single feature vector")
    return float(forward_with_cache(model, feats)[0])


def backprop_scores(model: ScoringModel, cache, score_grads: np.ndarray) -> np.ndarray:
    """Gradient of sum_i score_grads[i] * score_i w.r.t. the flat parameters."""
    activations, pre_acts, masks, squeeze = cache
    g = np.asarray(score_grads, dtype=np.float64)
    if squeeze:
        g = np.atleast_1d(g)
    g = g[:, None]

    layers = list(model.layers())
    grads: list[np.ndarray] = [np.empty(0)] * len(layers)
    w_out, _ = layers[-1]
    grads[-1] = np.concatenate([(activations[-1].T @ g).ravel(), g.sum(axis=0)])
    upstream = g @ w_out.T
    for li in range(len(layers) - 2, -1, -1):
        if masks[li] is not None:
            upstream = upstream * masks[li]
        gz = upstream * _elu_grad(pre_acts[li])
        w, _ = layers[li]
        grads[li] = np.concatenate([(activations[li].T @ gz).ravel(), gz.sum(axis=0)])
        upstream = gz @ w.T
    return np.concatenate(grads)


def grad_score(model: ScoringModel, features: np.ndarray) -> np.ndarray:
    """Exact gradient of the raw score w.r.t. the flat parameter vector."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1:
        raise ValueError("grad_score expects a single feature vector")
    _, cache = forward_with_cache(model, feats)
    return backprop_scores(model, cache, np.array([1.0]))


@dataclass(eq=False)
class Ranking:
    query_id: int
    ordered_doc_ids: np.ndarray  # position p holds the doc displayed at rank p+1

    def __post_init__(self):
        self.ordered_doc_ids = np.asarray(self.ordered_doc_ids, dtype=np.int64)
        if sorted(self.ordered_doc_ids.tolist()) != list(range(self.ordered_doc_ids.size)):
            raise ValueError("ordered_doc_ids is not a permutation of 0..n-1")

    def __len__(self) -> int:
        return int(self.ordered_doc_ids.size)


def rank_query(model: ScoringModel, query: Query) -> Ranking:
    """Rank by descending score; ties broken by ascending doc id."""
    scores = score_query(model, query.feature_matrix)
    order = np.argsort(-scores, kind="stable")
    return Ranking(query.query_id, order)


def apply_head(activation: str, scores) -> np.ndarray:
    """Map a query's raw score vector through an activation head.

    sigmoid is elementwise (inputs clamped to +-30); softmax normalizes over
    the query; soft-min-max maps the minimum score to 0 and the maximum to 1
    without forcing a sum of one. An all-equal input is a 0/0 for
    soft-min-max and is defined as 0.5 everywhere.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score vector")
    if activation == "none":
        return s.copy()
    if activation == "sigmoid":
        z = np.clip(s, -SIGMOID_CLAMP, SIGMOID_CLAMP)
        return 1.0 / (1.0 + np.exp(-z))
    if activation == "softmax":
        e = np.exp(s - s.max())
        return e / e.sum()
    if activation == "soft-min-max":
        m, big = s.min(), s.max()
        if m == big:
            return np.full_like(s, 0.5)
        u = np.exp(s - big)
        u_min = np.exp(m - big)
        return (u - u_min) / (1.0 - u_min)
    raise ValueError(f"unknown activation head {activation!r}")


def head_backward(activation: str, scores, upstream) -> np.ndarray:
    """Propagate a gradient from head outputs back to the raw scores."""
    s = np.asarray(scores, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if activation == "none":
        return up.copy()
    if activation == "sigmoid":
        y = apply_head("sigmoid", s)
        return up * y * (1.0 - y)
    if activation == "softmax":
        y = apply_head("softmax", s)
        return y * (up - float(np.dot(up, y)))
    if activation == "soft-min-max":
        m, big = s.min(), s.max()
        if m == big:
            return np.zeros_like(s)
        u = np.exp(s - big)
        u_min = np.exp(m - big)
        denom = 1.0 - u_min
        y = (u - u_min) / denom
        grad = up * u / denom
        j_min = int(np.argmin(s))
        j_max = int(np.argmax(s))
        up_sum = float(up.sum())
        up_y = float(np.dot(up, y))
        grad[j_min] += u_min * (up_y - up_sum) / denom
        grad[j_max] -= up_y / denom
        return grad
    raise ValueError(f"unknown activation head {activation!r}")


def save_model(model: ScoringModel, path) -> None:
    """Write a text checkpoint; floats use repr so reloads are bit-identical."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("cltrlab-model v1\n")
        fh.write("architecture=" + ",".join(str(h) for h in model.architecture) + "\n")
        fh.write(f"feature_dim={model.feature_dim}\n")
        fh.write(f"head={model.activation_head}\n")
        fh.write(f"params={model.params.size}\n")
        for v in model.params:
            fh.write(repr(float(v)) + "\n")


def load_model(path) -> ScoringModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "cltrlab-model v1":
        raise ValueError(f"{path}: not a cltrlab model checkpoint")
    fields = dict(line.split("=", 1) for line in lines[1:5])
    arch = tuple(int(t) for t in fields["architecture"].split(",") if t)
    n = int(fields["params"])
    params = np.array([float(v) for v in lines[5:5 + n]], dtype=np.float64)
    return ScoringModel(arch, int(fields["feature_dim"]), params, fields["head"])
