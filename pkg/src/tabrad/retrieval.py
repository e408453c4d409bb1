"""Similarity-based helper retrieval and aggregation.

All four module kinds operate on flattened per-sample representations
(length d*e): a score function ranks candidates, a value function maps the
selected helpers to vectors, and the helper summary is mixed back into the
target representation with weight lambda.

Kinds:

* ``knn``           — score: negative Euclidean distance; value: the candidate
                      itself; uniform mean over the top-k helpers.
* ``v_attention``   — score: query/key dot product; value: W_V projection;
                      softmax-weighted mean.
* ``attention_bsim`` — score: negative *squared* distance between W_K
                      projections; value: W_V projection; softmax weights.
* ``attention_bsim_bval`` — score as attention_bsim; value: a two-layer map T
                      of the pairwise key difference (so values depend on the
                      target/candidate pair, not the candidate alone).

``k = -1`` selects every candidate. Excluded candidates (a sample never
retrieves itself) are pushed out of softmax reach with a large negative
finite score, keeping the softmax input finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .tensor import ContractError, Tensor

KINDS = ("none", "knn", "v_attention", "attention_bsim", "attention_bsim_bval")
LOCATIONS = ("post_embedding", "post_encoder")

EXCLUDED_SCORE = -1e30


class ConfigError(ValueError):
    """Invalid retrieval configuration."""


@dataclass
class RetrievalConfig:
    kind: str = "none"
    k: int = -1                      # -1: helpers = all candidates
    lam: float = 0.5
    retrieval_location: str = "post_encoder"
    aggregation_location: str = "post_encoder"
    candidate_cap: int | None = None  # inference-time candidate subsample size
    softmax_temperature: float | None = None  # optional score scaling, off by default

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown retrieval kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.retrieval_location not in LOCATIONS:
            raise ConfigError(f"unknown retrieval location {self.retrieval_location!r}")
        if self.aggregation_location not in LOCATIONS:
            raise ConfigError(f"unknown aggregation location {self.aggregation_location!r}")
        if (self.retrieval_location == "post_encoder"
                and self.aggregation_location == "post_embedding"):
            raise ConfigError("aggregation cannot sit upstream of retrieval "
                              "(post_encoder retrieval with post_embedding aggregation)")
        if not 0.0 <= self.lam < 1.0:
            raise ConfigError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.k < -1:
            raise ConfigError(f"k must be >= 0 or the sentinel -1, got {self.k}")
        if self.candidate_cap is not None and self.candidate_cap < 1:
            raise ConfigError("candidate_cap must be positive")

    @property
    def uses_params(self) -> bool:
        return self.kind in ("v_attention", "attention_bsim", "attention_bsim_bval")


def score_knn(h_z: np.ndarray, h_x: np.ndarray) -> float:
    """Negative Euclidean distance between flattened representations."""
    return -float(np.linalg.norm(np.asarray(h_z, float) - np.asarray(h_x, float)))


def value_knn(h_x: np.ndarray) -> np.ndarray:
    return np.asarray(h_x, float)


def _linear(x: Tensor, w: Tensor) -> Tensor:
    return tt.matmul(x, w)


def score_vatt(h_z, h_x, params) -> float:
    """Query/key dot product on single flattened vectors."""
    q = np.asarray(h_z, float) @ params["Wq"].data
    k = np.asarray(h_x, float) @ params["Wk"].data
    return float(q @ k)


def value_att(h_x, params) -> np.ndarray:
    return np.asarray(h_x, float) @ params["Wv"].data


def score_bsim(h_z, h_x, params) -> float:
    """Negative squared distance between key projections."""
    dz = (np.asarray(h_z, float) - np.asarray(h_x, float)) @ params["Wk"].data
    return -float(dz @ dz)


def score_bsim_bval(h_z, h_x, params) -> tuple[float, np.ndarray]:
    """attention_bsim score plus the pair-dependent value T(Wk h_z - Wk h_x)."""
    diff = (np.asarray(h_z, float) - np.asarray(h_x, float)) @ params["Wk"].data
    hidden = np.maximum(diff @ params["T1_W"].data + params["T1_b"].data, 0.0)
    value = hidden @ params["T2_W"].data
    return -float(diff @ diff), value


def pairwise_scores(kind: str, params, q_flat: Tensor, c_flat: Tensor) -> Tensor:
    """Score every (target, candidate) pair; differentiable for attention kinds."""
    if kind == "v_attention":
        q = _linear(q_flat, params["Wq"])
        k = _linear(c_flat, params["Wk"])
        return tt.matmul(q, tt.swapaxes(k, 0, 1))
    if kind in ("attention_bsim", "attention_bsim_bval"):
        a = _linear(q_flat, params["Wk"])
        b = _linear(c_flat, params["Wk"])
        a2 = tt.sum_(tt.mul(a, a), axis=1, keepdims=True)          # (B, 1)
        b2 = tt.reshape(tt.sum_(tt.mul(b, b), axis=1), (1, -1))    # (1, C)
        cross = tt.matmul(a, tt.swapaxes(b, 0, 1))                 # (B, C)
        return -(a2 + b2 - 2.0 * cross)
    raise ContractError(f"no differentiable pairwise score for kind {kind!r}")


def knn_score_matrix(q_flat: np.ndarray, c_flat: np.ndarray) -> np.ndarray:
    """Plain-array pairwise negative distances (selection only, no gradient)."""
    q2 = (q_flat * q_flat).sum(axis=1)[:, None]
    c2 = (c_flat * c_flat).sum(axis=1)[None, :]
    sq = np.maximum(q2 + c2 - 2.0 * (q_flat @ c_flat.T), 0.0)
    return -np.sqrt(sq)


def candidate_values(kind: str, params, c_flat: Tensor) -> Tensor:
    """Per-candidate value vectors for the kinds whose value ignores the target."""
    if kind == "knn":
        return c_flat
    if kind in ("v_attention", "attention_bsim"):
        return _linear(c_flat, params["Wv"])
    raise ContractError(f"kind {kind!r} has no candidate-only value function")


def pair_values_bsim_bval(params, q_flat: Tensor, c_flat: Tensor,
                          dropout_p: float, training: bool, rng) -> Tensor:
    """T applied to every pairwise key difference, shape (B, C, F)."""
    a = _linear(q_flat, params["Wk"])
    b = _linear(c_flat, params["Wk"])
    diff = tt.reshape(a, (a.shape[0], 1, a.shape[1])) - tt.reshape(b, (1, b.shape[0], b.shape[1]))
    hidden = tt.relu(tt.matmul(diff, params["T1_W"]) + params["T1_b"])
    hidden = tt.dropout(hidden, dropout_p, training, rng)
    return tt.matmul(hidden, params["T2_W"])


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the k largest scores; ties go to the lower index."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def retrieve_summary(config: RetrievalConfig, params, q_flat: Tensor, c_flat: Tensor,
                     *, exclude_self: bool = False, training: bool = False,
                     rng=None, dropout_p: float = 0.0) -> Tensor:
    """Helper summary vector per target: the Sigma term of the aggregation rule."""
    n_candidates = c_flat.shape[0]
    n_targets = q_flat.shape[0]
    if n_candidates == 0:
        raise ContractError("empty candidate set")
    available = n_candidates - 1 if exclude_self else n_candidates
    if available < 1:
        raise ContractError("no candidates left after self-exclusion")
    k = config.k
    if k == -1:
        k_eff = available
    else:
        if k > available:
            raise ContractError(f"k={k} exceeds the {available} available candidates")
        k_eff = k

    exclusion = None
    if exclude_self:
        exclusion = np.zeros((n_targets, n_candidates))
        np.fill_diagonal(exclusion, EXCLUDED_SCORE)

    if config.kind == "knn":
        scores = knn_score_matrix(q_flat.data, c_flat.data)
        if exclusion is not None:
            scores = scores + exclusion
        idx = topk_indices(scores, k_eff)
        selected = tt.take_rows(candidate_values("knn", params, c_flat), idx)  # (B, k, F)
        return tt.sum_(selected, axis=1) * (1.0 / k_eff)

    scores = pairwise_scores(config.kind, params, q_flat, c_flat)
    if config.softmax_temperature is not None:
        scores = scores * (1.0 / config.softmax_temperature)
    if exclusion is not None:
        scores = scores + Tensor(exclusion)

    pairwise = config.kind == "attention_bsim_bval"
    if pairwise:
        values = pair_values_bsim_bval(params, q_flat, c_flat, dropout_p, training, rng)
    else:
        values = candidate_values(config.kind, params, c_flat)

    if k == -1 or k_eff == n_candidates:
        weights = tt.softmax(scores, axis=1)                      # (B, C)
        if pairwise:
            w3 = tt.reshape(weights, (n_targets, n_candidates, 1))
            return tt.sum_(tt.mul(w3, values), axis=1)
        return tt.matmul(weights, values)

    idx = topk_indices(scores.data, k_eff)
    top_scores = tt.take_per_row(scores, idx)                     # (B, k)
    weights = tt.softmax(top_scores, axis=1)
    if pairwise:
        flat_idx = idx + np.arange(n_targets)[:, None] * n_candidates
        flat_values = tt.reshape(values, (n_targets * n_candidates, values.shape[2]))
        selected = tt.take_rows(flat_values, flat_idx)            # (B, k, F)
    else:
        selected = tt.take_rows(values, idx)
    w3 = tt.reshape(weights, (n_targets, k_eff, 1))
    return tt.sum_(tt.mul(w3, selected), axis=1)


def aggregate(h_base: Tensor, summary: Tensor, lam: float) -> Tensor:
    """(1 - lambda) * own representation + lambda * helper summary."""
    return (1.0 - lam) * h_base + lam * summary
