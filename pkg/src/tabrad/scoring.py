"""Mask-bank anomaly scoring, the fixed-count threshold rule, and metrics.

The anomaly score of a validation sample is its mean per-mask reconstruction
loss over the bank, computed in evaluation mode against a frozen candidate
pool. The decision threshold flags exactly as many top-scoring samples as
there are true anomalies, ties at the cut going to the lower sample index.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .masking import MaskBank
from .model import CandidatePool, ReconstructorModel
from .tensor import NumericError
from .training import per_sample_losses


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. no anomalies)."""


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray
    threshold: float
    predictions: np.ndarray
    f1: float
    auroc: float
    per_class_share: dict[str, float]
    mask_count: int
    seed: int
    config_hash: str = ""
    sample_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "summary": {
                "threshold": self.threshold,
                "f1": self.f1,
                "auroc": self.auroc,
                "per_class_share": self.per_class_share,
                "mask_count": self.mask_count,
                "seed": self.seed,
                "config_hash": self.config_hash,
            },
            "samples": [
                {"id": (self.sample_ids[i] if self.sample_ids else i),
                 "score": float(self.scores[i]),
                 "label": int(self.labels[i]),
                 "prediction": int(self.predictions[i])}
                for i in range(len(self.scores))
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(config_dict, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]


def anomaly_scores(model: ReconstructorModel, pool: CandidatePool,
                   val_blocks: list[np.ndarray], bank: MaskBank,
                   chunk_rows: int = 4096) -> np.ndarray:
    """Mean per-mask reconstruction loss for every validation sample."""
    n = val_blocks[0].shape[0]
    totals = np.zeros(n)
    for mask_index in range(bank.m):
        mask_row = bank.masks[mask_index]
        for start in range(0, n, chunk_rows):
            stop = min(start + chunk_rows, n)
            chunk = [blk[start:stop] for blk in val_blocks]
            masks = np.broadcast_to(mask_row, (stop - start, bank.d))
            outputs = model.forward(chunk, masks, training=False, pool=pool)
            losses = per_sample_losses(outputs, chunk, masks, model.specs)
            if not np.isfinite(losses).all():
                raise NumericError(f"non-finite anomaly score at mask index {mask_index}")
            totals[start:stop] += losses
    return totals / bank.m


def anomaly_score(model: ReconstructorModel, pool: CandidatePool,
                  sample_blocks: list[np.ndarray], bank: MaskBank) -> float:
    """Score a single sample (each block shaped (1, e_j))."""
    return float(anomaly_scores(model, pool, sample_blocks, bank)[0])


def threshold_and_predict(scores: np.ndarray, labels: np.ndarray):
    """Flag exactly as many samples as there are true anomalies, highest scores first."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_anomalies = int((labels == 1).sum())
    if n_anomalies == 0:
        raise MetricError("threshold rule undefined with zero true anomalies")
    order = np.lexsort((np.arange(len(scores)), -scores))
    flagged = order[:n_anomalies]
    predictions = np.zeros(len(scores), dtype=np.int64)
    predictions[flagged] = 1
    threshold = float(scores[flagged[-1]])
    return threshold, predictions


def f1_score(predictions: np.ndarray, labels: np.ndarray) -> float:
    """F1 with the anomaly class positive."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their rank run."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUROC (midrank tie handling)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined without both classes")
    ranks = _midranks(scores)
    return (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def class_share(predictions: np.ndarray, labels: np.ndarray,
                subclasses: list[str]) -> dict[str, float]:
    """Fraction of each declared subclass classified correctly."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    subclasses = np.asarray(subclasses)
    shares = {}
    for name in dict.fromkeys(subclasses.tolist()):  # stable first-seen order
        members = subclasses == name
        shares[name] = float((predictions[members] == labels[members]).mean())
    return shares


def evaluate(model: ReconstructorModel, split, bank: MaskBank, *, seed: int,
             candidate_cap: int | None = None, cfg_hash: str = "",
             cap_seed: int | None = None) -> ScoreReport:
    """End-to-end scoring of a split: candidate pool, scores, threshold, metrics."""
    train_blocks = split.encoded_train()
    if candidate_cap is not None and candidate_cap < train_blocks[0].shape[0]:
        rng = np.random.default_rng(seed if cap_seed is None else cap_seed)
        pick = np.sort(rng.choice(train_blocks[0].shape[0], size=candidate_cap,
                                  replace=False))
        train_blocks = [blk[pick] for blk in train_blocks]
    pool = model.encode_candidates(train_blocks)
    scores = anomaly_scores(model, pool, split.encoded_validation(), bank)
    threshold, predictions = threshold_and_predict(scores, split.val_labels)
    shares = {}
    if split.val_subclasses is not None:
        shares = class_share(predictions, split.val_labels, split.val_subclasses)
    return ScoreReport(
        scores=scores,
        labels=split.val_labels,
        threshold=threshold,
        predictions=predictions,
        f1=f1_score(predictions, split.val_labels),
        auroc=auroc(scores, split.val_labels),
        per_class_share=shares,
        mask_count=bank.m,
        seed=seed,
        config_hash=cfg_hash,
    )
