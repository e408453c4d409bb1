"""Reconstruction-loss training loop: LAMB with a Lookahead wrapper, seeded
mask sampling, full-batch or mini-batch epochs, and patience-based early
stopping on the training loss.

Loss normalization (held fixed and tested): the batch loss is the sum over
samples of that sample's masked-feature losses, divided by the number of
samples in the batch. Samples whose mask is all-zero contribute nothing and
act only as retrieval candidates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .data import NUMERICAL
from .masking import force_unmasked_subset, sample_training_masks
from .model import ReconstructorModel
from .tensor import NumericError, Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    lamb_eps: float = 1e-6
    trust_clip: float = 10.0
    lookahead_alpha: float = 0.5
    lookahead_k: int = 6
    batch_size: int = -1          # -1: full batch
    patience_epochs: int = 100
    max_epochs: int = 10_000
    seed: int = 0
    unmasked_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.lookahead_alpha < 1.0:
            raise ValueError("lookahead_alpha must lie in (0, 1)")
        if self.lookahead_k < 1:
            raise ValueError("lookahead_k must be >= 1")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    stop_reason: str = ""
    best_epoch: int = 0
    best_loss: float = float("inf")
    wall_time: float = 0.0


def masked_loss(outputs: list[Tensor], blocks: list[np.ndarray],
                masks: np.ndarray, specs) -> Tensor:
    """Mean over batch samples of the summed masked-feature reconstruction losses."""
    batch = masks.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    total = None
    for j, spec in enumerate(specs):
        mask_j = masks[:, j].astype(np.float64)
        if not mask_j.any():
            continue
        if spec.kind == NUMERICAL:
            target = Tensor(blocks[j])
            diff = outputs[j] - target
            term = tt.sum_(tt.mul(tt.mul(diff, diff), Tensor(mask_j[:, None])))
        else:
            targets = blocks[j].argmax(axis=1)
            ce = tt.cross_entropy(outputs[j], targets)
            term = tt.sum_(tt.mul(ce, Tensor(mask_j)))
        total = term if total is None else total + term
    if total is None:
        total = Tensor(np.array(0.0))
    loss = total * (1.0 / batch)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite training loss")
    return loss


def per_sample_losses(outputs: list[Tensor], blocks: list[np.ndarray],
                      masks: np.ndarray, specs) -> np.ndarray:
    """Per-sample masked reconstruction losses (no gradients), shape (B,)."""
    losses = np.zeros(masks.shape[0])
    for j, spec in enumerate(specs):
        mask_j = masks[:, j].astype(np.float64)
        out = outputs[j].data
        if spec.kind == NUMERICAL:
            losses += ((out[:, 0] - blocks[j][:, 0]) ** 2) * mask_j
        else:
            shifted = out - out.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1)) + out.max(axis=1)
            t = blocks[j].argmax(axis=1)
            losses += (lse - out[np.arange(out.shape[0]), t]) * mask_j
    return losses


class Lamb:
    """Adam-style moments with a per-parameter-array trust ratio on the step size."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-6,
                 trust_clip: float = 10.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.trust_clip = trust_clip
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            w_norm = float(np.linalg.norm(p.data))
            u_norm = float(np.linalg.norm(update))
            if w_norm == 0.0 or u_norm == 0.0:
                trust = 1.0
            else:
                trust = min(w_norm / u_norm, self.trust_clip)
            p.data -= self.lr * trust * update


class Lookahead:
    """Every k fast steps, move slow weights by alpha toward the fast weights
    and reset the fast weights onto them."""

    def __init__(self, inner: Lamb, alpha: float = 0.5, k: int = 6):
        self.inner = inner
        self.alpha = alpha
        self.k = k
        self.counter = 0
        self.slow = {name: p.data.copy() for name, p in inner.params.items()}

    def step(self) -> None:
        self.inner.step()
        self.counter += 1
        if self.counter % self.k == 0:
            for name, p in self.inner.params.items():
                slow = self.slow[name]
                slow += self.alpha * (p.data - slow)
                p.data = slow.copy()


def _batches(perm: np.ndarray, batch_size: int):
    for start in range(0, len(perm), batch_size):
        yield perm[start:start + batch_size]


def train(model: ReconstructorModel, split, cfg: TrainConfig):
    """Train in place; returns ``(model, TrainReport)``.

    Weights are restored to the best epoch before returning. A numeric
    failure aborts the loop and reports the epochs completed so far.
    """
    start = time.perf_counter()
    blocks = split.encoded_train()
    n = blocks[0].shape[0]
    if n == 0:
        raise ValueError("training split is empty")
    d = model.d
    batch_size = n if cfg.batch_size in (-1, 0) else min(cfg.batch_size, n)

    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    mask_rng, shuffle_rng, drop_rng, retr_rng = (np.random.default_rng(s) for s in streams)

    inner = Lamb(model.params, lr=cfg.learning_rate, betas=cfg.betas,
                 eps=cfg.lamb_eps, trust_clip=cfg.trust_clip)
    opt = Lookahead(inner, alpha=cfg.lookahead_alpha, k=cfg.lookahead_k)

    report = TrainReport()
    best_params = None
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        epoch_total = 0.0
        try:
            for idx in _batches(perm, batch_size):
                batch_blocks = [blk[idx] for blk in blocks]
                masks = sample_training_masks(len(idx), d, model.config.p_mask, mask_rng)
                masks = force_unmasked_subset(masks, cfg.unmasked_fraction, mask_rng)
                outputs = model.forward(batch_blocks, masks, training=True,
                                        dropout_rng=drop_rng, retrieval_rng=retr_rng)
                loss = masked_loss(outputs, batch_blocks, masks, model.specs)
                model.zero_grads()
                loss.backward()
                opt.step()
                epoch_total += loss.item() * len(idx)
        except NumericError:
            report.stopped_epoch = epoch
            report.stop_reason = "numeric_failure"
            break
        epoch_loss = epoch_total / n
        report.epoch_losses.append(epoch_loss)
        if epoch_loss < report.best_loss:
            report.best_loss = epoch_loss
            report.best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in model.params.items()}
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience_epochs:
            report.stopped_epoch = epoch
            report.stop_reason = "patience"
            break
    else:
        report.stopped_epoch = cfg.max_epochs
        report.stop_reason = "max_epochs"

    if best_params is not None:
        for name, p in model.params.items():
            p.data = best_params[name]
    report.wall_time = time.perf_counter() - start
    return model, report
