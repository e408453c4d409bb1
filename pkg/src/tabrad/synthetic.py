"""Three-feature synthetic benchmark with two anomaly families.

Normal samples draw the driver feature x1 uniformly from one interval and
derive x2 linearly from x1 and x3 quadratically from x2, each with unit
Gaussian noise. Type-1 anomalies keep both relations but draw x1 from a
disjoint interval (a local, out-of-subspace family); type-2 anomalies draw
x1 inside the normal interval but break the x1 -> x2 relation (a
dependency-violating family).

Also hosts Mask-KNN, the no-feature-model baseline that imputes masked
features as the mean of the nearest training rows in normalized space and
scores with the same mask bank and per-mask average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import NUMERICAL, ColumnSpec, TabularDataset, numeric_matrix, split
from .masking import MaskBank, build_deterministic_bank, build_random_bank
from .model import ModelConfig, ReconstructorModel
from .retrieval import RetrievalConfig
from .scoring import class_share, evaluate, f1_score, threshold_and_predict
from .tensor import ContractError
from .training import TrainConfig, train


@dataclass
class SyntheticSpec:
    n_normal: int = 1000
    n_type1: int = 200
    n_type2: int = 200
    normal_x1: tuple[float, float] = (-2.0, 3.0)
    type1_x1: tuple[float, float] = (3.3, 4.0)
    type2_x1: tuple[float, float] = (1.5, 2.5)
    normal_lin: tuple[float, float] = (2.0, 3.0)    # x2 = a + b * x1 + noise
    normal_quad: tuple[float, float] = (4.0, 3.0)   # x3 = a + b * x2^2 + noise
    type2_lin: tuple[float, float] = (-7.5, -1.0)
    type2_quad: tuple[float, float] = (4.0, 3.0)
    noise_scale: float = 1.0


@dataclass
class MaskKnnConfig:
    neighbor_count: int = 5


def _make_class(rng, n, x1_range, lin, quad, noise_scale):
    x1 = rng.uniform(x1_range[0], x1_range[1], n)
    x2 = lin[0] + lin[1] * x1 + noise_scale * rng.standard_normal(n)
    x3 = quad[0] + quad[1] * x2 ** 2 + noise_scale * rng.standard_normal(n)
    return np.stack([x1, x2, x3], axis=1)


def generate(spec: SyntheticSpec, seed: int) -> TabularDataset:
    """Deterministic synthetic dataset with subclass tags normal/type1/type2."""
    rng = np.random.default_rng(seed)
    normal = _make_class(rng, spec.n_normal, spec.normal_x1,
                         spec.normal_lin, spec.normal_quad, spec.noise_scale)
    type1 = _make_class(rng, spec.n_type1, spec.type1_x1,
                        spec.normal_lin, spec.normal_quad, spec.noise_scale)
    type2 = _make_class(rng, spec.n_type2, spec.type2_x1,
                        spec.type2_lin, spec.type2_quad, spec.noise_scale)
    rows = np.concatenate([normal, type1, type2]).tolist()
    labels = np.array([0] * spec.n_normal + [1] * (spec.n_type1 + spec.n_type2))
    subclasses = (["normal"] * spec.n_normal + ["type1"] * spec.n_type1
                  + ["type2"] * spec.n_type2)
    columns = [ColumnSpec(f"x{j + 1}", NUMERICAL) for j in range(3)]
    return TabularDataset(columns=columns, rows=rows, labels=labels,
                          subclasses=subclasses)


def mask_knn_reconstruct(z: np.ndarray, mask: np.ndarray, train_rows: np.ndarray,
                         cfg: MaskKnnConfig) -> np.ndarray:
    """Impute the masked entries of one normalized sample from its neighbors.

    Neighbors are the ``neighbor_count`` training rows closest in Euclidean
    distance over the observed entries (ties to the lower row index); each
    masked entry is the mean of the neighbors' values there.
    """
    mask = np.asarray(mask, dtype=bool)
    observed = ~mask
    if not observed.any():
        raise ContractError("all features masked: neighbor distance undefined")
    if cfg.neighbor_count > train_rows.shape[0]:
        raise ContractError("neighbor_count exceeds training-set size")
    dists = np.linalg.norm(train_rows[:, observed] - z[observed], axis=1)
    neighbors = np.argsort(dists, kind="stable")[:cfg.neighbor_count]
    return train_rows[np.ix_(neighbors, mask)].mean(axis=0)


def mask_knn_scores(val_rows: np.ndarray, train_rows: np.ndarray,
                    bank: MaskBank, cfg: MaskKnnConfig) -> np.ndarray:
    """Mean per-mask squared imputation error for every validation row."""
    if cfg.neighbor_count > train_rows.shape[0]:
        raise ContractError("neighbor_count exceeds training-set size")
    n = val_rows.shape[0]
    totals = np.zeros(n)
    for mask_row in bank.masks:
        mask = mask_row.astype(bool)
        observed = ~mask
        if not observed.any():
            raise ContractError("all features masked: neighbor distance undefined")
        d2 = ((val_rows[:, None, observed] - train_rows[None, :, observed]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :cfg.neighbor_count]
        imputed = train_rows[:, mask][order].mean(axis=1)      # (n, n_masked)
        totals += ((imputed - val_rows[:, mask]) ** 2).sum(axis=1)
    return totals / bank.m


def synthetic_model_config() -> ModelConfig:
    return ModelConfig(hidden_dim=8, num_layers=2, num_heads=2,
                       p_mask=0.15, dropout_p=0.1)


def synthetic_train_config(seed: int, max_epochs: int = 600) -> TrainConfig:
    return TrainConfig(learning_rate=1e-3, patience_epochs=100, batch_size=-1,
                       seed=seed, max_epochs=max_epochs)


def bsim_retrieval_config() -> RetrievalConfig:
    return RetrievalConfig(kind="attention_bsim", k=-1, lam=0.5,
                           retrieval_location="post_encoder",
                           aggregation_location="post_encoder")


@dataclass
class MethodResult:
    shares: list[dict[str, float]] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)

    def mean_shares(self) -> dict[str, float]:
        keys = self.shares[0].keys()
        return {k: float(np.mean([s[k] for s in self.shares])) for k in keys}

    def std_shares(self) -> dict[str, float]:
        keys = self.shares[0].keys()
        return {k: float(np.std([s[k] for s in self.shares])) for k in keys}


@dataclass
class ComparisonResult:
    seeds: list[int]
    methods: dict[str, MethodResult]
    random_bank_f1: list[float] = field(default_factory=list)

    def table(self) -> list[dict]:
        rows = []
        for name, result in self.methods.items():
            mean, std = result.mean_shares(), result.std_shares()
            row = {"method": name}
            for key in mean:
                row[key] = f"{100 * mean[key]:.1f} (+/-{100 * std[key]:.1f})"
            row["f1"] = f"{100 * float(np.mean(result.f1)):.1f}"
            rows.append(row)
        return rows


def run_comparison(seeds, spec: SyntheticSpec | None = None,
                   max_epochs: int = 600, include_random_bank: bool = True,
                   progress=None) -> ComparisonResult:
    """Mask-KNN vs plain transformer vs its attention_bsim-augmented variant.

    One fresh dataset and split per seed; every method shares the seed's
    split, the single-feature deterministic mask bank, and the fixed-count
    threshold rule.
    """
    spec = spec or SyntheticSpec()
    result = ComparisonResult(seeds=list(seeds), methods={
        "mask_knn": MethodResult(),
        "transformer": MethodResult(),
        "att_bsim": MethodResult(),
    })
    bank = build_deterministic_bank(3, 1)
    knn_cfg = MaskKnnConfig()
    for seed in seeds:
        ds = generate(spec, seed)
        sp = split(ds, seed)
        val = numeric_matrix(sp.val_rows, sp.specs)
        trn = numeric_matrix(sp.train_rows, sp.specs)

        knn_scores = mask_knn_scores(val, trn, bank, knn_cfg)
        _, knn_preds = threshold_and_predict(knn_scores, sp.val_labels)
        result.methods["mask_knn"].shares.append(
            class_share(knn_preds, sp.val_labels, sp.val_subclasses))
        result.methods["mask_knn"].f1.append(f1_score(knn_preds, sp.val_labels))

        for name, retrieval_cfg in (("transformer", RetrievalConfig(kind="none")),
                                    ("att_bsim", bsim_retrieval_config())):
            model = ReconstructorModel(synthetic_model_config(), sp.specs,
                                       retrieval_cfg, seed=seed)
            _, report = train(model, sp, synthetic_train_config(seed, max_epochs))
            score_report = evaluate(model, sp, bank, seed=seed)
            result.methods[name].shares.append(score_report.per_class_share)
            result.methods[name].f1.append(score_report.f1)
            if name == "att_bsim" and include_random_bank:
                rnd_bank = build_random_bank(3, bank.m, model.config.p_mask,
                                             seed=seed + 7919)
                rnd_report = evaluate(model, sp, rnd_bank, seed=seed)
                result.random_bank_f1.append(rnd_report.f1)
            if progress is not None:
                progress(seed, name, report)
    return result
