"""The masked-feature reconstruction network.

Per-feature linear in-embeddings (fed the masked encoding plus the mask
indicator bit), learned index and feature-type embeddings, a pre-layernorm
transformer encoder over the d feature tokens, and per-feature linear
out-embeddings back to each feature's encoded width. An optional retrieval
module mixes helper representations into the target's representation at a
configurable location (see :mod:`tabrad.retrieval`).

Parameters live in ``self.params`` (name -> Tensor) in a fixed construction
order. Main-path and retrieval parameters are initialized from independent
seeded streams, so a model with a retrieval module shares its main-path
initialization bit-for-bit with the plain model built from the same seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import retrieval as rt
from . import tensor as tt
from .data import CATEGORICAL, NUMERICAL, ColumnSpec
from .retrieval import RetrievalConfig
from .tensor import ContractError, NumericError, Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    hidden_dim: int = 8
    num_layers: int = 2
    num_heads: int = 4
    p_mask: float = 0.15
    dropout_p: float = 0.1
    feedforward_multiplier: int = 4

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ContractError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 < self.p_mask < 1.0:
            raise ContractError("p_mask must lie in (0, 1)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError("dropout_p must lie in [0, 1)")


class CandidatePool:
    """Frozen representations of the inference candidate set.

    Holds the flattened embedding-layer and encoder outputs of the unmasked
    candidate rows, computed once in evaluation mode and shared read-only by
    every scoring call.
    """

    def __init__(self, emb_flat: np.ndarray, enc_flat: np.ndarray):
        self.emb_flat = Tensor(emb_flat)
        self.enc_flat = Tensor(enc_flat)

    @property
    def size(self) -> int:
        return self.enc_flat.shape[0]


class ReconstructorModel:
    def __init__(self, config: ModelConfig, specs: list[ColumnSpec],
                 retrieval_config: RetrievalConfig | None = None, seed: int = 0):
        self.config = config
        self.specs = specs
        self.retrieval = retrieval_config or RetrievalConfig(kind="none")
        self.seed = seed
        self.d = len(specs)
        self.widths = [spec.cardinality for spec in specs]
        self.params: dict[str, Tensor] = {}
        main_seq, retr_seq = np.random.SeedSequence(seed).spawn(2)
        self._init_main(np.random.default_rng(main_seq))
        self._init_retrieval(np.random.default_rng(retr_seq))

    # ---------------------------------------------------------------- init

    def _param(self, name: str, values: np.ndarray) -> Tensor:
        t = Tensor(values, requires_grad=True)
        self.params[name] = t
        return t

    def _linear_init(self, name: str, fan_in: int, fan_out: int, rng,
                     bias: bool = True) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self._param(f"{name}.W", rng.uniform(-bound, bound, (fan_in, fan_out)))
        if bias:
            self._param(f"{name}.b", rng.uniform(-bound, bound, fan_out))

    def _init_main(self, rng) -> None:
        e = self.config.hidden_dim
        for j, width in enumerate(self.widths):
            self._linear_init(f"in.{j}", width + 1, e, rng)
        self._param("index_emb", rng.normal(0.0, 0.02, (self.d, e)))
        self._param("type_emb", rng.normal(0.0, 0.02, (2, e)))
        ff = self.config.feedforward_multiplier * e
        for layer in range(self.config.num_layers):
            p = f"enc.{layer}"
            self._param(f"{p}.ln1.g", np.ones(e))
            self._param(f"{p}.ln1.b", np.zeros(e))
            for proj in ("q", "k", "v", "o"):
                self._linear_init(f"{p}.attn.{proj}", e, e, rng)
            self._param(f"{p}.ln2.g", np.ones(e))
            self._param(f"{p}.ln2.b", np.zeros(e))
            self._linear_init(f"{p}.ff1", e, ff, rng)
            self._linear_init(f"{p}.ff2", ff, e, rng)
        for j, width in enumerate(self.widths):
            self._linear_init(f"out.{j}", e, width, rng)

    def _init_retrieval(self, rng) -> None:
        if not self.retrieval.uses_params:
            return
        f = self.flat_dim(self.retrieval.retrieval_location)
        bound = 1.0 / np.sqrt(f)
        kind = self.retrieval.kind
        if kind == "v_attention":
            self._param("ret.Wq", rng.uniform(-bound, bound, (f, f)))
        self._param("ret.Wk", rng.uniform(-bound, bound, (f, f)))
        if kind in ("v_attention", "attention_bsim"):
            self._param("ret.Wv", rng.uniform(-bound, bound, (f, f)))
        if kind == "attention_bsim_bval":
            self._param("ret.T1_W", rng.uniform(-bound, bound, (f, f)))
            self._param("ret.T1_b", rng.uniform(-bound, bound, f))
            self._param("ret.T2_W", rng.uniform(-bound, bound, (f, f)))

    def flat_dim(self, location: str = "post_encoder") -> int:
        # Both locations carry d tokens of width e.
        return self.d * self.config.hidden_dim

    @property
    def retrieval_params(self) -> dict[str, Tensor]:
        return {name[len("ret."):]: t for name, t in self.params.items()
                if name.startswith("ret.")}

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    # ------------------------------------------------------------- forward

    def embed(self, blocks: list[np.ndarray], masks: np.ndarray) -> Tensor:
        """Masked per-feature inputs -> (B, d, e) token embeddings."""
        if len(blocks) != self.d or masks.shape[1] != self.d:
            raise ContractError("feature count mismatch between inputs and specs")
        m = masks.astype(np.float64)
        tokens = []
        type_rows = np.array([0 if s.kind == NUMERICAL else 1 for s in self.specs])
        for j in range(self.d):
            keep = (1.0 - m[:, j])[:, None]
            x = np.concatenate([blocks[j] * keep, m[:, j][:, None]], axis=1)
            tok = tt.matmul(Tensor(x), self.params[f"in.{j}.W"]) + self.params[f"in.{j}.b"]
            tokens.append(tt.reshape(tok, (x.shape[0], 1, -1)))
        h = tt.concat(tokens, axis=1)
        h = h + self.params["index_emb"]
        h = h + tt.take_rows(self.params["type_emb"], type_rows)
        return h

    def _attention(self, x: Tensor, layer: int, training: bool, rng) -> Tensor:
        e, heads = self.config.hidden_dim, self.config.num_heads
        hd = e // heads
        batch, d = x.shape[0], x.shape[1]
        p = f"enc.{layer}.attn"

        def project(name):
            y = tt.matmul(x, self.params[f"{p}.{name}.W"]) + self.params[f"{p}.{name}.b"]
            return tt.swapaxes(tt.reshape(y, (batch, d, heads, hd)), 1, 2)

        q, k, v = project("q"), project("k"), project("v")
        scores = tt.matmul(q, tt.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(hd))
        weights = tt.dropout(tt.softmax(scores, axis=-1),
                             self.config.dropout_p, training, rng)
        out = tt.reshape(tt.swapaxes(tt.matmul(weights, v), 1, 2), (batch, d, e))
        return tt.matmul(out, self.params[f"{p}.o.W"]) + self.params[f"{p}.o.b"]

    def encode(self, h: Tensor, training: bool = False, rng=None) -> Tensor:
        """Pre-layernorm transformer encoder over the d feature tokens."""
        p_drop = self.config.dropout_p
        for layer in range(self.config.num_layers):
            p = f"enc.{layer}"
            a = tt.layernorm(h, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"])
            h = h + tt.dropout(self._attention(a, layer, training, rng),
                               p_drop, training, rng)
            b = tt.layernorm(h, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"])
            f = tt.relu(tt.matmul(b, self.params[f"{p}.ff1.W"]) + self.params[f"{p}.ff1.b"])
            f = tt.dropout(f, p_drop, training, rng)
            f = tt.matmul(f, self.params[f"{p}.ff2.W"]) + self.params[f"{p}.ff2.b"]
            h = h + tt.dropout(f, p_drop, training, rng)
            if not np.isfinite(h.data).all():
                raise NumericError(f"non-finite activations after encoder layer {layer}")
        return h

    def reconstruct(self, h: Tensor) -> list[Tensor]:
        """Per-feature outputs: scalar for numerical, logits for categorical."""
        outs = []
        for j in range(self.d):
            tok = tt.slice_(h, (slice(None), j, slice(None)))
            outs.append(tt.matmul(tok, self.params[f"out.{j}.W"]) + self.params[f"out.{j}.b"])
        return outs

    def forward(self, blocks: list[np.ndarray], masks: np.ndarray, *,
                training: bool = False, dropout_rng=None, retrieval_rng=None,
                pool: CandidatePool | None = None) -> list[Tensor]:
        """Full reconstruction pass with the configured retrieval wiring.

        During training the candidate set is the batch's own *unmasked*
        encodings (self excluded, gradients flowing), mirroring the
        evaluation-time pool of unmasked training samples that a
        precomputed :class:`CandidatePool` supplies. Candidate encodings
        never receive dropout, again mirroring evaluation.
        """
        cfg = self.retrieval
        h_emb = self.embed(blocks, masks)
        batch = h_emb.shape[0]

        if cfg.kind == "none" or cfg.k == 0:
            return self.reconstruct(self.encode(h_emb, training, dropout_rng))

        exclude_self = pool is None
        if pool is None:
            c_emb = self.embed(blocks, np.zeros_like(masks))
            c_emb_flat = tt.flatten(c_emb)
            c_enc_flat = None  # encoded lazily, only the post_encoder path needs it
        else:
            c_emb_flat, c_enc_flat = pool.emb_flat, pool.enc_flat
        emb_flat = tt.flatten(h_emb)

        def summary_from(q_flat, c_flat):
            return rt.retrieve_summary(
                cfg, self.retrieval_params, q_flat, c_flat,
                exclude_self=exclude_self, training=training,
                rng=retrieval_rng, dropout_p=self.config.dropout_p)

        if cfg.aggregation_location == "post_embedding":
            mixed = rt.aggregate(emb_flat, summary_from(emb_flat, c_emb_flat), cfg.lam)
            h = self.encode(tt.reshape(mixed, h_emb.shape), training, dropout_rng)
            return self.reconstruct(h)

        h_enc = self.encode(h_emb, training, dropout_rng)
        enc_flat = tt.flatten(h_enc)
        if cfg.retrieval_location == "post_encoder":
            if c_enc_flat is None:
                c_enc_flat = tt.flatten(self.encode(c_emb, training=False))
            summary = summary_from(enc_flat, c_enc_flat)
        else:  # retrieval on embeddings, aggregation on encoder outputs
            summary = summary_from(emb_flat, c_emb_flat)
        mixed = rt.aggregate(enc_flat, summary, cfg.lam)
        return self.reconstruct(tt.reshape(mixed, (batch, self.d, self.config.hidden_dim)))

    def encode_candidates(self, blocks: list[np.ndarray]) -> CandidatePool:
        """Evaluation-mode unmasked encodings for use as the inference candidate set."""
        n = blocks[0].shape[0]
        masks = np.zeros((n, self.d), dtype=np.uint8)
        h_emb = self.embed(blocks, masks)
        h_enc = self.encode(h_emb, training=False)
        return CandidatePool(emb_flat=h_emb.data.reshape(n, -1).copy(),
                             enc_flat=h_enc.data.reshape(n, -1).copy())

    # ---------------------------------------------------------- checkpoint

    def save(self, path) -> None:
        """Versioned npz checkpoint: config + retrieval config + specs + parameters."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "config": asdict(self.config),
            "retrieval": asdict(self.retrieval),
            "specs": [
                {"name": s.name, "kind": s.kind, "vocabulary": list(s.vocabulary),
                 "train_mean": s.train_mean, "train_std": s.train_std}
                for s in self.specs
            ],
        }
        arrays = {f"param/{name}": t.data for name, t in self.params.items()}
        np.savez_compressed(path, __meta__=np.frombuffer(
            json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "ReconstructorModel":
        with np.load(path) as archive:
            meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ContractError(f"unsupported checkpoint version {meta['version']}")
            specs = [ColumnSpec(name=s["name"], kind=s["kind"],
                                vocabulary=tuple(s["vocabulary"]),
                                train_mean=s["train_mean"], train_std=s["train_std"])
                     for s in meta["specs"]]
            model = cls(ModelConfig(**meta["config"]), specs,
                        RetrievalConfig(**meta["retrieval"]), seed=meta["seed"])
            for name, tensor in model.params.items():
                tensor.data = archive[f"param/{name}"].copy()
        return model
