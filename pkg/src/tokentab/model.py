"""In-context transformer backbone over support and query embeddings.

One episode is a single forward pass: labelled support rows and unlabelled
query rows are embedded, concatenated, and run through a pre-norm encoder
stack under a mask that lets supports attend to each other while each
query sees only the supports and itself. A linear head on the query
positions yields class logits; no parameter changes at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    gelu,
    layer_norm,
    linear_forward,
    masked_softmax,
    matmul,
    mul_scalar,
    outer_scale_row,
    row,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose2d,
)
from .tokenizer import (
    FeatureSchema,
    FeatureTokenizer,
    SchemaError,
    aggregate_tokens,
    tokenize_categorical,
    tokenize_numerical,
)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    layers: int = 3
    heads: int = 4
    ff_dim: int = 128
    max_classes: int = 4

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.layers < 1:
            raise ValueError("at least one encoder layer is required")
        if self.max_classes < 2:
            raise ValueError("max_classes must be >= 2")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "max_classes": self.max_classes,
        }


@dataclass
class SupportQueryBatch:
    """One episode: encoded support rows with labels, encoded query rows."""

    support_num: np.ndarray
    support_cat: np.ndarray
    support_y: np.ndarray
    query_num: np.ndarray
    query_cat: np.ndarray
    n_classes: int
    query_y: np.ndarray | None = None

    def __post_init__(self):
        self.support_y = np.asarray(self.support_y)
        if self.support_num.shape[0] < 1 or self.query_num.shape[0] < 1:
            raise DimensionError("an episode needs at least one support and one query row")
        if self.support_y.shape[0] != self.support_num.shape[0]:
            raise DimensionError("support labels do not match support rows")
        if self.support_y.size and self.support_y.max() >= self.n_classes:
            raise IndexError("support label out of range")

    @property
    def s(self) -> int:
        return self.support_num.shape[0]

    @property
    def q(self) -> int:
        return self.query_num.shape[0]


def build_mask(s: int, q: int) -> np.ndarray:
    """Attention permission matrix over the s supports followed by q queries.

    Supports attend to every support; each query attends to every support
    and to itself, never to another query.
    """
    if s < 1 or q < 1:
        raise ValueError(f"need s >= 1 and q >= 1, got s={s}, q={q}")
    allow = np.zeros((s + q, s + q), dtype=bool)
    allow[:, :s] = True
    allow[s:, s:] = np.eye(q, dtype=bool)
    return allow


class EncoderLayer:
    """Pre-norm transformer encoder layer: masked attention then feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise DimensionError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        std = 1.0 / np.sqrt(dim)

        def mat(rows, cols, scale):
            return Tensor(rng.normal(0.0, scale, size=(rows, cols)), requires_grad=True)

        self.wq = mat(dim, dim, std)
        self.wk = mat(dim, dim, std)
        self.wv = mat(dim, dim, std)
        self.wo = mat(dim, dim, std)
        self.bq = Tensor(np.zeros(dim), requires_grad=True)
        self.bk = Tensor(np.zeros(dim), requires_grad=True)
        self.bv = Tensor(np.zeros(dim), requires_grad=True)
        self.bo = Tensor(np.zeros(dim), requires_grad=True)
        self.w1 = mat(dim, ff_dim, std)
        self.b1 = Tensor(np.zeros(ff_dim), requires_grad=True)
        self.w2 = mat(ff_dim, dim, 1.0 / np.sqrt(ff_dim))
        self.b2 = Tensor(np.zeros(dim), requires_grad=True)
        self.ln1_g = Tensor(np.ones(dim), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(dim), requires_grad=True)
        self.ln2_g = Tensor(np.ones(dim), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(dim), requires_grad=True)

    def named_tensors(self, prefix: str):
        names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b"]
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]

    def forward(self, x: Tensor, allow: np.ndarray) -> Tensor:
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        q_all = linear_forward(h, self.wq, self.bq)
        k_all = linear_forward(h, self.wk, self.bk)
        v_all = linear_forward(h, self.wv, self.bv)
        dk = self.dim // self.heads
        scale = 1.0 / np.sqrt(dk)
        contexts = []
        for head in range(self.heads):
            lo, hi = head * dk, (head + 1) * dk
            qh = slice_cols(q_all, lo, hi)
            kh = slice_cols(k_all, lo, hi)
            vh = slice_cols(v_all, lo, hi)
            scores = mul_scalar(matmul(qh, transpose2d(kh)), scale)
            weights = masked_softmax(scores, allow)
            contexts.append(matmul(weights, vh))
        attended = linear_forward(concat_cols(contexts), self.wo, self.bo)
        x = add(x, attended)
        f = layer_norm(x, self.ln2_g, self.ln2_b)
        f = linear_forward(gelu(linear_forward(f, self.w1, self.b1)), self.w2, self.b2)
        return add(x, f)


def encoder_forward(x: Tensor, allow: np.ndarray, layers) -> Tensor:
    """Run the encoder stack; an empty stack is the identity."""
    if allow.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"mask {allow.shape} vs sequence {x.shape}")
    for i, layer in enumerate(layers):
        x = layer.forward(x, allow)
        if not np.isfinite(x.data).all():
            raise NumericError(f"non-finite activations after encoder layer {i}")
    return x


class InContextClassifier:
    """Feature tokenizer, label embedder, encoder stack and class head."""

    def __init__(self, config: ModelConfig, tokenizer: FeatureTokenizer,
                 label_weights: Tensor, layers: list[EncoderLayer],
                 head_w: Tensor, head_b: Tensor):
        if label_weights.shape != (1, config.embed_dim):
            raise DimensionError("label embedder must be a (1, d) matrix")
        self.config = config
        self.tokenizer = tokenizer
        self.label_weights = label_weights
        self.layers = layers
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def create(cls, config: ModelConfig, tokenizer: FeatureTokenizer,
               rng: np.random.Generator) -> "InContextClassifier":
        d = config.embed_dim
        std = 1.0 / np.sqrt(d)
        label_weights = Tensor(rng.normal(0.0, std, size=(1, d)), requires_grad=True)
        layers = [EncoderLayer(d, config.heads, config.ff_dim, rng)
                  for _ in range(config.layers)]
        head_w = Tensor(rng.normal(0.0, std, size=(d, config.max_classes)),
                        requires_grad=True)
        head_b = Tensor(np.zeros(config.max_classes), requires_grad=True)
        return cls(config, tokenizer, label_weights, layers, head_w, head_b)

    def named_tensors(self):
        out = list(self.tokenizer.named_tensors())
        out.append(("label_embed", self.label_weights))
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_tensors(f"layers.{i}"))
        out.extend([("head.w", self.head_w), ("head.b", self.head_b)])
        return out

    def backbone_tensors(self):
        """Everything except the tokenizer: label embedder, encoder, head."""
        return [(name, t) for name, t in self.named_tensors()
                if not name.startswith("tokenizer.")]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_tensors():
            if t.data.shape != state[name].shape:
                raise DimensionError(f"state shape mismatch for {name}")
            t.data[...] = state[name]

    def forward_embeddings(self, batch: SupportQueryBatch) -> Tensor:
        support = self.tokenizer.embed_rows(batch.support_num, batch.support_cat)
        label_part = outer_scale_row(batch.support_y.astype(np.float64),
                                     self.label_weights, 0)
        support = add(support, label_part)
        query = self.tokenizer.embed_rows(batch.query_num, batch.query_cat)
        return concat_rows([support, query])

    def predict_logits(self, batch: SupportQueryBatch) -> Tensor:
        """Class logits for every query row, computed in one forward pass."""
        if batch.n_classes > self.config.max_classes:
            raise IndexError(
                f"episode has {batch.n_classes} classes, head supports "
                f"{self.config.max_classes}"
            )
        x = self.forward_embeddings(batch)
        h = encoder_forward(x, build_mask(batch.s, batch.q), self.layers)
        queries = slice_rows(h, batch.s, batch.s + batch.q)
        logits = linear_forward(queries, self.head_w, self.head_b)
        if batch.n_classes < self.config.max_classes:
            logits = slice_cols(logits, 0, batch.n_classes)
        return logits

    def predict_proba(self, batch: SupportQueryBatch) -> Tensor:
        """Row-wise softmax over the query logits (detached)."""
        return Tensor(softmax_rows(self.predict_logits(batch).data))


# ---------------------------------------------------------------------------
# single-row embedding reference operations
# ---------------------------------------------------------------------------

def embed_query(num_row: np.ndarray, cat_row, tokenizer: FeatureTokenizer,
                schema: FeatureSchema) -> Tensor:
    """Embedding of one row: the aggregated tokens of all its features.

    ``cat_row`` holds raw categorical values (missing as None); numerical
    values must already be encoded.
    """
    num_row = np.asarray(num_row, dtype=np.float64).reshape(-1)
    cat_row = list(cat_row)
    if len(num_row) != schema.n or len(cat_row) != schema.m:
        raise SchemaError(
            f"row has {len(num_row)} numerical / {len(cat_row)} categorical "
            f"features, schema expects {schema.n} / {schema.m}"
        )
    tokens = [tokenize_numerical(v, i, tokenizer) for i, v in enumerate(num_row)]
    tokens += [tokenize_categorical(v, j, tokenizer, schema)
               for j, v in enumerate(cat_row)]
    return aggregate_tokens(tokens)


def embed_support(num_row: np.ndarray, cat_row, y: int,
                  tokenizer: FeatureTokenizer, schema: FeatureSchema,
                  label_weights: Tensor, n_classes: int) -> Tensor:
    """Support-row embedding: query embedding plus y times the label row."""
    if not 0 <= int(y) < n_classes:
        raise IndexError(f"label {y} out of range [0,{n_classes})")
    base = embed_query(num_row, cat_row, tokenizer, schema)
    return add(base, mul_scalar(row(label_weights, 0), float(y)))
