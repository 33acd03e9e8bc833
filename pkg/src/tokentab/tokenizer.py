"""Feature tokenization: one d-dimensional token per feature.

Numerical features scale a dedicated weight row (frozen during downstream
fine-tuning); categorical features look up a row of a shared token table
and add a per-column identifier vector. Tokens are summed into the sample
embedding. An orthogonality penalty on the identifiers keeps different
categorical columns distinguishable after the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    NumericError,
    Tensor,
    add,
    aggregate_tokens,
    gather_rows,
    mul_scalar,
    outer_scale_row,
    row,
    _op,
)

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

#: index of the reserved token-table row for missing / unseen categories
NAN_ROW = 0

#: stand-in denominator for zero-norm identifier rows (removes the
#: normalization singularity; nonzero rows divide by their exact norm)
NORM_EPS = 1e-12


class SchemaError(ValueError):
    """A row or dataset does not conform to the fitted feature schema."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    vocabulary: tuple = ()

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.kind == NUMERICAL and self.vocabulary:
            raise SchemaError(f"numerical column {self.name!r} has a vocabulary")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise SchemaError(f"duplicate vocabulary entries in {self.name!r}")
        if any(v is None for v in self.vocabulary):
            raise SchemaError(f"missing-value sentinel inside vocabulary of {self.name!r}")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered column declarations plus the categorical index layout.

    Column order is fixed for the lifetime of a dataset. Offsets assign each
    categorical column a disjoint range of token-table rows starting at 1;
    row 0 is reserved for missing values.
    """

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")

    @property
    def n(self) -> int:
        return sum(1 for c in self.columns if c.kind == NUMERICAL)

    @property
    def m(self) -> int:
        return sum(1 for c in self.columns if c.kind == CATEGORICAL)

    @property
    def numerical_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind == NUMERICAL)

    @property
    def categorical_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind == CATEGORICAL)

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(len(c.vocabulary) for c in self.categorical_columns)

    @property
    def total_categories(self) -> int:
        return sum(self.vocab_sizes)

    @property
    def table_rows(self) -> int:
        return self.total_categories + 1

    @property
    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 1
        for size in self.vocab_sizes:
            out.append(pos)
            pos += size
        return tuple(out)


def map_category(value, j: int, schema: FeatureSchema) -> int:
    """Index of ``value`` from categorical column ``j`` in the token table.

    Total by design: missing values and values unseen at fit time both map
    to the reserved row 0.
    """
    cols = schema.categorical_columns
    if not 0 <= j < len(cols):
        raise IndexError(f"categorical column {j} out of range ({len(cols)} columns)")
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return NAN_ROW
    try:
        pos = cols[j].vocabulary.index(value)
    except ValueError:
        return NAN_ROW
    return schema.offsets[j] + pos


@dataclass
class CategoricalTokenTable:
    """Shared lookup table: one row per known category plus the NaN row.

    Row 0 starts at zero and is excluded from optimizer updates via
    ``update_mask``, so missing values always contribute a zero token.
    """

    weights: Tensor
    offsets: tuple[int, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        pos = 1
        for off, size in zip(self.offsets, self.sizes):
            if off != pos:
                raise SchemaError(f"offsets must partition rows 1..N, got {self.offsets}")
            pos += size
        if pos != self.weights.shape[0]:
            raise SchemaError(
                f"table has {self.weights.shape[0]} rows, offsets need {pos}"
            )

    @classmethod
    def create(cls, sizes, dim: int, rng: np.random.Generator,
               trainable: bool = True) -> "CategoricalTokenTable":
        sizes = tuple(int(s) for s in sizes)
        rows = 1 + sum(sizes)
        data = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(rows, dim))
        data[NAN_ROW] = 0.0
        offsets, pos = [], 1
        for s in sizes:
            offsets.append(pos)
            pos += s
        return cls(Tensor(data, requires_grad=trainable), tuple(offsets), sizes)

    @property
    def update_mask(self) -> np.ndarray:
        mask = np.ones(self.weights.shape, dtype=bool)
        mask[NAN_ROW] = False
        return mask


class FeatureTokenizer:
    """Bundles the three token parameter sets and turns rows into embeddings.

    Operates on encoded inputs: numerical values as floats, categorical
    values as token-table row indices. ``identifiers`` is None for the
    no-identifier model variant.
    """

    def __init__(self, w_num: Tensor, table: CategoricalTokenTable,
                 identifiers: Tensor | None):
        self.w_num = w_num
        self.table = table
        self.identifiers = identifiers
        if identifiers is not None and identifiers.data.ndim != 2:
            raise SchemaError("identifiers must be an (m, d) matrix")

    @property
    def dim(self) -> int:
        return self.w_num.shape[1]

    @classmethod
    def create(cls, n: int, vocab_sizes, dim: int, rng: np.random.Generator,
               use_identifiers: bool = True, train_numerical: bool = True,
               ) -> "FeatureTokenizer":
        sizes = tuple(int(s) for s in vocab_sizes)
        std = 1.0 / np.sqrt(dim)
        w_num = Tensor(rng.normal(0.0, std, size=(n, dim)),
                       requires_grad=train_numerical)
        table = CategoricalTokenTable.create(sizes, dim, rng)
        identifiers = None
        if use_identifiers:
            identifiers = Tensor(rng.normal(0.0, std, size=(len(sizes), dim)),
                                 requires_grad=True)
        return cls(w_num, table, identifiers)

    def parameters(self):
        """(tensor, update_mask) pairs for the optimizer."""
        out = [(self.w_num, None), (self.table.weights, self.table.update_mask)]
        if self.identifiers is not None:
            out.append((self.identifiers, None))
        return out

    def named_tensors(self):
        out = [("tokenizer.w_num", self.w_num),
               ("tokenizer.table", self.table.weights)]
        if self.identifiers is not None:
            out.append(("tokenizer.identifiers", self.identifiers))
        return out

    def feature_tokens(self, num: np.ndarray, cat: np.ndarray) -> list[Tensor]:
        """One (rows, d) token matrix per feature column of an encoded batch."""
        num = np.asarray(num, dtype=np.float64)
        cat = np.asarray(cat)
        if num.ndim != 2 or cat.ndim != 2 or num.shape[0] != cat.shape[0]:
            raise SchemaError(
                f"encoded batch shapes disagree: num {num.shape}, cat {cat.shape}"
            )
        n_used, m_used = num.shape[1], cat.shape[1]
        if n_used > self.w_num.shape[0]:
            raise SchemaError(
                f"{n_used} numerical features exceed tokenizer capacity "
                f"{self.w_num.shape[0]}"
            )
        if self.identifiers is not None and m_used > self.identifiers.shape[0]:
            raise SchemaError(
                f"{m_used} categorical features exceed identifier capacity "
                f"{self.identifiers.shape[0]}"
            )
        if not np.isfinite(num).all():
            raise NumericError("non-finite numerical feature after imputation")
        tokens = []
        for i in range(n_used):
            tokens.append(outer_scale_row(num[:, i], self.w_num, i))
        for j in range(m_used):
            tok = gather_rows(self.table.weights, cat[:, j].astype(np.intp))
            if self.identifiers is not None:
                tok = add(tok, row(self.identifiers, j))
            tokens.append(tok)
        return tokens

    def embed_rows(self, num: np.ndarray, cat: np.ndarray) -> Tensor:
        """Sample embeddings for an encoded batch: (rows, d)."""
        return aggregate_tokens(self.feature_tokens(num, cat))


# ---------------------------------------------------------------------------
# single-feature reference operations
# ---------------------------------------------------------------------------

def tokenize_numerical(value: float, i: int, tokenizer: FeatureTokenizer) -> Tensor:
    """Token for numerical feature i: value times the feature's weight row."""
    if not 0 <= i < tokenizer.w_num.shape[0]:
        raise IndexError(f"numerical feature {i} out of range")
    value = float(value)
    if not np.isfinite(value):
        raise NumericError(f"non-finite numerical feature value {value!r}")
    return mul_scalar(row(tokenizer.w_num, i), value)


def tokenize_categorical(value, j: int, tokenizer: FeatureTokenizer,
                         schema: FeatureSchema) -> Tensor:
    """Token for categorical feature j: table row for the value plus identifier."""
    idx = map_category(value, j, schema)
    tok = row(tokenizer.table.weights, idx)
    if tokenizer.identifiers is not None:
        tok = add(tok, row(tokenizer.identifiers, j))
    return tok


# ---------------------------------------------------------------------------
# identifier regularization and analysis exports
# ---------------------------------------------------------------------------

def orthogonal_loss(identifiers: Tensor) -> Tensor:
    """Sum of squared off-diagonal cosine similarities between identifiers.

    Rows are normalized to unit length first, so the loss is invariant to
    positive rescaling of any identifier and bounded by m*(m-1). A single
    identifier gives an empty sum: exactly zero.
    """
    x = identifiers.data
    if x.ndim != 2:
        raise SchemaError("identifiers must be an (m, d) matrix")
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, NORM_EPS)
    u = x / safe
    g = u @ u.T
    off = g - np.diag(np.diag(g))
    out_data = np.asarray((off * off).sum())

    def backward(grad):
        du = 4.0 * off @ u  # d loss / d normalized rows
        coef = (x * du).sum(axis=1, keepdims=True) / safe**3
        dx = du / safe - x * coef
        identifiers._accumulate(grad.item() * dx)

    return _op(out_data, (identifiers,), backward)


def category_gram_matrix(table: CategoricalTokenTable) -> np.ndarray:
    """Pairwise inner products of all token-table rows (NaN row included)."""
    w = table.weights.data
    return w @ w.T


def identifier_gram_matrix(identifiers: Tensor) -> np.ndarray:
    """Cosine-similarity matrix of the identifier rows."""
    x = identifiers.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    u = x / np.where(norms > 0.0, norms, NORM_EPS)
    return u @ u.T


def mean_abs_off_diagonal(matrix: np.ndarray) -> float:
    """Mean |entry| off the diagonal; 0.0 for a 1x1 matrix."""
    k = matrix.shape[0]
    if k <= 1:
        return 0.0
    mask = ~np.eye(k, dtype=bool)
    return float(np.abs(matrix[mask]).mean())
