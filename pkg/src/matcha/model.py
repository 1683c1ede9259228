"""Forward computation: embedding lookup, context projection, conversion, pooling, cosine scoring.

Documents are processed one at a time, so pooling always divides by the true
token count; no padding masks are needed on this path.  Parameters are held
as float64 arrays whose values are float32-representable, matching the
32-bit checkpoint container exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRepresentationError, EmptyInputError, ShapeError, TokenRangeError

# Fallback scale for embeddings trained from scratch (no pre-trained table).
# Deliberately small: contrastive updates then dominate the random content
# within a short desk-scale run.
EMBED_INIT_BOUND = 0.01


@dataclass
class Hyper:
    """Model hyperparameters: embedding width, context-vector count, length cap, margin."""

    dim: int
    n_ctx: int
    max_len: int = 512
    margin: float = 1.0

    def validate(self) -> None:
        if self.dim < 1 or self.n_ctx < 1 or self.max_len < 1:
            raise ShapeError(f"dim, n_ctx, max_len must be >= 1, got {self}")
        if not self.margin > 0:
            raise ShapeError(f"margin must be > 0, got {self.margin}")


@dataclass
class ModelParams:
    """All trainable tensors plus hyperparameters."""

    embedding: np.ndarray  # (vocab_size, dim)
    proj_weight: np.ndarray  # (n_ctx * dim, dim)
    proj_bias: np.ndarray  # (n_ctx * dim,)
    conversion: np.ndarray  # (dim, dim)
    hyper: Hyper

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def validate(self) -> None:
        self.hyper.validate()
        d, k = self.hyper.dim, self.hyper.n_ctx * self.hyper.dim
        shapes = {
            "embedding": (self.embedding.shape[1:], (d,)),
            "proj_weight": (self.proj_weight.shape, (k, d)),
            "proj_bias": (self.proj_bias.shape, (k,)),
            "conversion": (self.conversion.shape, (d, d)),
        }
        for name, (got, want) in shapes.items():
            if tuple(got) != want:
                raise ShapeError(f"{name}: expected trailing shape {want}, got {tuple(got)}")
        for name in ("embedding", "proj_weight", "proj_bias", "conversion"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ShapeError(f"{name} contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(
            embedding=self.embedding.copy(),
            proj_weight=self.proj_weight.copy(),
            proj_bias=self.proj_bias.copy(),
            conversion=self.conversion.copy(),
            hyper=Hyper(**vars(self.hyper)),
        )


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    # Draw at float32 so checkpointed values round-trip bit-exactly.
    return rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)


def init_params(
    vocab_size: int,
    dim: int,
    n_ctx: int,
    *,
    max_len: int = 512,
    margin: float = 1.0,
    seed: int = 42,
    embedding: np.ndarray | None = None,
) -> ModelParams:
    """Fresh parameters: fan-balanced uniform weights, zero bias, seeded.

    Pass a pre-trained table as `embedding` to transfer it; otherwise a small
    random table is drawn.
    """
    hyper = Hyper(dim=dim, n_ctx=n_ctx, max_len=max_len, margin=margin)
    hyper.validate()
    rng = np.random.default_rng(seed)
    k = n_ctx * dim
    params = ModelParams(
        embedding=np.empty((0, 0)),
        proj_weight=_uniform(rng, (k, dim), np.sqrt(6.0 / (dim + k))),
        proj_bias=np.zeros(k, dtype=np.float64),
        conversion=_uniform(rng, (dim, dim), np.sqrt(6.0 / (dim + dim))),
        hyper=hyper,
    )
    if embedding is None:
        params.embedding = _uniform(rng, (vocab_size, dim), EMBED_INIT_BOUND)
    else:
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (vocab_size, dim):
            raise ShapeError(
                f"embedding: expected ({vocab_size}, {dim}), got {embedding.shape}"
            )
        params.embedding = embedding.copy()
    params.validate()
    return params


def embed(params: ModelParams, seq: list[int]) -> np.ndarray:
    """Look token ids up in the embedding table; returns (L, dim)."""
    ids = np.asarray(seq, dtype=np.intp)
    if ids.ndim != 1 or ids.size == 0:
        raise EmptyInputError("token sequence must be a non-empty 1-d list of ids")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise TokenRangeError(
            f"token id outside [0, {params.vocab_size}): {ids[(ids < 0) | (ids >= params.vocab_size)][0]}"
        )
    return params.embedding[ids]


def project(params: ModelParams, emb: np.ndarray) -> np.ndarray:
    """Affine map of each token embedding into n_ctx context vectors: (n_ctx, L, dim).

    Token j's output y = proj_weight @ e_j + proj_bias is split into n_ctx
    blocks of length dim; block i becomes row [i, j, :].  No activation.
    """
    emb = np.asarray(emb, dtype=np.float64)
    d, n_ctx = params.hyper.dim, params.hyper.n_ctx
    if emb.ndim != 2 or emb.shape[1] != d:
        raise ShapeError(f"embeddings must be (L, {d}), got {emb.shape}")
    y = emb @ params.proj_weight.T + params.proj_bias  # (L, n_ctx*dim)
    return y.reshape(emb.shape[0], n_ctx, d).transpose(1, 0, 2)


def convert(context: np.ndarray, conversion: np.ndarray) -> np.ndarray:
    """Apply the learned square map over the last axis: out[i, j, :] = context[i, j, :] @ conversion."""
    context = np.asarray(context, dtype=np.float64)
    conversion = np.asarray(conversion, dtype=np.float64)
    if context.ndim != 3 or conversion.ndim != 2 or conversion.shape[0] != conversion.shape[1]:
        raise ShapeError(
            f"expected (n_ctx, L, dim) and (dim, dim), got {context.shape} and {conversion.shape}"
        )
    if context.shape[2] != conversion.shape[0]:
        raise ShapeError(f"last axis {context.shape[2]} != conversion dim {conversion.shape[0]}")
    return context @ conversion


def pool(context: np.ndarray) -> np.ndarray:
    """Mean over both the context and token axes; returns the document vector (dim,)."""
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 3:
        raise ShapeError(f"expected (n_ctx, L, dim), got {context.shape}")
    if context.shape[0] == 0 or context.shape[1] == 0:
        raise EmptyInputError("cannot pool an empty context tensor")
    return context.mean(axis=(0, 1))


def represent(params: ModelParams, seq: list[int]) -> np.ndarray:
    """Document representation: pool(convert(project(embed(seq))))."""
    return pool(convert(project(params, embed(params, seq)), params.conversion))


def cosine(h1: np.ndarray, h2: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero-norm inputs are an error, not a zero score."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    n1 = float(np.linalg.norm(h1))
    n2 = float(np.linalg.norm(h2))
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateRepresentationError("zero-norm document representation")
    if np.array_equal(h1, h2):
        return 1.0
    value = float(h1 @ h2) / (n1 * n2)
    return min(1.0, max(-1.0, value))


def score(params: ModelParams, reference: str, candidate: str, vocab) -> float:
    """Similarity of two texts under fixed parameters; symmetric in its text arguments."""
    max_len = params.hyper.max_len
    h_ref = represent(params, vocab.encode(reference, max_len))
    h_cand = represent(params, vocab.encode(candidate, max_len))
    return cosine(h_ref, h_cand)
