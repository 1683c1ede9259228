"""Token attribution for similarity scores via integrated gradients.

One document of a pair is attributed: its token-embedding matrix is
interpolated from a baseline to its actual value while the other document's
representation stays fixed, and the path-averaged gradient of the score is
weighted by the input delta.  The midpoint grid never evaluates at the
baseline itself, which sidesteps the zero-norm cosine singularity of an
all-zero start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRepresentationError
from .model import ModelParams, embed, represent
from .training import _cosine_with_grads

DIRECTIONS = ("toward_candidate", "toward_reference")
BASELINE_KINDS = ("zero", "input")
DEFAULT_STEPS = 64


@dataclass
class AttributionResult:
    """Per-token attribution of one document's contribution to the pair score."""

    direction: str
    per_token: list[tuple[str, float]]
    total: float
    completeness_residual: float
    steps: int
    score: float
    baseline_score: float

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "per_token": [[tok, val] for tok, val in self.per_token],
            "total": self.total,
            "completeness_residual": self.completeness_residual,
            "steps": self.steps,
            "score": self.score,
            "baseline_score": self.baseline_score,
        }


def path_integral_attributions(grad_fn, inputs: np.ndarray, baseline: np.ndarray, steps: int) -> np.ndarray:
    """Midpoint-rule integrated gradients of an arbitrary scalar function.

    grad_fn maps a point shaped like `inputs` to the gradient at that point.
    Exact for linear functions at any step count >= 1.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    inputs = np.asarray(inputs, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if inputs.shape != baseline.shape:
        raise ValueError(f"baseline shape {baseline.shape} != input shape {inputs.shape}")
    delta = inputs - baseline
    grad_sum = np.zeros_like(inputs)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        grad_sum += grad_fn(baseline + alpha * delta)
    return delta * (grad_sum / steps)


def _score_and_grad(params: ModelParams, emb: np.ndarray, h_fixed: np.ndarray):
    """Pair score and its gradient with respect to the attributed embedding matrix."""
    n_ctx, dim = params.hyper.n_ctx, params.hyper.dim
    length = emb.shape[0]
    y = params.proj_weight @ emb.mean(axis=0) + params.proj_bias
    ctx_mean = y.reshape(n_ctx, dim).mean(axis=0)
    h = ctx_mean @ params.conversion
    sim, _, g_h = _cosine_with_grads(h_fixed, h)
    d_ctx = params.conversion @ g_h
    d_emb_row = params.proj_weight.T @ (np.tile(d_ctx, n_ctx) / n_ctx) / length
    return sim, np.tile(d_emb_row, (length, 1))


def integrated_gradients(
    params: ModelParams,
    reference: str,
    candidate: str,
    vocab,
    direction: str = "toward_candidate",
    steps: int = DEFAULT_STEPS,
    baseline_kind: str = "zero",
) -> AttributionResult:
    """Attribute the similarity score to the tokens of one side of the pair.

    toward_candidate interpolates the candidate's embeddings with the
    reference representation fixed; toward_reference does the opposite.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if baseline_kind not in BASELINE_KINDS:
        raise ValueError(f"baseline_kind must be one of {BASELINE_KINDS}, got {baseline_kind!r}")
    if steps < 8:
        raise ValueError("steps must be >= 8 for attribution runs")
    max_len = params.hyper.max_len
    attributed_text, fixed_text = (
        (candidate, reference) if direction == "toward_candidate" else (reference, candidate)
    )
    ids = vocab.encode(attributed_text, max_len)
    emb = embed(params, ids)
    baseline = emb.copy() if baseline_kind == "input" else np.zeros_like(emb)
    h_fixed = represent(params, vocab.encode(fixed_text, max_len))

    def grad_fn(point: np.ndarray) -> np.ndarray:
        try:
            return _score_and_grad(params, point, h_fixed)[1]
        except DegenerateRepresentationError as exc:
            raise DegenerateRepresentationError(
                f"zero-norm representation along the interpolation path; "
                f"try a different baseline ({exc})"
            ) from exc

    attributions = path_integral_attributions(grad_fn, emb, baseline, steps)
    per_token_values = attributions.sum(axis=1)
    try:
        score_actual, _ = _score_and_grad(params, emb, h_fixed)
        score_baseline, _ = _score_and_grad(params, baseline, h_fixed)
    except DegenerateRepresentationError as exc:
        raise DegenerateRepresentationError(
            f"zero-norm representation at an interpolation endpoint; "
            f"try a different baseline ({exc})"
        ) from exc
    total = float(per_token_values.sum())
    return AttributionResult(
        direction=direction,
        per_token=[(vocab.decode([i]), float(v)) for i, v in zip(ids, per_token_values)],
        total=total,
        completeness_residual=abs(total - (score_actual - score_baseline)),
        steps=steps,
        score=score_actual,
        baseline_score=score_baseline,
    )


def attribution_gap(
    params: ModelParams,
    pairs: list[tuple[str, str, str]],
    vocab,
    steps: int = DEFAULT_STEPS,
    baseline_kind: str = "zero",
) -> tuple[float, float, float]:
    """Mean total attribution over correct vs incorrect pairs and their gap, x100.

    Each pair is (reference, correct candidate, incorrect candidate); the
    candidate side is attributed.
    """
    if not pairs:
        raise ValueError("pair list must be non-empty")
    correct_totals = []
    incorrect_totals = []
    for reference, correct, incorrect in pairs:
        correct_totals.append(
            integrated_gradients(
                params, reference, correct, vocab, "toward_candidate", steps, baseline_kind
            ).total
        )
        incorrect_totals.append(
            integrated_gradients(
                params, reference, incorrect, vocab, "toward_candidate", steps, baseline_kind
            ).total
        )
    mean_correct = float(np.mean(correct_totals)) * 100.0
    mean_incorrect = float(np.mean(incorrect_totals)) * 100.0
    return mean_correct, mean_incorrect, mean_correct - mean_incorrect
