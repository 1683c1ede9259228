"""Separation and human-agreement statistics, plus lexical overlap baselines.

Scores enter on each metric's native scale and are mapped to [0, 1] for the
statistics that need a common footing.  Table-style outputs follow the x100
reporting convention throughout.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import MatchaError, SchemaError

RANGE_KINDS = ("cosine_like", "unit", "percent")
DEFAULT_THRESHOLD_GRID = [round(t, 2) for t in np.linspace(0.0, 1.0, 21)]


@dataclass(frozen=True)
class MetricRange:
    """Native scale of a metric; fixes the affine map onto [0, 1]."""

    name: str
    kind: str = "unit"

    def __post_init__(self) -> None:
        if self.kind not in RANGE_KINDS:
            raise ValueError(f"kind must be one of {RANGE_KINDS}, got {self.kind!r}")


def rescale(score: float, metric_range: MetricRange) -> float:
    """Affine map onto [0, 1]; out-of-range inputs pass through unclamped."""
    if not np.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    if metric_range.kind == "cosine_like":
        return (score + 1.0) / 2.0
    if metric_range.kind == "percent":
        return score / 100.0
    return float(score)


def _rescaled(scores, metric_range: MetricRange) -> np.ndarray:
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("score list must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    if metric_range.kind == "cosine_like":
        return (arr + 1.0) / 2.0
    if metric_range.kind == "percent":
        return arr / 100.0
    return arr


@dataclass
class ScoreRow:
    """Scores of one (reference, candidate) pair under every computed metric."""

    id: str
    label: str  # "correct" | "incorrect"
    dataset: str = ""
    scores: dict[str, float] = field(default_factory=dict)
    human_score: float | None = None

    def __post_init__(self) -> None:
        if self.label not in ("correct", "incorrect"):
            raise ValueError(f"label must be 'correct' or 'incorrect', got {self.label!r}")


@dataclass
class ScoreTable:
    rows: list[ScoreRow] = field(default_factory=list)

    def labeled_scores(self, metric: str, label: str) -> list[float]:
        return [r.scores[metric] for r in self.rows if r.label == label and metric in r.scores]

    def paired_gaps(self, metric: str, metric_range: MetricRange) -> list[float]:
        """Rescaled correct-minus-incorrect gap for every id carrying both labels."""
        correct: dict[tuple[str, str], float] = {}
        incorrect: dict[tuple[str, str], float] = {}
        for row in self.rows:
            if metric not in row.scores:
                continue
            side = correct if row.label == "correct" else incorrect
            side[(row.dataset, row.id)] = row.scores[metric]
        r = MetricRange(metric, metric_range.kind)
        return [
            rescale(correct[key], r) - rescale(incorrect[key], r)
            for key in correct
            if key in incorrect
        ]

    def merge_external(self, path: str) -> None:
        """Merge a JSONL of {"id", "metric", "score"} rows (optional "label", "dataset")."""
        index = {(r.dataset, r.id, r.label): r for r in self.rows}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
                if not isinstance(obj, dict) or "id" not in obj or "metric" not in obj or "score" not in obj:
                    raise SchemaError(f"{path}: line {lineno}: need 'id', 'metric', 'score'")
                label = obj.get("label", "correct")
                dataset = obj.get("dataset", "")
                key = (dataset, str(obj["id"]), label)
                row = index.get(key)
                if row is None:
                    row = ScoreRow(id=str(obj["id"]), label=label, dataset=dataset)
                    self.rows.append(row)
                    index[key] = row
                row.scores[str(obj["metric"])] = float(obj["score"])


def n_delta(correct, incorrect, metric_range: MetricRange) -> float:
    """Mean rescaled correct score minus mean rescaled incorrect score, x100."""
    return float(
        (_rescaled(correct, metric_range).mean() - _rescaled(incorrect, metric_range).mean()) * 100.0
    )


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def macro_f1_midpoint(correct, incorrect, metric_range: MetricRange) -> float:
    """Macro-F1 of the fixed classifier "positive iff rescaled score > 0.5", x100.

    Correct-candidate scores are the positive instances, incorrect ones the
    negative instances; a class with empty precision+recall scores 0.
    """
    pos = _rescaled(correct, metric_range) > 0.5
    neg = _rescaled(incorrect, metric_range) > 0.5
    tp, fn = int(pos.sum()), int((~pos).sum())
    fp, tn = int(neg.sum()), int((~neg).sum())
    f1_positive = _f1(tp, fp, fn)
    f1_negative = _f1(tn, fn, fp)
    return (f1_positive + f1_negative) / 2.0 * 100.0


def threshold_curve(pair_gaps, grid=None) -> list[tuple[float, float]]:
    """Percentage of pairs whose rescaled gap strictly exceeds each threshold."""
    gaps = np.asarray(list(pair_gaps), dtype=np.float64)
    if gaps.size == 0:
        raise ValueError("pair gap list must be non-empty")
    if grid is None:
        grid = DEFAULT_THRESHOLD_GRID
    return [(float(t), float(100.0 * np.count_nonzero(gaps > t) / gaps.size)) for t in grid]


def wasserstein_1d(a, b) -> float:
    """First Wasserstein distance between two empirical distributions.

    Computed as the area between the empirical CDFs over the merged support;
    for equal sizes this reduces to the mean absolute gap of sorted samples.
    """
    a = np.sort(np.asarray(list(a), dtype=np.float64))
    b = np.sort(np.asarray(list(b), dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    points = np.concatenate([a, b])
    points.sort(kind="mergesort")
    deltas = np.diff(points)
    cdf_a = np.searchsorted(a, points[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, points[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def _agreement_rows(table: ScoreTable, metrics: list[str], rating_scales) -> list[tuple[dict, float]]:
    """Per-row rescaled metric scores and rescaled human score, validated."""
    if not metrics:
        raise ValueError("metrics list must be non-empty")
    rows = []
    for row in table.rows:
        if row.human_score is None:
            raise MatchaError(f"row {row.id!r} ({row.label}) has no human score")
        missing = [m for m in metrics if m.name not in row.scores]
        if missing:
            raise MatchaError(f"row {row.id!r} lacks scores for {[m.name for m in missing]}")
        scale = (0.0, 1.0)
        if rating_scales:
            scale = rating_scales.get(row.dataset, (0.0, 1.0))
        lo, hi = scale
        human = (row.human_score - lo) / (hi - lo)
        rows.append(({m.name: rescale(row.scores[m.name], m) for m in metrics}, human))
    if not rows:
        raise ValueError("score table is empty")
    return rows


def rank_at_1(
    table: ScoreTable, metrics: list[MetricRange], rating_scales: dict | None = None
) -> dict[str, float]:
    """Percentage of rows on which each metric is (tied-)closest to the human rating."""
    rows = _agreement_rows(table, metrics, rating_scales)
    credits = Counter()
    for scores, human in rows:
        diffs = {name: abs(value - human) for name, value in scores.items()}
        best = min(diffs.values())
        for name, diff in diffs.items():
            if diff == best:
                credits[name] += 1
    return {m.name: 100.0 * credits[m.name] / len(rows) for m in metrics}


def dcg(
    table: ScoreTable, metrics: list[MetricRange], rating_scales: dict | None = None
) -> dict[str, float]:
    """Average rank-discounted closeness-to-human credit per metric.

    Metrics are ranked per row by absolute distance to the human rating
    (ties broken by name); rank r of M earns 100 * (M - r + 1) / (M * log2(r + 1)).
    """
    rows = _agreement_rows(table, metrics, rating_scales)
    m_count = len(metrics)
    totals = {m.name: 0.0 for m in metrics}
    for scores, human in rows:
        ordered = sorted(scores, key=lambda name: (abs(scores[name] - human), name))
        for rank, name in enumerate(ordered, start=1):
            totals[name] += 100.0 * (m_count - rank + 1) / (m_count * np.log2(rank + 1))
    return {name: total / len(rows) for name, total in totals.items()}


def ccc(x, y) -> float:
    """Concordance correlation: agreement in both ordering and scale, in [-1, 1]."""
    x = np.asarray(list(x), dtype=np.float64)
    y = np.asarray(list(y), dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    mx, my = x.mean(), y.mean()
    vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
    if vx == 0.0 and vy == 0.0:
        raise ValueError("both inputs are constant; concordance undefined")
    cov = ((x - mx) * (y - my)).mean()
    return float(2.0 * cov / (vx + vy + (mx - my) ** 2))


_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def _lex_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def rouge_n_f1(reference: str, candidate: str, n: int) -> float:
    """Clipped n-gram overlap F1 in [0, 1]; degenerate inputs score 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = _lex_tokens(reference)
    cand = _lex_tokens(candidate)
    ref_grams = Counter(zip(*(ref[i:] for i in range(n)))) if len(ref) >= n else Counter()
    cand_grams = Counter(zip(*(cand[i:] for i in range(n)))) if len(cand) >= n else Counter()
    if not ref_grams or not cand_grams:
        return 0.0
    overlap = sum(min(count, ref_grams[gram]) for gram, count in cand_grams.items())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand_grams.values())
    recall = overlap / sum(ref_grams.values())
    return 2 * precision * recall / (precision + recall)


def rouge_l_f1(reference: str, candidate: str) -> float:
    """Longest-common-subsequence F1 over lexical tokens, in [0, 1]."""
    ref = _lex_tokens(reference)
    cand = _lex_tokens(candidate)
    if not ref or not cand:
        return 0.0
    prev = [0] * (len(cand) + 1)
    for r_tok in ref:
        cur = [0] * (len(cand) + 1)
        for j, c_tok in enumerate(cand, start=1):
            cur[j] = prev[j - 1] + 1 if r_tok == c_tok else max(prev[j], cur[j - 1])
        prev = cur
    lcs = prev[-1]
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass
class SeparationReport:
    """Per-dataset separation statistics in the x100 table convention."""

    metric: str
    pairs: int
    mean_correct: float  # raw scale x100
    mean_incorrect: float  # raw scale x100
    n_delta: float
    macro_f1: float
    wasserstein: float  # on rescaled scores, x100
    threshold_curve: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "pairs": self.pairs,
            "mean_correct": self.mean_correct,
            "mean_incorrect": self.mean_incorrect,
            "n_delta": self.n_delta,
            "macro_f1": self.macro_f1,
            "wasserstein": self.wasserstein,
            "threshold_curve": [[t, p] for t, p in self.threshold_curve],
        }


def separation_report(
    table: ScoreTable, metric: str, metric_range: MetricRange, grid=None
) -> SeparationReport:
    """Assemble every separation statistic for one metric over a labeled table."""
    correct = table.labeled_scores(metric, "correct")
    incorrect = table.labeled_scores(metric, "incorrect")
    if not correct or not incorrect:
        raise ValueError(f"table has no labeled {metric!r} scores on both sides")
    gaps = table.paired_gaps(metric, metric_range)
    return SeparationReport(
        metric=metric,
        pairs=len(gaps),
        mean_correct=float(np.mean(correct)) * 100.0,
        mean_incorrect=float(np.mean(incorrect)) * 100.0,
        n_delta=n_delta(correct, incorrect, metric_range),
        macro_f1=macro_f1_midpoint(correct, incorrect, metric_range),
        wasserstein=wasserstein_1d(
            _rescaled(correct, metric_range), _rescaled(incorrect, metric_range)
        )
        * 100.0,
        threshold_curve=threshold_curve(gaps, grid) if gaps else [],
    )
