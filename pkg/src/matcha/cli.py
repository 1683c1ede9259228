"""Command-line entry points: tokenize, train, score, evaluate, attribute.

A single JSON config file can seed the train command; explicit flags
override file values, which override built-in defaults.  All file outputs
are written atomically (temp file + rename) and every report embeds the
seed, a hash of the effective config, and the package version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .attribution import DIRECTIONS, integrated_gradients
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, Record, load_dataset, load_registry, tokenize_records
from .errors import ConfigError, MatchaError
from .evaluation import (
    MetricRange,
    ScoreRow,
    ScoreTable,
    ccc,
    dcg,
    rank_at_1,
    rescale,
    rouge_l_f1,
    rouge_n_f1,
    separation_report,
)
from .model import init_params, score
from .tokenizer import WordVocabulary, build_word_vocabulary, load_vocabulary
from .training import SCHEDULE_STRATEGIES, TrainConfig, train

DEFAULT_DIM = 64
DEFAULT_N_CTX = 16
DEFAULT_MAX_LEN = 512


@dataclass
class RunConfig:
    """Validated arguments of one CLI invocation."""

    command: str
    vocab: str | None = None
    merges: str | None = None
    data: str | None = None
    ckpt: str | None = None
    init_ckpt: str | None = None
    out: str | None = None
    report: str | None = None
    csv: str | None = None
    text: str | None = None
    ref: str | None = None
    cand: str | None = None
    direction: str = "both"
    steps: int = 64
    baseline: str = "zero"
    scores: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)
    rouge: bool = False
    max_len: int = DEFAULT_MAX_LEN
    dim: int = DEFAULT_DIM
    n_ctx: int = DEFAULT_N_CTX
    train: TrainConfig = field(default_factory=TrainConfig)


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".out-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(seed: int, config: RunConfig) -> dict:
    payload = json.dumps(asdict(config), sort_keys=True, default=str).encode("utf-8")
    return {
        "seed": seed,
        "config_hash": hashlib.sha256(payload).hexdigest()[:16],
        "version": __version__,
    }


def _load_tokenizer(config: RunConfig, corpus_texts=None):
    """BPE when merges are given, word-level JSON when only a vocab is given,
    otherwise a fresh word vocabulary built from the corpus."""
    if config.vocab and config.merges:
        return load_vocabulary(config.vocab, config.merges)
    if config.vocab:
        return WordVocabulary.load(config.vocab)
    if corpus_texts is None:
        raise ConfigError("no vocabulary given and no corpus to build one from")
    return build_word_vocabulary(corpus_texts)


def _manifests_for(data_path: str) -> list[DatasetManifest]:
    if os.path.isdir(data_path):
        registry = os.path.join(data_path, "registry.json")
        if not os.path.exists(registry):
            raise ConfigError(f"{data_path}: directory has no registry.json")
        return load_registry(registry)
    if data_path.endswith(".json"):
        return load_registry(data_path)
    name = os.path.splitext(os.path.basename(data_path))[0]
    return [DatasetManifest(name=name, path=data_path, has_contrastive=False)]


def _require(problems: list[str], value, message: str) -> None:
    if not value:
        problems.append(message)


def _cmd_tokenize(config: RunConfig) -> int:
    vocab = _load_tokenizer(config)
    ids = vocab.encode(config.text, config.max_len)
    print(" ".join(str(i) for i in ids))
    return 0


def _cmd_score(config: RunConfig) -> int:
    params = load_checkpoint(config.ckpt)
    vocab = _load_tokenizer(config)
    print(score(params, config.ref, config.cand, vocab))
    return 0


def _cmd_train(config: RunConfig) -> int:
    cfg = config.train
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    manifests = _manifests_for(config.data)
    per_dataset: list[tuple[DatasetManifest, list[Record]]] = []
    for manifest in manifests:
        per_dataset.append((manifest, load_dataset(manifest, rng)))

    texts = [
        t
        for _, records in per_dataset
        for r in records
        for t in (r.reference, r.correct, r.incorrect)
        if t
    ]
    vocab = _load_tokenizer(config, corpus_texts=texts)
    if isinstance(vocab, WordVocabulary) and not config.vocab:
        vocab.save(config.out + ".vocab.json")

    if config.init_ckpt:
        params = load_checkpoint(config.init_ckpt)
        if params.vocab_size != vocab.vocab_size:
            raise ConfigError(
                f"checkpoint vocab_size {params.vocab_size} != tokenizer vocab_size {vocab.vocab_size}"
            )
    else:
        params = init_params(
            vocab.vocab_size,
            config.dim,
            config.n_ctx,
            max_len=config.max_len,
            margin=cfg.margin,
            seed=cfg.seed,
        )

    datasets = [
        tokenize_records(m.name, records, vocab, params.hyper.max_len, m.has_contrastive)
        for m, records in per_dataset
    ]
    params, report = train(cfg, datasets, params)
    save_checkpoint(params, config.out)

    report_path = config.report or config.out + ".train.jsonl"
    lines = [json.dumps(_provenance(cfg.seed, config))]
    for row in report:
        lines.append(json.dumps(row))
        print(f"epoch {row['epoch']}: mean_loss={row['mean_loss']:.6f} lr={row['lr']:.3g} batches={row['batches']}")
    _write_atomic(report_path, "\n".join(lines) + "\n")
    print(f"checkpoint written to {config.out}")
    return 0


def _default_ranges() -> dict[str, MetricRange]:
    return {
        "matcha": MetricRange("matcha", "cosine_like"),
        "rouge1": MetricRange("rouge1", "unit"),
        "rouge2": MetricRange("rouge2", "unit"),
        "rougeL": MetricRange("rougeL", "unit"),
    }


def _parse_metric_ranges(entries: list[str]) -> dict[str, MetricRange]:
    ranges = {}
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"--metrics entry {entry!r} must be name=kind")
        name, kind = entry.split("=", 1)
        ranges[name] = MetricRange(name, kind)
    return ranges


def _cmd_evaluate(config: RunConfig) -> int:
    cfg = config.train
    rng = np.random.default_rng(cfg.seed)
    manifests = _manifests_for(config.data)
    params = load_checkpoint(config.ckpt) if config.ckpt else None
    vocab = None
    if params is not None:
        vocab = _load_tokenizer(config)

    table = ScoreTable()
    rating_scales: dict[str, tuple[float, float]] = {}
    for manifest in manifests:
        if manifest.rating_scale is not None:
            rating_scales[manifest.name] = manifest.rating_scale
        records = load_dataset(manifest, rng, complete_triplets=False)
        for rec in records:
            sides = [("correct", rec.correct)] + (
                [("incorrect", rec.incorrect)] if rec.incorrect else []
            )
            for label, candidate in sides:
                row = ScoreRow(
                    id=rec.id,
                    label=label,
                    dataset=manifest.name,
                    human_score=rec.human_score if label == "correct" else None,
                )
                if params is not None:
                    row.scores["matcha"] = score(params, rec.reference, candidate, vocab)
                if config.rouge:
                    row.scores["rouge1"] = rouge_n_f1(rec.reference, candidate, 1)
                    row.scores["rouge2"] = rouge_n_f1(rec.reference, candidate, 2)
                    row.scores["rougeL"] = rouge_l_f1(rec.reference, candidate)
                table.rows.append(row)
    for path in config.scores:
        table.merge_external(path)

    ranges = _default_ranges()
    ranges.update(_parse_metric_ranges(config.metrics))
    dataset_names = sorted({r.dataset for r in table.rows})
    metric_names = sorted({m for r in table.rows for m in r.scores})

    separation: dict[str, dict[str, dict]] = {}
    for ds in dataset_names:
        sub = ScoreTable(rows=[r for r in table.rows if r.dataset == ds])
        per_metric = {}
        for metric in metric_names:
            r = ranges.get(metric, MetricRange(metric, "unit"))
            if sub.labeled_scores(metric, "correct") and sub.labeled_scores(metric, "incorrect"):
                per_metric[metric] = separation_report(sub, metric, r).to_dict()
        if per_metric:
            separation[ds] = per_metric

    agreement: dict[str, dict[str, float]] = {}
    human_rows = [r for r in table.rows if r.human_score is not None]
    if human_rows:
        covered = [m for m in metric_names if all(m in r.scores for r in human_rows)]
        if covered:
            sub = ScoreTable(rows=human_rows)
            range_list = [ranges.get(m, MetricRange(m, "unit")) for m in covered]
            agreement["rank_at_1"] = rank_at_1(sub, range_list, rating_scales)
            agreement["dcg"] = dcg(sub, range_list, rating_scales)
            ccc_scores = {}
            for metric_range in range_list:
                humans, values = [], []
                for row in human_rows:
                    lo, hi = rating_scales.get(row.dataset, (0.0, 1.0))
                    humans.append((row.human_score - lo) / (hi - lo))
                    values.append(rescale(row.scores[metric_range.name], metric_range))
                ccc_scores[metric_range.name] = ccc(values, humans) * 100.0
            agreement["ccc"] = ccc_scores

    document = {
        "provenance": _provenance(cfg.seed, config),
        "separation": separation,
        "agreement": agreement,
    }
    _write_atomic(config.out, json.dumps(document, indent=2) + "\n")
    if config.csv:
        lines = ["dataset,metric,threshold,percentage"]
        for ds, per_metric in separation.items():
            for metric, rep in per_metric.items():
                for threshold, pct in rep["threshold_curve"]:
                    lines.append(f"{ds},{metric},{threshold},{pct}")
        _write_atomic(config.csv, "\n".join(lines) + "\n")
    print(f"report written to {config.out}")
    return 0


def _cmd_attribute(config: RunConfig) -> int:
    params = load_checkpoint(config.ckpt)
    vocab = _load_tokenizer(config)
    directions = list(DIRECTIONS) if config.direction == "both" else [config.direction]
    results = [
        integrated_gradients(
            params, config.ref, config.cand, vocab, d, config.steps, config.baseline
        ).to_dict()
        for d in directions
    ]
    document = {
        "provenance": _provenance(config.train.seed, config),
        "reference": config.ref,
        "candidate": config.cand,
        "results": results,
    }
    text = json.dumps(document, indent=2)
    if config.out:
        _write_atomic(config.out, text + "\n")
    else:
        print(text)
    return 0


def _validate(config: RunConfig) -> None:
    problems: list[str] = []
    if config.command == "tokenize":
        _require(problems, config.vocab, "tokenize requires --vocab")
        _require(problems, config.text, "tokenize requires a text argument")
    elif config.command == "score":
        _require(problems, config.ckpt, "score requires --ckpt")
        _require(problems, config.vocab, "score requires --vocab")
        _require(problems, config.ref, "score requires --ref")
        _require(problems, config.cand, "score requires --cand")
    elif config.command == "train":
        _require(problems, config.data, "train requires --data")
        _require(problems, config.out, "train requires --out")
    elif config.command == "evaluate":
        _require(problems, config.data, "evaluate requires --data")
        _require(problems, config.out, "evaluate requires --out")
        if config.ckpt and not config.vocab:
            problems.append("evaluate with --ckpt requires --vocab")
    elif config.command == "attribute":
        _require(problems, config.ckpt, "attribute requires --ckpt")
        _require(problems, config.vocab, "attribute requires --vocab")
        _require(problems, config.ref, "attribute requires --ref")
        _require(problems, config.cand, "attribute requires --cand")
        if config.direction != "both" and config.direction not in DIRECTIONS:
            problems.append(f"--direction must be 'both' or one of {DIRECTIONS}")
        if config.steps < 8:
            problems.append("--steps must be >= 8")
    if problems:
        raise ConfigError("; ".join(problems))


def run(config: RunConfig) -> int:
    """Execute one validated command; outputs land atomically."""
    _validate(config)
    handler = {
        "tokenize": _cmd_tokenize,
        "score": _cmd_score,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "attribute": _cmd_attribute,
    }[config.command]
    return handler(config)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matcha", description="Contrastive semantic matching metric")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_vocab_flags(p):
        p.add_argument("--vocab", help="token vocabulary: BPE JSON (with --merges) or word-level JSON")
        p.add_argument("--merges", help="BPE merges file (header line + 'left right' lines)")
        p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN, help="sequence length cap (default: 512)")

    p = sub.add_parser("tokenize", help="print token ids for a text")
    add_vocab_flags(p)
    p.add_argument("text", help="text to tokenize")

    p = sub.add_parser("train", help="train from a corpus and write a checkpoint")
    add_vocab_flags(p)
    p.add_argument("--config", help="JSON file of training settings; flags override it")
    p.add_argument("--data", help="registry.json, its directory, or a single JSONL corpus")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--report", help="per-epoch JSONL report path (default: <out>.train.jsonl)")
    p.add_argument("--init-ckpt", help="start from this checkpoint (e.g. an imported embedding table)")
    p.add_argument("--dim", type=int, default=None, help=f"embedding width for fresh models (default: {DEFAULT_DIM})")
    p.add_argument("--n-ctx", type=int, default=None, help="context vectors per token (default: 16)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default: 15)")
    p.add_argument("--batch-size", type=int, default=None, help="triplets per batch (default: 128)")
    p.add_argument("--grad-accum", type=int, default=None, help="micro-batches per optimizer step (default: 8)")
    p.add_argument("--lr", type=float, default=None, help="base learning rate (default: 1e-4)")
    p.add_argument("--weight-decay", type=float, default=None, help="decoupled weight decay (default: 0.05)")
    p.add_argument("--margin", type=float, default=None, help="contrastive margin (default: 1.0)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: 42)")
    p.add_argument("--schedule", default=None, choices=sorted(SCHEDULE_STRATEGIES),
                   help="batch schedule strategy (default: interleaved)")
    p.add_argument("--gamma", type=float, default=None, help="per-epoch exponential lr decay (default: 0.9)")
    p.add_argument("--curriculum-order", default=None, help="comma-separated dataset order for curriculum")
    p.add_argument("--freeze-embeddings", action="store_const", const=True, default=None,
                   help="do not update the embedding table")

    p = sub.add_parser("score", help="similarity of a reference/candidate pair")
    add_vocab_flags(p)
    p.add_argument("--ckpt", help="model checkpoint")
    p.add_argument("--ref", help="reference text")
    p.add_argument("--cand", help="candidate text")

    p = sub.add_parser("evaluate", help="separation and human-agreement report over a corpus")
    add_vocab_flags(p)
    p.add_argument("--data", help="registry.json, its directory, or a single JSONL corpus")
    p.add_argument("--ckpt", help="score the corpus with this checkpoint as metric 'matcha'")
    p.add_argument("--scores", action="append", default=[],
                   help="external metric scores JSONL {id, metric, score}; repeatable")
    p.add_argument("--metrics", action="append", default=[],
                   help="metric range declaration name=cosine_like|unit|percent; repeatable")
    p.add_argument("--rouge", action="store_true", help="also compute rouge1/rouge2/rougeL baselines")
    p.add_argument("--out", help="report JSON output path")
    p.add_argument("--csv", help="optional CSV export of threshold curves")
    p.add_argument("--seed", type=int, default=None, help="seed recorded in the report (default: 42)")

    p = sub.add_parser("attribute", help="integrated-gradients token attribution for a pair")
    add_vocab_flags(p)
    p.add_argument("--ckpt", help="model checkpoint")
    p.add_argument("--ref", help="reference text")
    p.add_argument("--cand", help="candidate text")
    p.add_argument("--direction", default="both", help="both, toward_candidate, or toward_reference")
    p.add_argument("--steps", type=int, default=64, help="Riemann steps (default: 64)")
    p.add_argument("--baseline", default="zero", help="baseline kind (default: zero)")
    p.add_argument("--out", help="write JSON here instead of stdout")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    train_cfg = TrainConfig()
    file_values: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            try:
                file_values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON at line {exc.lineno}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        unknown = set(file_values) - set(vars(train_cfg)) - {"dim", "n_ctx", "max_len"}
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        for key, value in file_values.items():
            if hasattr(train_cfg, key):
                setattr(train_cfg, key, value)

    flag_map = {
        "epochs": "epochs",
        "batch_size": "batch_size",
        "grad_accum": "grad_accum_steps",
        "lr": "lr",
        "weight_decay": "weight_decay",
        "margin": "margin",
        "seed": "seed",
        "schedule": "schedule_strategy",
        "gamma": "lr_decay",
    }
    for flag, attr in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(train_cfg, attr, value)
    if getattr(args, "freeze_embeddings", None):
        train_cfg.train_embeddings = False
    if getattr(args, "curriculum_order", None):
        train_cfg.curriculum_order = [s for s in args.curriculum_order.split(",") if s]

    def pick(flag: str, default):
        value = getattr(args, flag, None)
        if value is not None:
            return value
        return file_values.get(flag, default)

    return RunConfig(
        command=args.command,
        vocab=getattr(args, "vocab", None),
        merges=getattr(args, "merges", None),
        data=getattr(args, "data", None),
        ckpt=getattr(args, "ckpt", None),
        init_ckpt=getattr(args, "init_ckpt", None),
        out=getattr(args, "out", None),
        report=getattr(args, "report", None),
        csv=getattr(args, "csv", None),
        text=getattr(args, "text", None),
        ref=getattr(args, "ref", None),
        cand=getattr(args, "cand", None),
        direction=getattr(args, "direction", "both"),
        steps=getattr(args, "steps", 64),
        baseline=getattr(args, "baseline", "zero"),
        scores=list(getattr(args, "scores", []) or []),
        metrics=list(getattr(args, "metrics", []) or []),
        rouge=bool(getattr(args, "rouge", False)),
        max_len=getattr(args, "max_len", DEFAULT_MAX_LEN),
        dim=int(pick("dim", DEFAULT_DIM)),
        n_ctx=int(pick("n_ctx", DEFAULT_N_CTX)),
        train=train_cfg,
    )


_ERROR_CATEGORIES = [
    (ConfigError, "config error", 2),
    (MatchaError, "error", 1),
    (FileNotFoundError, "file error", 3),
    (ValueError, "invalid value", 2),
]


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        return run(config)
    except tuple(cls for cls, _, _ in _ERROR_CATEGORIES) as exc:
        for cls, label, code in _ERROR_CATEGORIES:
            if isinstance(exc, cls):
                print(f"{label}: {exc}", file=sys.stderr)
                return code
        raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
