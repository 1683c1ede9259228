"""Templated demo corpus with known polarity: paraphrase vs antonym/negation flip.

Each record pairs a reference statement with a meaning-preserving correct
candidate (synonym swap or negated antonym) and a contradicting incorrect
candidate (antonym swap or negated adjective).  Small vocabulary, heavy
reuse: a few hundred optimizer steps suffice to separate the polarities.
"""

from __future__ import annotations

import numpy as np

from .data import Record

ANTONYM_PAIRS = [
    ("open", "closed"),
    ("hot", "cold"),
    ("bright", "dark"),
    ("full", "empty"),
    ("fast", "slow"),
    ("clean", "dirty"),
    ("quiet", "loud"),
    ("heavy", "light"),
    ("wet", "dry"),
    ("strong", "weak"),
]

SYNONYMS = {
    "open": "unlocked",
    "closed": "shut",
    "hot": "warm",
    "cold": "chilly",
    "bright": "sunny",
    "dark": "dim",
    "full": "crowded",
    "empty": "vacant",
    "fast": "quick",
    "slow": "sluggish",
    "clean": "spotless",
    "dirty": "filthy",
    "quiet": "calm",
    "loud": "noisy",
    "heavy": "weighty",
    "light": "feathery",
    "wet": "damp",
    "dry": "parched",
    "strong": "sturdy",
    "weak": "fragile",
}

NOUNS = [
    "door", "window", "room", "box", "street", "car", "kettle", "sky",
    "bag", "floor", "shirt", "river", "lamp", "engine", "cellar", "garden",
    "hall", "bottle", "bridge", "market",
]

COPULAS = ["is", "was", "looks", "seems", "feels"]

INTENSIFIERS = ["really", "quite", "truly", "clearly"]


def make_synthetic_corpus(n: int, seed: int = 42, dataset: str = "synthetic") -> list[Record]:
    """Generate n contrastive records; deterministic for a fixed seed.

    Correct candidates lean on intensifier inserts so lexical-overlap
    baselines stay mildly positive; incorrect candidates are always an
    antonym swap or a negated adjective.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        noun = NOUNS[int(rng.integers(len(NOUNS)))]
        copula = COPULAS[int(rng.integers(len(COPULAS)))]
        adj, ant = ANTONYM_PAIRS[int(rng.integers(len(ANTONYM_PAIRS)))]
        if rng.random() < 0.5:
            adj, ant = ant, adj
        reference = f"the {noun} {copula} {adj}"
        draw = rng.random()
        if draw < 0.5:
            intens = INTENSIFIERS[int(rng.integers(len(INTENSIFIERS)))]
            correct = f"the {noun} {copula} {intens} {adj}"
        elif draw < 0.75:
            correct = f"the {noun} {copula} {SYNONYMS[adj]}"
        else:
            correct = f"the {noun} {copula} not {ant}"
        if rng.random() < 0.8:
            incorrect = f"the {noun} {copula} {ant}"
        else:
            incorrect = f"the {noun} {copula} not {adj}"
        records.append(
            Record(
                reference=reference,
                correct=correct,
                incorrect=incorrect,
                dataset=dataset,
                id=f"{dataset}-{i}",
            )
        )
    return records
