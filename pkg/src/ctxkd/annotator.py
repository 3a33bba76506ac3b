"""Pattern-based custom entities, tag vocabulary, and annotation corruption."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .transcript import LABELS, AnnotatedTranscript, EntitySpan, Word, validate

URL_RE = re.compile(r"^(?:https?://|www\.)\S+$", re.IGNORECASE)
EMAIL_RE = re.compile(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}$")
PHONE_RE = re.compile(r"^\d+(?:-\d+)+$")
NUMERIC_RE = re.compile(r"^(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?$")

MODES = ("drop_tags", "shift_boundaries", "mixed")


def classify_word(text: str):
    """Custom label for a single word, or ``None``.  First match wins."""
    if URL_RE.match(text):
        return "URL"
    if EMAIL_RE.match(text):
        return "EMAIL"
    if PHONE_RE.match(text) and 7 <= sum(c.isdigit() for c in text) <= 15:
        return "PHONE"
    if NUMERIC_RE.match(text):
        return "NUMERIC"
    return None


def extract_custom_entities(t: AnnotatedTranscript) -> AnnotatedTranscript:
    """Add single-word URL/EMAIL/PHONE/NUMERIC spans outside existing spans."""
    covered = set()
    for s in t.entities:
        covered.update(range(s.start, s.end))
    added = []
    for i, tok in enumerate(t.tokens):
        if isinstance(tok, Word) and i not in covered:
            label = classify_word(tok.text)
            if label is not None:
                added.append(EntitySpan(i, i + 1, label))
    if not added:
        return t
    spans = sorted(t.entities + tuple(added), key=lambda s: s.start)
    return t.replace(entities=spans)


def tag_vocabulary(labels=LABELS) -> list:
    labels = list(labels)
    if not labels:
        raise ValueError("labels must be non-empty")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    out = []
    for label in labels:
        out += [f"<{label}>", f"</{label}>"]
    return out


@dataclass(frozen=True)
class CorruptionSpec:
    rate: float
    mode: str = "drop_tags"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def corrupt(t: AnnotatedTranscript, spec: CorruptionSpec) -> AnnotatedTranscript:
    """Drop or shift entity spans, each selected independently with ``spec.rate``.

    Draw order per span is fixed (selection, then action, then shift), so the
    output depends only on ``(t, spec)``.
    """
    if spec.rate == 0.0 or not t.entities:
        return t
    rng = np.random.default_rng(spec.seed)
    word_idx = t.word_indices()
    pos = {w: j for j, w in enumerate(word_idx)}
    spans = list(t.entities)
    out = []
    for k, span in enumerate(spans):
        if rng.random() >= spec.rate:
            out.append(span)
            continue
        mode = spec.mode
        if mode == "mixed":
            mode = "drop_tags" if rng.random() < 0.5 else "shift_boundaries"
        if mode == "drop_tags":
            continue
        lo = out[-1].end if out else 0
        hi = spans[k + 1].start if k + 1 < len(spans) else len(t.tokens)
        # The four directions in fixed order; an illegal draw is re-drawn among the legal ones.
        first, last = pos[span.start], pos[span.end - 1]
        moves = [
            (word_idx[first - 1], span.end) if first > 0 else None,
            (word_idx[first + 1], span.end) if first < last else None,
            (span.start, word_idx[last - 1] + 1) if last > first else None,
            (span.start, word_idx[last + 1] + 1) if last + 1 < len(word_idx) else None,
        ]
        legal = [m for m in moves if m is not None and m[0] >= lo and m[1] <= hi]
        choice = moves[int(rng.integers(4))]
        if choice not in legal:
            choice = legal[int(rng.integers(len(legal)))] if legal else None
        out.append(EntitySpan(choice[0], choice[1], span.label) if choice else span)
    return validate(t.replace(entities=out))
