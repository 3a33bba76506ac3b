"""Transcript evaluation: WER, punctuation/capitalization, strict NER, entity formatting.

Every aligned metric runs over the normalised word sequences (punctuation
dropped, lowercased) and then looks back at the original tokens for marks,
capitalization and spans.  Counts pool by addition, so corpus scores are
micro-averages over documents.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DocIdMismatch, EmptyReference
from .transcript import MARKS, AnnotatedTranscript, Punct, Word, label_kind, surface

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"


# ---------------------------------------------------------------------------
# Word alignment


def normalize(t: AnnotatedTranscript) -> list:
    """Lowercased words in order; punctuation tokens and tags dropped."""
    return [tok.text.lower() for tok in t.tokens if isinstance(tok, Word)]


@dataclass(frozen=True)
class WordAlignment:
    """Edit script from ``ref`` to ``hyp`` as ``(op, ref_index, hyp_index)`` triples.

    ``ref_index`` is ``None`` for insertions, ``hyp_index`` for deletions.
    """

    ops: tuple

    @property
    def cost(self) -> int:
        return sum(op != MATCH for op, _, _ in self.ops)

    def counts(self) -> dict:
        c = Counter(op for op, _, _ in self.ops)
        return {k: c.get(k, 0) for k in (MATCH, SUB, DEL, INS)}

    def ref_to_hyp(self) -> dict:
        """Ref word index -> hyp word index for matched and substituted pairs."""
        return {i: j for op, i, j in self.ops if op in (MATCH, SUB)}

    def replay(self, ref: Sequence, hyp: Sequence) -> list:
        """Rebuild ``hyp`` from ``ref`` by applying the script."""
        out = []
        for op, i, j in self.ops:
            if op == MATCH:
                out.append(ref[i])
            elif op in (SUB, INS):
                out.append(hyp[j])
        return out


def align_words(ref: Sequence, hyp: Sequence) -> WordAlignment:
    """Levenshtein-optimal alignment; ties prefer match, then substitute, delete, insert."""
    a, b = kernels.encode_pair(list(ref), list(hyp))
    d = kernels.edit_table(a, b)
    i, j = len(a), len(b)
    ops = []
    while i > 0 or j > 0:
        here = d[i, j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and here == d[i - 1, j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == d[i - 1, j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and here == d[i - 1, j] + 1:
            ops.append((DEL, i - 1, None))
            i -= 1
        else:
            ops.append((INS, None, j - 1))
            j -= 1
    return WordAlignment(tuple(reversed(ops)))


def _words(x) -> list:
    return normalize(x) if isinstance(x, AnnotatedTranscript) else list(x)


def word_errors(ref, hyp) -> tuple:
    """``(edits, n_ref)`` over normalised words (or raw word lists)."""
    r, h = _words(ref), _words(hyp)
    a, b = kernels.encode_pair(r, h)
    return int(kernels.edit_distance(a, b)), len(r)


def wer(ref, hyp) -> float:
    """(S + D + I) / N over normalised words."""
    edits, n = word_errors(ref, hyp)
    if n == 0:
        raise EmptyReference("reference has no words after normalisation")
    return edits / n


def cer(ref_str: str, hyp_str: str) -> float:
    """Character edit distance over ``len(ref_str)``; case and punctuation count."""
    if not ref_str:
        raise EmptyReference("empty reference string")
    a, b = kernels.encode_pair(ref_str, hyp_str)
    return int(kernels.edit_distance(a, b)) / len(ref_str)


def jaro_winkler(s1: str, s2: str, p: float = 0.1, max_prefix: int = 4) -> float:
    if s1 == s2:
        return 1.0
    if not s1 or not s2:
        return 0.0
    a, b = kernels.encode_pair(s1, s2)
    m, half = kernels.jaro_counts(a, b)
    if m == 0:
        return 0.0
    t = half / 2.0
    jaro = (m / len(s1) + m / len(s2) + (m - t) / m) / 3.0
    ell = 0
    for x, y in zip(s1[:max_prefix], s2[:max_prefix]):
        if x != y:
            break
        ell += 1
    return jaro + ell * p * (1.0 - jaro)


# ---------------------------------------------------------------------------
# Count-based scores


@dataclass
class PRF:
    """Pooled TP/FP/FN counts.

    Zero-division conventions: a class absent from both sides scores 1 on
    every ratio; present on exactly one side scores 0.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def ref_count(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float:
        if self.tp + self.fp:
            return self.tp / (self.tp + self.fp)
        return 1.0 if self.fn == 0 else 0.0

    @property
    def recall(self) -> float:
        if self.tp + self.fn:
            return self.tp / (self.tp + self.fn)
        return 1.0 if self.fp == 0 else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.fn
        return self.tp / total if total else 1.0

    def as_dict(self) -> dict:
        return {"ref_count": self.ref_count, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "acc": self.accuracy, "f1": self.f1, "prec": self.precision,
                "recall": self.recall}


def _tally(counts: PRF, ref_n: int, hyp_n: int) -> None:
    hit = min(ref_n, hyp_n)
    counts.tp += hit
    counts.fn += ref_n - hit
    counts.fp += hyp_n - hit


def _excluded_positions(t: AnnotatedTranscript) -> set:
    return {k for s in t.entities if s.kind == "numerical" for k in range(s.start, s.end)}


def _trailing_marks(t: AnnotatedTranscript) -> list:
    """Per word: Counter of the marks directly after it, minus those inside numerical spans."""
    skip = _excluded_positions(t)
    out = []
    for k, tok in enumerate(t.tokens):
        if isinstance(tok, Word):
            out.append(Counter())
        elif out and k not in skip:
            out[-1][tok.mark] += 1
    return out


def _word_forms(t: AnnotatedTranscript) -> list:
    return [tok for tok in t.tokens if isinstance(tok, Word)]


@dataclass
class PunctCapScores:
    marks: dict                 # mark name -> PRF
    capitalization: PRF

    def __add__(self, other):
        return PunctCapScores({m: self.marks[m] + other.marks[m] for m in MARKS},
                              self.capitalization + other.capitalization)


def punct_cap_eval(ref: AnnotatedTranscript, hyp: AnnotatedTranscript,
                   alignment: WordAlignment | None = None) -> PunctCapScores:
    """Per-mark and capitalization counts over the word alignment.

    Aligned pairs (match or substitute) compare the marks following each word
    and whether each word is capitalised; marks and capitals on deleted words
    are misses, on inserted words false alarms.
    """
    if alignment is None:
        alignment = align_words(normalize(ref), normalize(hyp))
    rm, hm = _trailing_marks(ref), _trailing_marks(hyp)
    rw, hw = _word_forms(ref), _word_forms(hyp)
    marks = {m: PRF() for m in MARKS}
    caps = PRF()
    empty = Counter()
    for op, i, j in alignment.ops:
        r_marks = rm[i] if i is not None else empty
        h_marks = hm[j] if j is not None else empty
        for m in MARKS:
            _tally(marks[m], r_marks[m], h_marks[m])
        _tally(caps, int(i is not None and rw[i].capitalized), int(j is not None and hw[j].capitalized))
    return PunctCapScores(marks, caps)


def _word_spans(t: AnnotatedTranscript) -> list:
    """Entity spans re-expressed as ``(first_word, last_word, span)`` word indices."""
    word_at = {k: w for w, k in enumerate(t.word_indices())}
    return [(word_at[s.start], word_at[s.end - 1], s) for s in t.entities]


@dataclass
class NerScores:
    labels: dict                # label -> PRF, labels seen on either side
    micro: PRF

    def label(self, name: str) -> PRF:
        return self.labels.get(name, PRF())

    def __add__(self, other):
        keys = sorted(set(self.labels) | set(other.labels))
        return NerScores({k: self.label(k) + other.label(k) for k in keys}, self.micro + other.micro)


def _strict_match(r_span, h_span, r2h) -> bool:
    a, b, _ = r_span
    c, d, _ = h_span
    if b - a != d - c:
        return False
    return all(r2h.get(a + k) == c + k for k in range(b - a + 1))


def ner_eval(ref: AnnotatedTranscript, hyp: AnnotatedTranscript,
             alignment: WordAlignment | None = None) -> NerScores:
    """Strict entity matching: same label and the exact same words under the alignment."""
    if alignment is None:
        alignment = align_words(normalize(ref), normalize(hyp))
    r2h = alignment.ref_to_hyp()
    rs, hs = _word_spans(ref), _word_spans(hyp)
    used = [False] * len(hs)
    per = {}
    for r in rs:
        counts = per.setdefault(r[2].label, PRF())
        for k, h in enumerate(hs):
            if not used[k] and h[2].label == r[2].label and _strict_match(r, h, r2h):
                used[k] = True
                counts.tp += 1
                break
        else:
            counts.fn += 1
    for k, h in enumerate(hs):
        if not used[k]:
            per.setdefault(h[2].label, PRF()).fp += 1
    micro = sum(per.values(), PRF())
    return NerScores(dict(sorted(per.items())), micro)


@dataclass
class FormatScores:
    """Per label: summed score and pair count; ``value`` is their mean."""

    sums: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)

    def add(self, label, score):
        self.sums[label] = self.sums.get(label, 0.0) + score
        self.pairs[label] = self.pairs.get(label, 0) + 1

    def __add__(self, other):
        out = FormatScores(dict(self.sums), dict(self.pairs))
        for k in other.sums:
            out.sums[k] = out.sums.get(k, 0.0) + other.sums[k]
            out.pairs[k] = out.pairs.get(k, 0) + other.pairs[k]
        return out

    def value(self, label) -> float:
        return self.sums[label] / self.pairs[label]

    def metric(self, label) -> str:
        return "cer" if label_kind(label) == "numerical" else "jw"

    def table(self) -> dict:
        return {k: {"metric": self.metric(k), "value": self.value(k), "pairs": self.pairs[k]}
                for k in sorted(self.sums)}


def formatting_eval(ref: AnnotatedTranscript, hyp: AnnotatedTranscript,
                    alignment: WordAlignment | None = None) -> FormatScores:
    """CER (numerical) or Jaro-Winkler (textual) over overlapping same-label entity pairs."""
    if alignment is None:
        alignment = align_words(normalize(ref), normalize(hyp))
    r2h = alignment.ref_to_hyp()
    used = set()
    hs = _word_spans(hyp)
    out = FormatScores()
    for a, b, rspan in _word_spans(ref):
        mapped = {r2h[w] for w in range(a, b + 1) if w in r2h}
        for k, (c, d, hspan) in enumerate(hs):
            if k in used or hspan.label != rspan.label:
                continue
            if any(c <= w <= d for w in mapped):
                used.add(k)
                r_text = surface(ref.tokens[rspan.start:rspan.end])
                h_text = surface(hyp.tokens[hspan.start:hspan.end])
                if rspan.kind == "numerical":
                    out.add(rspan.label, cer(r_text, h_text))
                else:
                    out.add(rspan.label, jaro_winkler(r_text, h_text))
                break
    return out


# ---------------------------------------------------------------------------
# Corpus report

_MARK_ROWS = (("comma", "Comma"), ("period", "Period"), ("semicolon", "Semicolon"),
              ("exclamation", "Excl."), ("question", "Que."))


@dataclass
class EvalReport:
    wer: float
    word_edits: int
    ref_words: int
    punctuation: PunctCapScores
    ner: NerScores
    formatting: FormatScores
    n_docs: int = 0

    @property
    def capitalization(self) -> PRF:
        return self.punctuation.capitalization

    def to_json(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "wer": self.wer,
            "word_edits": self.word_edits,
            "ref_words": self.ref_words,
            "punctuation": {m: self.punctuation.marks[m].as_dict() for m in MARKS},
            "capitalization": self.capitalization.as_dict(),
            "ner": {"labels": {k: v.as_dict() for k, v in self.ner.labels.items()},
                    "micro": self.ner.micro.as_dict()},
            "formatting": self.formatting.table(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def render(self) -> str:
        lines = [f"WER: {self.wer:.2f}  ({self.word_edits} edits / {self.ref_words} words)", ""]
        lines.append(f"{'Mark':<10}{'Ref. Cnt':>9}{'Acc':>7}{'F1':>7}{'Prec':>7}{'Recall':>8}")
        rows = [("Capitals", self.capitalization)]
        rows += [(name, self.punctuation.marks[m]) for m, name in _MARK_ROWS]
        for name, s in rows:
            lines.append(f"{name:<10}{s.ref_count:>9}{s.accuracy:>7.2f}{s.f1:>7.2f}"
                         f"{s.precision:>7.2f}{s.recall:>8.2f}")
        lines += ["", f"{'Label':<12}{'Ref. Cnt':>9}{'F1':>7}{'Prec':>7}{'Recall':>8}"]
        for label, s in list(self.ner.labels.items()) + [("micro", self.ner.micro)]:
            lines.append(f"{label:<12}{s.ref_count:>9}{s.f1:>7.2f}{s.precision:>7.2f}{s.recall:>8.2f}")
        lines += ["", f"{'Label':<12}{'JW':>7}{'CER':>7}{'Pairs':>7}"]
        for label, row in self.formatting.table().items():
            jw = f"{row['value']:.2f}" if row["metric"] == "jw" else "-"
            cr = f"{row['value']:.2f}" if row["metric"] == "cer" else "-"
            lines.append(f"{label:<12}{jw:>7}{cr:>7}{row['pairs']:>7}")
        return "\n".join(lines) + "\n"


def _pair_docs(ref_corpus, hyp_corpus):
    ref_ids = [d.doc_id for d in ref_corpus]
    hyp_by_id = {d.doc_id: d for d in hyp_corpus}
    if len(ref_corpus) != len(hyp_corpus) or len(hyp_by_id) != len(hyp_corpus) \
            or len(set(ref_ids)) != len(ref_ids) or set(ref_ids) != set(hyp_by_id):
        missing = sorted(set(ref_ids) ^ set(hyp_by_id))
        raise DocIdMismatch(f"reference and hypothesis documents differ (ids: {missing or 'duplicated'})")
    return [(r, hyp_by_id[r.doc_id]) for r in ref_corpus]


def evaluate_pair(ref: AnnotatedTranscript, hyp: AnnotatedTranscript) -> EvalReport:
    rw, hw = normalize(ref), normalize(hyp)
    al = align_words(rw, hw)
    n = len(rw)
    return EvalReport(al.cost / n if n else float("nan"), al.cost, n, punct_cap_eval(ref, hyp, al),
                      ner_eval(ref, hyp, al), formatting_eval(ref, hyp, al), 1)


def full_report(ref_corpus, hyp_corpus) -> EvalReport:
    """Pooled corpus report; documents are paired by ``doc_id``."""
    pairs = _pair_docs(list(ref_corpus), list(hyp_corpus))
    parts = [evaluate_pair(r, h) for r, h in pairs]
    edits = sum(p.word_edits for p in parts)
    n = sum(p.ref_words for p in parts)
    if n == 0:
        raise EmptyReference("reference corpus has no words after normalisation")
    punct = PunctCapScores({m: PRF() for m in MARKS}, PRF())
    ner = NerScores({}, PRF())
    fmt = FormatScores()
    for p in parts:
        punct, ner, fmt = punct + p.punctuation, ner + p.ner, fmt + p.formatting
    return EvalReport(edits / n, edits, n, punct, ner, fmt, len(parts))
