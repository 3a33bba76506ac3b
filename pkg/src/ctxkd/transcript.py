"""Entity-annotated transcripts: value types, tagged-text codec, JSON corpus I/O.

A transcript is a flat stream of :class:`Word` and :class:`Punct` tokens with
non-overlapping :class:`EntitySpan` ranges over token indices.  The inline
format looks like ``<LOC>United States</LOC>.``: tokens are separated by one
space, punctuation attaches to the preceding token, tags are flat.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import InvariantViolation, NestedTag, SchemaError, UnbalancedTag, UnknownLabel

PUNCT_CHARS = {",": "comma", ".": "period", ";": "semicolon", "!": "exclamation", "?": "question"}
MARK_CHARS = {v: k for k, v in PUNCT_CHARS.items()}
MARKS = tuple(PUNCT_CHARS.values())

BASE_LABELS = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT", "WORK_OF_ART",
    "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY", "QUANTITY", "ORDINAL", "CARDINAL",
)
CUSTOM_LABELS = ("URL", "EMAIL", "PHONE", "NUMERIC")
LABELS = BASE_LABELS + CUSTOM_LABELS
NUMERICAL_LABELS = frozenset(
    {"CARDINAL", "NUMERIC", "TIME", "QUANTITY", "MONEY", "PERCENT", "URL", "PHONE", "ORDINAL"}
)
_LABEL_SET = frozenset(LABELS)


def label_kind(label: str) -> str:
    """``"numerical"`` or ``"textual"``; raises :class:`KeyError` for unknown labels."""
    if label not in _LABEL_SET:
        raise KeyError(label)
    return "numerical" if label in NUMERICAL_LABELS else "textual"


@dataclass(frozen=True)
class Word:
    text: str
    start: float = 0.0
    end: float = 0.0

    @property
    def capitalized(self) -> bool:
        return self.text[:1].isupper()


@dataclass(frozen=True)
class Punct:
    mark: str

    @property
    def char(self) -> str:
        return MARK_CHARS[self.mark]


Token = Union[Word, Punct]


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    label: str

    @property
    def kind(self) -> str:
        return label_kind(self.label)


@dataclass(frozen=True)
class AnnotatedTranscript:
    doc_id: str
    tokens: tuple = ()
    entities: tuple = ()
    timestamped: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entities", tuple(self.entities))

    @property
    def words(self) -> list:
        return [tok for tok in self.tokens if isinstance(tok, Word)]

    def word_indices(self) -> list:
        """Token indices of the Word tokens, in order."""
        return [i for i, tok in enumerate(self.tokens) if isinstance(tok, Word)]

    def replace(self, **changes) -> "AnnotatedTranscript":
        fields = dict(doc_id=self.doc_id, tokens=self.tokens, entities=self.entities,
                      timestamped=self.timestamped)
        fields.update(changes)
        return AnnotatedTranscript(**fields)


_WS = re.compile(r"\s")


def validate(t: AnnotatedTranscript, where: str = "") -> AnnotatedTranscript:
    """Check every transcript invariant; raise :class:`InvariantViolation` naming the field."""
    prefix = f"{where}." if where else ""
    last_start = None
    for i, tok in enumerate(t.tokens):
        loc = f"{prefix}tokens[{i}]"
        if isinstance(tok, Word):
            if not tok.text:
                raise InvariantViolation(f"{loc}: empty word text")
            if _WS.search(tok.text) or "<" in tok.text or ">" in tok.text:
                raise InvariantViolation(f"{loc}: word {tok.text!r} contains whitespace or tag delimiter")
            if tok.text[-1] in PUNCT_CHARS:
                raise InvariantViolation(f"{loc}: word {tok.text!r} ends with a punctuation mark")
            if not (tok.start >= 0):
                raise InvariantViolation(f"{loc}: start {tok.start} < 0")
            if not (tok.end >= tok.start):
                raise InvariantViolation(f"{loc}: end {tok.end} < start {tok.start}")
            if last_start is not None and tok.start < last_start:
                raise InvariantViolation(f"{loc}: timestamps decrease ({tok.start} < {last_start})")
            last_start = tok.start
        elif isinstance(tok, Punct):
            if tok.mark not in MARK_CHARS:
                raise InvariantViolation(f"{loc}: unknown punctuation mark {tok.mark!r}")
        else:
            raise InvariantViolation(f"{loc}: not a token: {tok!r}")
    n = len(t.tokens)
    prev_end = 0
    for k, span in enumerate(t.entities):
        loc = f"{prefix}entities[{k}]"
        if span.label not in _LABEL_SET:
            raise InvariantViolation(f"{loc}: unknown label {span.label!r}")
        if not (0 <= span.start < span.end <= n):
            raise InvariantViolation(f"{loc}: span [{span.start},{span.end}) out of bounds for {n} tokens")
        if span.start < prev_end:
            raise InvariantViolation(f"{loc}: span [{span.start},{span.end}) overlaps or is out of order")
        if not isinstance(t.tokens[span.start], Word) or not isinstance(t.tokens[span.end - 1], Word):
            raise InvariantViolation(f"{loc}: span must begin and end on word tokens")
        prev_end = span.end
    return t


# ---------------------------------------------------------------------------
# Tagged text

_TAG_OR_WS = re.compile(r"<(/?)([^<>\s]*)>|\s+|[<>]")


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


def _split_chunk(chunk: str) -> list:
    """Split a whitespace-free run into a word plus trailing punctuation tokens."""
    k = len(chunk)
    while k > 0 and chunk[k - 1] in PUNCT_CHARS:
        k -= 1
    out = [Word(chunk[:k])] if k else []
    out.extend(Punct(PUNCT_CHARS[c]) for c in chunk[k:])
    return out


def parse_tagged_text(text: str, doc_id: str = "") -> AnnotatedTranscript:
    """Parse inline-tagged text.  Timestamps are zeroed and ``timestamped`` is ``False``.

    Trailing ``,.;!?`` characters are split off words as punctuation tokens;
    other characters (``$5.2``, ``555-1142``) stay inside the word.  Trailing
    punctuation inside a tag is left outside the resulting span.
    """
    tokens: list = []
    entities: list = []
    open_label = None
    open_index = 0
    open_pos = 0
    pos = 0

    def flush(upto):
        if upto > pos:
            tokens.extend(_split_chunk(text[pos:upto]))

    for m in _TAG_OR_WS.finditer(text):
        flush(m.start())
        pos = m.end()
        raw = m.group(0)
        if raw.isspace():
            continue
        if m.group(2) is None:
            raise UnbalancedTag(f"stray {raw!r}", _byte_offset(text, m.start()))
        closing, label = m.group(1) == "/", m.group(2)
        if label not in _LABEL_SET:
            raise UnknownLabel(f"unknown label {label!r}", _byte_offset(text, m.start()))
        if not closing:
            if open_label is not None:
                raise NestedTag(f"<{label}> opened inside <{open_label}>", _byte_offset(text, m.start()))
            open_label, open_index, open_pos = label, len(tokens), m.start()
            continue
        if open_label != label:
            what = f"</{label}> without matching open tag" if open_label is None else \
                f"</{label}> closes <{open_label}>"
            raise UnbalancedTag(what, _byte_offset(text, m.start()))
        end = len(tokens)
        while end > open_index and isinstance(tokens[end - 1], Punct):
            end -= 1
        if end == open_index or not isinstance(tokens[open_index], Word):
            raise UnbalancedTag(f"<{label}> encloses no leading word", _byte_offset(text, open_pos))
        entities.append(EntitySpan(open_index, end, label))
        open_label = None
    flush(len(text))
    if open_label is not None:
        raise UnbalancedTag(f"<{open_label}> never closed", _byte_offset(text, open_pos))
    return AnnotatedTranscript(doc_id, tokens, entities, timestamped=False)


def serialize_tagged_text(t: AnnotatedTranscript) -> str:
    opens = {s.start: s.label for s in t.entities}
    closes = {s.end - 1: s.label for s in t.entities}
    parts = []
    for i, tok in enumerate(t.tokens):
        if isinstance(tok, Punct):
            parts.append(tok.char)
            continue
        if parts:
            parts.append(" ")
        if i in opens:
            parts.append(f"<{opens[i]}>")
        parts.append(tok.text)
        if i in closes:
            parts.append(f"</{closes[i]}>")
    return "".join(parts)


def surface(tokens: Sequence) -> str:
    """Untagged formatted text of a token run (``"$5.2 million"``)."""
    return serialize_tagged_text(AnnotatedTranscript("", tokens, ()))


# ---------------------------------------------------------------------------
# JSON corpus


def _token_to_json(tok):
    if isinstance(tok, Word):
        return {"kind": "word", "text": tok.text, "start": tok.start, "end": tok.end}
    return {"kind": "punct", "mark": tok.mark}


def transcript_to_json(t: AnnotatedTranscript) -> dict:
    doc = {
        "doc_id": t.doc_id,
        "tokens": [_token_to_json(tok) for tok in t.tokens],
        "entities": [{"start": s.start, "end": s.end, "label": s.label} for s in t.entities],
    }
    if not t.timestamped:
        doc["timestamped"] = False
    return doc


def _expect(cond, where, msg):
    if not cond:
        raise SchemaError(f"{where}: {msg}")


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def transcript_from_json(doc, where: str = "doc") -> AnnotatedTranscript:
    _expect(isinstance(doc, dict), where, "expected an object")
    _expect(isinstance(doc.get("doc_id"), str), f"{where}.doc_id", "expected a string")
    _expect(isinstance(doc.get("tokens"), list), f"{where}.tokens", "expected a list")
    _expect(isinstance(doc.get("entities", []), list), f"{where}.entities", "expected a list")
    tokens = []
    for i, tok in enumerate(doc["tokens"]):
        loc = f"{where}.tokens[{i}]"
        _expect(isinstance(tok, dict), loc, "expected an object")
        kind = tok.get("kind")
        if kind == "word":
            _expect(isinstance(tok.get("text"), str), f"{loc}.text", "expected a string")
            _expect(_is_num(tok.get("start")), f"{loc}.start", "expected a number")
            _expect(_is_num(tok.get("end")), f"{loc}.end", "expected a number")
            tokens.append(Word(tok["text"], tok["start"], tok["end"]))
        elif kind == "punct":
            _expect(tok.get("mark") in MARK_CHARS, f"{loc}.mark", f"expected one of {sorted(MARK_CHARS)}")
            tokens.append(Punct(tok["mark"]))
        else:
            raise SchemaError(f"{loc}.kind: expected 'word' or 'punct', got {kind!r}")
    entities = []
    for k, ent in enumerate(doc.get("entities", [])):
        loc = f"{where}.entities[{k}]"
        _expect(isinstance(ent, dict), loc, "expected an object")
        for key in ("start", "end"):
            v = ent.get(key)
            _expect(isinstance(v, int) and not isinstance(v, bool), f"{loc}.{key}", "expected an integer")
        _expect(isinstance(ent.get("label"), str), f"{loc}.label", "expected a string")
        entities.append(EntitySpan(ent["start"], ent["end"], ent["label"]))
    timestamped = doc.get("timestamped", True)
    _expect(isinstance(timestamped, bool), f"{where}.timestamped", "expected a boolean")
    return validate(AnnotatedTranscript(doc["doc_id"], tokens, entities, timestamped), where)


def corpus_to_json(docs: Iterable[AnnotatedTranscript]) -> dict:
    return {"docs": [transcript_to_json(t) for t in docs]}


def corpus_from_json(obj) -> list:
    _expect(isinstance(obj, dict) and isinstance(obj.get("docs"), list), "docs", "expected {\"docs\": [...]}")
    return [transcript_from_json(d, f"docs[{i}]") for i, d in enumerate(obj["docs"])]


def load_corpus(path) -> list:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return corpus_from_json(obj)


def dumps_corpus(docs: Iterable[AnnotatedTranscript]) -> str:
    return json.dumps(corpus_to_json(docs), ensure_ascii=False, indent=1) + "\n"


def save_corpus(docs: Iterable[AnnotatedTranscript], path) -> None:
    docs = list(docs)
    for i, t in enumerate(docs):
        validate(t, f"docs[{i}]")
    Path(path).write_text(dumps_corpus(docs), encoding="utf-8")
