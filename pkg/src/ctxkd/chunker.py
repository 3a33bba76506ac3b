"""Time-based chunking, stride windows, and context-window extraction."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EntityLongerThanWindow, MissingTimestamps
from .transcript import AnnotatedTranscript

PLACEMENTS = ("center", "left_only", "right_only")
DEFAULT_WINDOW = 30.0


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    start: int
    end: int
    window_start: float
    window_len: float = DEFAULT_WINDOW

    @property
    def token_range(self):
        return (self.start, self.end)

    def __len__(self):
        return self.end - self.start


def chunk_by_time(t: AnnotatedTranscript, window_len: float = DEFAULT_WINDOW,
                  keep_entities: bool = False) -> list:
    """Greedy left-to-right packing of tokens into ``window_len``-second chunks.

    A word opens a new chunk when it starts at or after the current window's
    end; punctuation stays with the preceding word.  With ``keep_entities``, a
    boundary that would split an entity is moved back to the entity's first
    word.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if not t.tokens:
        return []
    if not t.timestamped:
        raise MissingTimestamps(f"{t.doc_id}: transcript has no timestamps")
    words = t.word_indices()
    if not words:
        return [Chunk(t.doc_id, 0, len(t.tokens), 0.0, window_len)]
    inside = {}
    if keep_entities:
        for s in t.entities:
            for i in range(s.start + 1, s.end):
                inside[i] = s

    chunks = []
    start = 0
    wstart = t.tokens[words[0]].start
    k = 1
    while k < len(words):
        i = words[k]
        if t.tokens[i].start < wstart + window_len:
            k += 1
            continue
        cut = i
        if i in inside:
            span = inside[i]
            cut = span.start
            if cut <= start:
                raise EntityLongerThanWindow(
                    f"{t.doc_id}: {span.label} span [{span.start},{span.end}) exceeds {window_len}s window")
            k = words.index(cut)
        chunks.append(Chunk(t.doc_id, start, cut, wstart, window_len))
        start = cut
        wstart = t.tokens[cut].start
        k += 1
    chunks.append(Chunk(t.doc_id, start, len(t.tokens), wstart, window_len))
    if keep_entities:
        _check_spans_fit(t, chunks)
    return chunks


def _check_spans_fit(t, chunks):
    bounds = {c.start for c in chunks[1:]}
    for s in t.entities:
        if any(s.start < b < s.end for b in bounds):
            raise EntityLongerThanWindow(
                f"{t.doc_id}: {s.label} span [{s.start},{s.end}) cannot fit in one window")


def stride_windows(tokens, width: int, stride: int, stop_at_end: bool = False) -> list:
    """Ranges ``[k*stride, k*stride + width)`` clipped to the sequence.

    ``tokens`` is a sequence or its length.  By default ranges continue while
    their start lies inside the sequence; ``stop_at_end`` stops after the first
    range that reaches the end.
    """
    n = tokens if isinstance(tokens, int) else len(tokens)
    if width < 1 or not 1 <= stride <= width:
        raise ValueError("need width >= 1 and 1 <= stride <= width")
    out = []
    for s in range(0, n, stride):
        out.append((s, min(s + width, n)))
        if stop_at_end and s + width >= n:
            break
    return out


@dataclass(frozen=True)
class ContextWindow:
    chunk: Chunk
    size: int
    placement: str
    before: tuple
    after: tuple

    def indices(self) -> list:
        """Token indices in order (before-context, chunk, after-context)."""
        return (list(range(*self.before)) + list(range(self.chunk.start, self.chunk.end))
                + list(range(*self.after)))

    def __len__(self):
        return (self.before[1] - self.before[0]) + len(self.chunk) + (self.after[1] - self.after[0])


def context_counts(size: int, placement: str, available_before: int, available_after: int):
    """Clamped (before, after) token counts for a context of ``size`` tokens."""
    if size < 0:
        raise ValueError("context size must be >= 0")
    if placement == "center":
        want_before, want_after = size // 2, size - size // 2
    elif placement == "left_only":
        want_before, want_after = size, 0
    elif placement == "right_only":
        want_before, want_after = 0, size
    else:
        raise ValueError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
    return min(want_before, available_before), min(want_after, available_after)


def context_window(doc: AnnotatedTranscript, chunk: Chunk, size: int,
                   placement: str = "center") -> ContextWindow:
    n = len(doc.tokens)
    if chunk.doc_id != doc.doc_id or not 0 <= chunk.start <= chunk.end <= n:
        raise ValueError("chunk does not belong to this document")
    nb, na = context_counts(size, placement, chunk.start, n - chunk.end)
    return ContextWindow(chunk, size, placement, (chunk.start - nb, chunk.start),
                         (chunk.end, chunk.end + na))


def window_tokens(doc: AnnotatedTranscript, window: ContextWindow) -> list:
    return [doc.tokens[i] for i in window.indices()]


def chunk_to_json(chunk: Chunk, window: ContextWindow = None) -> dict:
    out = {"doc_id": chunk.doc_id, "token_range": [chunk.start, chunk.end],
           "window_start": chunk.window_start, "window_len": chunk.window_len}
    if window is not None:
        out["context"] = {"size": window.size, "placement": window.placement,
                          "before": list(window.before), "after": list(window.after)}
    return out

