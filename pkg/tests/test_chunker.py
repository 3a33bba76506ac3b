import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ctxkd.chunker import (
    Chunk, chunk_by_time, chunk_to_json, context_counts, context_window, stride_windows, window_tokens,
)
from ctxkd.errors import EntityLongerThanWindow, MissingTimestamps
from ctxkd.transcript import AnnotatedTranscript, EntitySpan, Punct, Word, parse_tagged_text

from strategies import transcripts


def timed(times, entities=()):
    return AnnotatedTranscript("d", [Word(f"w{i}", t, t + 0.1) for i, t in enumerate(times)], entities)


def ranges(chunks):
    return [c.token_range for c in chunks]


def test_short_transcript_single_chunk():
    assert ranges(chunk_by_time(timed([0, 5, 10, 19.9]))) == [(0, 4)]


def test_greedy_rule_example():
    chunks = chunk_by_time(timed([0, 10, 20, 29, 31]), 30)
    assert ranges(chunks) == [(0, 4), (4, 5)]
    assert chunks[1].window_start == 31
    assert chunks[0].window_len == 30.0


def test_boundary_is_half_open():
    assert ranges(chunk_by_time(timed([0, 29.999, 30]), 30)) == [(0, 2), (2, 3)]


def test_punctuation_travels_with_preceding_word():
    t = AnnotatedTranscript("d", [Word("a", 0, 1), Punct("period"), Word("b", 31, 32)])
    assert ranges(chunk_by_time(t)) == [(0, 2), (2, 3)]


def test_keep_entities_moves_span_forward():
    t = timed([0, 10, 28, 31, 40], [EntitySpan(2, 4, "PERSON")])
    assert ranges(chunk_by_time(t)) == [(0, 3), (3, 5)]
    assert ranges(chunk_by_time(t, keep_entities=True)) == [(0, 2), (2, 5)]


def test_entity_longer_than_window():
    t = timed([0, 10, 40, 50], [EntitySpan(0, 3, "EVENT")])
    with pytest.raises(EntityLongerThanWindow):
        chunk_by_time(t, 30, keep_entities=True)
    assert len(chunk_by_time(t, 30)) == 2


def test_missing_timestamps():
    with pytest.raises(MissingTimestamps):
        chunk_by_time(parse_tagged_text("no clock here"))
    assert chunk_by_time(parse_tagged_text("")) == []


@settings(max_examples=300, deadline=None)
@given(transcripts(max_tokens=30), st.sampled_from([0.5, 1.0, 3.0, 30.0]), st.booleans())
def test_chunks_partition_words(t, window, keep):
    assume(t.tokens)
    try:
        chunks = chunk_by_time(t, window, keep_entities=keep)
    except EntityLongerThanWindow:
        assert keep
        return
    assert chunks[0].start == 0 and chunks[-1].end == len(t.tokens)
    assert all(a.end == b.start for a, b in zip(chunks, chunks[1:]))
    for c in chunks:
        assert len(c) > 0
        for i in range(c.start, c.end):
            tok = t.tokens[i]
            if isinstance(tok, Word):
                assert c.window_start <= tok.start < c.window_start + window
    if keep:
        cuts = {c.start for c in chunks[1:]}
        assert not any(s.start < b < s.end for s in t.entities for b in cuts)


@pytest.mark.parametrize("n, width, stride, expected", [
    (7, 4, 2, [(0, 4), (2, 6), (4, 7), (6, 7)]),
    (10, 10, 10, [(0, 10)]),
])
def test_stride_examples(n, width, stride, expected):
    assert stride_windows(n, width, stride) == expected
    assert stride_windows(list(range(n)), width, stride) == expected


def test_stride_512_20():
    # literal coverage rule gives every start below 552; the cut-off variant gives 0, 20, 40
    assert [s for s, _ in stride_windows(552, 512, 20)] == list(range(0, 552, 20))
    assert [s for s, _ in stride_windows(552, 512, 20, stop_at_end=True)] == [0, 20, 40]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 60), st.integers(1, 20), st.data())
def test_stride_covers_every_token(n, width, data):
    stride = data.draw(st.integers(1, width))
    for stop in (False, True):
        rs = stride_windows(n, width, stride, stop_at_end=stop)
        covered = set()
        for a, b in rs:
            assert 0 <= a < b <= n and b - a <= width
            covered.update(range(a, b))
        assert covered == set(range(n))


def test_stride_rejects_bad_args():
    for width, stride in [(0, 1), (4, 0), (4, 5)]:
        with pytest.raises(ValueError):
            stride_windows(10, width, stride)


def doc_of(n):
    return AnnotatedTranscript("d", [Word(f"w{i}", i, i) for i in range(n)])


def test_context_examples():
    doc = doc_of(1000)
    mid = Chunk("d", 400, 420, 400.0)
    w = context_window(doc, mid, 256)
    assert (w.before, w.after) == ((272, 400), (420, 548))
    w = context_window(doc, mid, 0)
    assert w.indices() == list(range(400, 420))
    w = context_window(doc, Chunk("d", 0, 10, 0.0), 64)
    assert (w.before, w.after) == ((0, 0), (10, 42))
    w = context_window(doc, mid, 10, "left_only")
    assert (w.before, w.after) == ((390, 400), (420, 420))
    w = context_window(doc, mid, 10, "right_only")
    assert (w.before, w.after) == ((400, 400), (420, 430))


def test_context_counts_clamp_without_compensation():
    assert context_counts(7, "center", 100, 100) == (3, 4)
    assert context_counts(64, "center", 5, 100) == (5, 32)
    with pytest.raises(ValueError):
        context_counts(4, "middle", 1, 1)
    with pytest.raises(ValueError):
        context_counts(-1, "center", 1, 1)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 40), st.data(), st.integers(0, 50),
       st.sampled_from(["center", "left_only", "right_only"]))
def test_context_window_invariants(n, data, size, placement):
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(a + 1, n))
    doc = doc_of(n)
    w = context_window(doc, Chunk("d", a, b, 0.0), size, placement)
    idx = w.indices()
    assert len(w) == len(idx) <= size + (b - a)
    assert idx == sorted(set(idx)) and idx == list(range(idx[0], idx[-1] + 1))
    nb, na = a - w.before[0], w.after[1] - b
    want_b = {"center": size // 2, "left_only": size, "right_only": 0}[placement]
    want_a = size - want_b if placement == "center" else {"left_only": 0, "right_only": size}[placement]
    assert nb == min(want_b, a) and na == min(want_a, n - b)
    assert window_tokens(doc, w) == [doc.tokens[i] for i in idx]


def test_chunk_json():
    c = Chunk("d", 2, 5, 31.0)
    w = context_window(doc_of(10), c, 4)
    assert chunk_to_json(c) == {"doc_id": "d", "token_range": [2, 5], "window_start": 31.0, "window_len": 30.0}
    assert chunk_to_json(c, w)["context"] == {"size": 4, "placement": "center", "before": [0, 2], "after": [5, 7]}
