"""Desk-scale distillation harness.

A synthetic formatted-transcription task: each document has a hidden domain
that decides which entity label (and therefore which tag tokens and number
formats) its spoken numbers receive.  The student sees per-timestep noisy
feature vectors of the spoken units, with only a faint trace of the domain.
The teacher reads the formatted text character by character, optionally with
surrounding document text, where domain cue words are plentiful.

Teacher: token embedding plus prefix-mean embedding, linear next-token
scorer.  Student: linear per-timestep encoder and linear output head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .chunker import context_counts
from .errors import Diverged
from .losses import DistillParams, Example, LossWeights, log_softmax, objective
from .ot import SinkhornConfig

TOY_LABELS = ("CARDINAL", "PHONE", "MONEY", "DATE")
PAD = 0


@dataclass(frozen=True)
class ToyTaskSpec:
    V_w: int = 40
    V_l: int = 64
    d_w: int = 16
    d_l: int = 24
    d: int = 12
    T_w: int = 12
    T_t: int = 18
    context_tokens: int = 0
    seed: int = 0
    d_feat: int = 20
    n_numbers: int = 3
    chunks_per_doc: int = 6
    domain_signal: float = 0.35
    feature_noise: float = 0.6
    label_noise: float = 0.1
    cue_rate: float = 0.35

    def __post_init__(self):
        dims = (self.V_w, self.V_l, self.d_w, self.d_l, self.d, self.T_w, self.T_t, self.d_feat)
        if min(dims) < 1:
            raise ValueError("all sizes must be >= 1")
        if self.V_w == self.V_l or self.T_w == self.T_t or self.d_w == self.d_l:
            raise ValueError("student and teacher must differ in vocabulary, length and width")
        if self.context_tokens < 0:
            raise ValueError("context_tokens must be >= 0")
        if self.T_w < 4:
            raise ValueError("T_w must leave room for a tagged entity")
        n_fixed = 1 + 2 * len(TOY_LABELS) * 2 + self.n_numbers * len(TOY_LABELS)
        if self.V_w - n_fixed < 2:
            raise ValueError(f"V_w={self.V_w} too small; need at least {n_fixed + 2}")


@dataclass
class ToyExample:
    features: np.ndarray
    student_targets: np.ndarray
    teacher_tokens: np.ndarray
    doc: int = 0
    chunk_len: int = 0
    chunk_start: int = 0     # offset of the chunk rendering inside teacher_tokens


@dataclass
class ToyVocab:
    """Student-side token inventory and the fixed spoken-to-formatted map."""

    names: list
    tag_ids: dict            # label -> (open_id, close_id)
    cue_ids: dict            # label -> [word ids]
    number_ids: np.ndarray   # [number, label] -> formatted id
    plain_ids: list
    spelling: dict           # student id -> tuple of teacher ids

    @property
    def tag_set(self):
        return {i for pair in self.tag_ids.values() for i in pair}


@dataclass
class ToyDataset:
    spec: ToyTaskSpec
    vocab: ToyVocab
    train: list
    test: list
    n_spoken: int


def _build_vocab(spec: ToyTaskSpec, rng) -> ToyVocab:
    names = ["<pad>"]
    tag_ids, cue_ids = {}, {}
    for label in TOY_LABELS:
        tag_ids[label] = (len(names), len(names) + 1)
        names += [f"<{label}>", f"</{label}>"]
    for label in TOY_LABELS:
        cue_ids[label] = [len(names), len(names) + 1]
        names += [f"cue_{label.lower()}_{k}" for k in range(2)]
    number_ids = np.zeros((spec.n_numbers, len(TOY_LABELS)), dtype=np.int64)
    for k in range(spec.n_numbers):
        for j, label in enumerate(TOY_LABELS):
            number_ids[k, j] = len(names)
            names.append(f"num{k}_{label.lower()}")
    plain_ids = list(range(len(names), spec.V_w))
    names += [f"w{k}" for k in range(len(plain_ids))]

    # teacher characters: 0 is padding, tags get one dedicated character each
    chars = list(rng.permutation(np.arange(1, spec.V_l)))
    spelling = {PAD: (PAD,)}
    for open_id, close_id in tag_ids.values():
        spelling[open_id] = (int(chars.pop()),)
        spelling[close_id] = (int(chars.pop()),)
    pool = np.array(chars)
    for i in range(1, spec.V_w):
        if i in spelling:
            continue
        length = 2 if (i in number_ids or rng.random() < 0.5) else 1
        spelling[i] = tuple(int(c) for c in rng.choice(pool, size=length, replace=False))
    return ToyVocab(names, tag_ids, cue_ids, number_ids, plain_ids, spelling)


def _spoken_units(spec, vocab: ToyVocab):
    """Spoken-form inventory: each plain/cue word, each number, open and close boundary."""
    spoken_of = {}
    n = 0
    for i in vocab.plain_ids + [c for ids in vocab.cue_ids.values() for c in ids]:
        spoken_of[i] = n
        n += 1
    for k in range(spec.n_numbers):
        for i in vocab.number_ids[k]:
            spoken_of[int(i)] = n
        n += 1
    for open_id, close_id in vocab.tag_ids.values():
        spoken_of[open_id] = n
        spoken_of[close_id] = n + 1
    return spoken_of, n + 2


def _make_chunk(spec, vocab, domain, rng):
    T = spec.T_w
    label_idx = domain
    if rng.random() < spec.label_noise:
        label_idx = int(rng.integers(len(TOY_LABELS)))
    label = TOY_LABELS[label_idx]
    n_num = int(rng.integers(1, 3))
    ent_len = n_num + 2
    pos = int(rng.integers(0, T - ent_len + 1))
    cues = vocab.cue_ids[TOY_LABELS[domain]]
    out = []
    for _ in range(T - ent_len):
        if rng.random() < spec.cue_rate:
            out.append(int(cues[rng.integers(len(cues))]))
        else:
            out.append(int(vocab.plain_ids[rng.integers(len(vocab.plain_ids))]))
    open_id, close_id = vocab.tag_ids[label]
    body = [int(vocab.number_ids[rng.integers(spec.n_numbers), label_idx]) for _ in range(n_num)]
    return out[:pos] + [open_id] + body + [close_id] + out[pos:]


def _render(vocab, tokens):
    chars = []
    for t in tokens:
        chars.extend(vocab.spelling[int(t)])
    return chars


def generate_dataset(spec: ToyTaskSpec, n: int = 300) -> ToyDataset:
    """Deterministic train/test split (90/10) of ``n`` chunks grouped into documents.

    Student data does not depend on ``context_tokens``; only the teacher token
    streams grow, by the clamped centre-placement counts of the context window.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(spec.seed)
    vocab = _build_vocab(spec, rng)
    spoken_of, n_spoken = _spoken_units(spec, vocab)
    emb = rng.normal(0.0, spec.d_feat ** -0.5, (n_spoken, spec.d_feat))
    dom_emb = rng.normal(0.0, spec.d_feat ** -0.5, (len(TOY_LABELS), spec.d_feat))

    n_docs = math.ceil(n / spec.chunks_per_doc)
    examples = []
    for doc in range(n_docs):
        domain = int(rng.integers(len(TOY_LABELS)))
        count = min(spec.chunks_per_doc, n - len(examples))
        chunks = [_make_chunk(spec, vocab, domain, rng) for _ in range(count)]
        renders = [_render(vocab, c) for c in chunks]
        for k, (targets, chars) in enumerate(zip(chunks, renders)):
            spoken = np.array([spoken_of[t] for t in targets])
            noise = rng.normal(0.0, spec.feature_noise * spec.d_feat ** -0.5, (spec.T_w, spec.d_feat))
            X = emb[spoken] + spec.domain_signal * dom_emb[domain] + noise
            body = (chars + [PAD] * spec.T_t)[:spec.T_t]
            before = [c for r in renders[:k] for c in r]
            after = [c for r in renders[k + 1:] for c in r]
            nb, na = context_counts(spec.context_tokens, "center", len(before), len(after))
            teacher = before[len(before) - nb:] + body + after[:na]
            examples.append(ToyExample(X, np.array(targets, dtype=np.int64),
                                       np.array(teacher, dtype=np.int64), doc, len(body), nb))
    order = rng.permutation(len(examples))
    n_test = max(1, len(examples) // 10)
    test = [examples[i] for i in sorted(order[:n_test])]
    train = [examples[i] for i in sorted(order[n_test:])]
    return ToyDataset(spec, vocab, train, test, n_spoken)


# ---------------------------------------------------------------------------
# Teacher


@dataclass
class TeacherParams:
    E: np.ndarray
    U: np.ndarray

    def copy(self):
        return TeacherParams(self.E.copy(), self.U.copy())


def teacher_hidden(teacher: TeacherParams, tokens):
    emb = teacher.E[tokens]
    prefix = np.cumsum(emb, axis=0) / np.arange(1, len(tokens) + 1)[:, None]
    return emb + prefix


def teacher_forward(teacher: TeacherParams, tokens):
    """Hidden states ``H_l`` and logits ``L = H_l @ U_l`` over the token stream."""
    H = teacher_hidden(teacher, tokens)
    return H, H @ teacher.U


def _teacher_loss_grad(teacher, tokens):
    x = np.asarray(tokens)
    H, L = teacher_forward(teacher, x)
    Hp, Lp, y = H[:-1], L[:-1], x[1:]
    logp = log_softmax(Lp)
    n = len(y)
    loss = -logp[np.arange(n), y].sum()
    dL = np.exp(logp)
    dL[np.arange(n), y] -= 1.0
    dU = Hp.T @ dL
    dH = np.zeros_like(H)
    dH[:-1] = dL @ teacher.U.T
    dE = np.zeros_like(teacher.E)
    np.add.at(dE, x, dH)
    scaled = dH / np.arange(1, len(x) + 1)[:, None]
    np.add.at(dE, x, np.cumsum(scaled[::-1], axis=0)[::-1])
    correct = int(np.sum(np.argmax(Lp, axis=1) == y))
    return loss, n, correct, dE, dU


@dataclass
class TeacherResult:
    params: TeacherParams
    initial_ce: float
    final_ce: float
    train_accuracy: float
    epochs: int
    underfit: bool


def teacher_metrics(teacher, streams):
    loss = n = correct = 0
    for s in streams:
        l, k, c, _, _ = _teacher_loss_grad(teacher, s)
        loss, n, correct = loss + l, n + k, correct + c
    return loss / n, correct / n


def pretrain_teacher(spec: ToyTaskSpec, corpus, max_epochs: int = 200, lr: float = 0.05,
                     batch_size: int = 16, target_ce: float | None = None) -> TeacherResult:
    """Next-token CE training with Adam until CE < ``target_ce`` or ``max_epochs``.

    ``target_ce`` defaults to ln(V_l)/2.
    """
    streams = [ex.teacher_tokens for ex in corpus]
    if not streams:
        raise ValueError("teacher corpus is empty")
    rng = np.random.default_rng(spec.seed + 7919)
    t = TeacherParams(rng.normal(0.0, 0.3, (spec.V_l, spec.d_l)),
                      rng.normal(0.0, spec.d_l ** -0.5, (spec.d_l, spec.V_l)))
    initial, _ = teacher_metrics(t, streams)
    target = math.log(spec.V_l) / 2.0 if target_ce is None else float(target_ce)
    m = [np.zeros_like(t.E), np.zeros_like(t.U)]
    v = [np.zeros_like(t.E), np.zeros_like(t.U)]
    step = 0
    ce = initial
    epoch = 0
    while epoch < max_epochs and ce >= target:
        epoch += 1
        for start in range(0, len(streams), batch_size):
            gE, gU, n = np.zeros_like(t.E), np.zeros_like(t.U), 0
            for s in (streams[i] for i in rng.permutation(len(streams))[start:start + batch_size]):
                _, k, _, dE, dU = _teacher_loss_grad(t, s)
                gE += dE
                gU += dU
                n += k
            step += 1
            for j, (p, gr) in enumerate(((t.E, gE / n), (t.U, gU / n))):
                m[j] = 0.9 * m[j] + 0.1 * gr
                v[j] = 0.999 * v[j] + 0.001 * gr * gr
                p -= lr * (m[j] / (1 - 0.9 ** step)) / (np.sqrt(v[j] / (1 - 0.999 ** step)) + 1e-8)
        ce, _ = teacher_metrics(t, streams)
    ce, acc = teacher_metrics(t, streams)
    t.E.setflags(write=False)
    t.U.setflags(write=False)
    return TeacherResult(t, float(initial), float(ce), float(acc), epoch, bool(ce >= target))


# ---------------------------------------------------------------------------
# Student


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    freeze_teacher: bool = True
    seed: int = 0
    epsilon: float = 0.1
    sinkhorn_iters: int = 200
    optimizer: str = "adamw"  # adamw | sgd
    kl_per_token: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.freeze_teacher:
            raise ValueError("the teacher is always frozen")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Optimizer:
    """Decoupled weight decay around plain GD or Adam moments."""

    def __init__(self, cfg: TrainConfig, params):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        for (name, p), (_, g) in zip(params.items(), grads.items()):
            p *= 1.0 - cfg.learning_rate * cfg.weight_decay
            if cfg.optimizer == "sgd":
                p -= cfg.learning_rate * g
                continue
            m, v = self.m[name], self.v[name]
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            mhat = m / (1.0 - 0.9 ** self.t)
            vhat = v / (1.0 - 0.999 ** self.t)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + 1e-8)


def to_examples(teacher: TeacherParams, corpus):
    """Frozen teacher outputs per example.

    The teacher reads the whole window.  Its hidden states (and so the
    sentence embedding behind L_rep) span the context; the logits handed to
    the alignment are the chunk positions only, conditioned on the context
    before them.
    """
    out = []
    for ex in corpus:
        H_l, L = teacher_forward(teacher, ex.teacher_tokens)
        L = L[ex.chunk_start:ex.chunk_start + ex.chunk_len]
        out.append(Example(ex.features, ex.student_targets, H_l, L))
    return out


def tag_f1(pred, gold, tag_set) -> float:
    """Micro F1 over tag-token positions; 1.0 when neither side has a tag."""
    pred, gold = np.concatenate(pred), np.concatenate(gold)
    is_tag = np.isin(gold, list(tag_set))
    pred_tag = np.isin(pred, list(tag_set))
    tp = int(np.sum(is_tag & (pred == gold)))
    fp = int(np.sum(pred_tag & (pred != gold)))
    fn = int(np.sum(is_tag & (pred != gold)))
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def evaluate_student(params: DistillParams, data: ToyDataset):
    """Held-out CE, teacher agreement, and tag-token F1."""
    loss = n = agree = 0
    preds, golds = [], []
    for ex in data.test:
        W = ex.features @ params.E @ params.U_w
        logp = log_softmax(W)
        y = ex.student_targets
        loss -= logp[np.arange(len(y)), y].sum()
        n += len(y)
        pred = np.argmax(W, axis=1)
        agree += int(np.sum(pred == y))
        preds.append(pred)
        golds.append(y)
    return {"heldout_ce": loss / n, "teacher_agreement": agree / n,
            "tag_f1": tag_f1(preds, golds, data.vocab.tag_set)}


@dataclass
class TrainResult:
    log: list
    params: DistillParams
    teacher: TeacherResult


def _epoch_record(epoch, parts_list, metrics):
    keys = ("kl", "rep", "ot", "ce", "total")
    rec = {"epoch": epoch}
    for k in keys:
        rec[k] = float(np.mean([getattr(b, k) for b in parts_list]))
    rec.update({k: float(v) for k, v in metrics.items()})
    return rec


def train_student(spec: ToyTaskSpec, cfg: TrainConfig, data: ToyDataset,
                  teacher: TeacherResult) -> TrainResult:
    """Train on the weighted objective with AdamW (default) or plain GD.

    The log starts with an ``epoch 0`` record measured at initialisation,
    followed by one record per epoch with the mean batch breakdown.
    """
    rng = np.random.default_rng(cfg.seed + 104729)
    params = DistillParams.init(spec.d_feat, spec.d_w, spec.V_w, spec.V_l, spec.d, spec.d_l, rng)
    train = to_examples(teacher.params, data.train)
    sink = SinkhornConfig(epsilon=cfg.epsilon, max_iters=cfg.sinkhorn_iters)
    w = cfg.weights

    init_parts = [objective(params, train[i:i + cfg.batch_size], w, sink_cfg=sink, want_grad=False,
                            kl_per_token=cfg.kl_per_token)[0]
                  for i in range(0, len(train), cfg.batch_size)]
    log = [_epoch_record(0, init_parts, evaluate_student(params, data))]
    opt = _Optimizer(cfg, params)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        parts = []
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            bd, grads, _ = objective(params, batch, w, sink_cfg=sink, kl_per_token=cfg.kl_per_token)
            step += 1
            if not np.isfinite(bd.total):
                raise Diverged(f"total loss became {bd.total} at step {step}", step)
            opt.step(params, grads)
            parts.append(bd)
        log.append(_epoch_record(epoch, parts, evaluate_student(params, data)))
    return TrainResult(log, params, teacher)


def run(spec: ToyTaskSpec, cfg: TrainConfig, n: int = 300, data: ToyDataset = None,
        teacher: TeacherResult = None) -> TrainResult:
    data = data if data is not None else generate_dataset(spec, n)
    teacher = teacher if teacher is not None else pretrain_teacher(spec, data.train)
    return train_student(spec, cfg, data, teacher)


def context_sweep(spec: ToyTaskSpec, cfg: TrainConfig, sizes, n: int = 300) -> list:
    """One full teacher+student run per context size; seeds held fixed."""
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be sorted ascending")
    rows = []
    for size in sizes:
        res = run(replace(spec, context_tokens=size), cfg, n)
        final = res.log[-1]
        rows.append({"context": size, "tag_f1": final["tag_f1"], "heldout_ce": final["heldout_ce"],
                     "teacher_agreement": final["teacher_agreement"]})
    return rows


def spec_to_dict(spec):
    return asdict(spec)
