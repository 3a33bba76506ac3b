"""Distillation losses and their exact gradients.

Per example, with student features ``X`` and frozen teacher outputs
``(H_l, L)``::

    H_w = X @ E          W = H_w @ U_w
    W'  = W @ P_w        L' = L @ P_l
    L_OT  = sum(P * |W'_i - L'_j|^2)                (P held constant)
    L''   = A @ L' @ B,  A = P / P.sum(1)
    L_KL  = T^2 * sum_t KL(softmax(L''_t/T) || softmax(W_t/T))
    L_rep = |H_w[-1] - W_proj @ H_l[-1]|^2
    L_CE  = mean over non-pad positions of -log softmax(W)[y]

    total = a*L_KL + b*L_rep + g*L_OT + (1-a-b-g)*L_CE

Over a batch, KL, rep and OT are averaged over examples and CE is pooled over
all non-pad positions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import AllPadded, DimensionMismatch, InvalidWeights, TargetOutOfRange
from .ot import SinkhornConfig, alignment_cost, barycentric_weights, squared_distances


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    temperature: float = 2.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InvalidWeights("loss weights must be non-negative")
        if self.alpha + self.beta + self.gamma > 1.0 + 1e-12:
            raise InvalidWeights(f"alpha+beta+gamma = {self.alpha + self.beta + self.gamma} > 1")
        if not self.temperature > 0:
            raise InvalidWeights("temperature must be positive")

    @property
    def ce_weight(self) -> float:
        return 1.0 - self.alpha - self.beta - self.gamma


@dataclass(frozen=True)
class LossBreakdown:
    kl: float
    rep: float
    ot: float
    ce: float
    total: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def temp_softmax(logits, T: float = 1.0):
    """``softmax(logits / T)`` along the last axis."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64) / T))


def _kl_rows(teacher_logits, student_logits, T):
    log_p = log_softmax(teacher_logits / T)
    log_q = log_softmax(student_logits / T)
    p = np.exp(log_p)
    logr = np.where(p > 0, log_p - log_q, 0.0)
    return (p * logr).sum(axis=-1), p, np.exp(log_q), logr


def kl_loss(L_aligned, W, T: float = 1.0, scale_t2: bool = True, per_token: bool = False) -> float:
    """Teacher-to-student KL summed over timesteps, times ``T**2`` by default."""
    L_aligned = np.asarray(L_aligned, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if L_aligned.shape != W.shape:
        raise DimensionMismatch(f"L'' {L_aligned.shape} vs W {W.shape}")
    rows = _kl_rows(L_aligned, W, T)[0]
    total = rows.mean() if per_token else rows.sum()
    return float(total * T * T if scale_t2 else total)


def rep_loss(h_W, h_L, W_proj) -> float:
    h_W, h_L, W_proj = (np.asarray(x, dtype=np.float64) for x in (h_W, h_L, W_proj))
    if W_proj.shape != (h_W.shape[0], h_L.shape[0]):
        raise DimensionMismatch(f"W_proj {W_proj.shape} vs h_W {h_W.shape}, h_L {h_L.shape}")
    r = h_W - W_proj @ h_L
    return float(r @ r)


def sentence_embedding(H):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] < 1:
        raise DimensionMismatch("hidden states must be a non-empty T x d matrix")
    return H[-1]


def _check_targets(W, targets, pad_id):
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (W.shape[0],):
        raise DimensionMismatch(f"targets length {targets.shape} vs {W.shape[0]} timesteps")
    mask = np.ones(targets.shape, dtype=bool) if pad_id is None else targets != pad_id
    bad = mask & ((targets < 0) | (targets >= W.shape[1]))
    if np.any(bad):
        raise TargetOutOfRange(f"target id {targets[bad][0]} outside vocabulary of {W.shape[1]}")
    return targets, mask


def _ce_sum(W, targets, mask):
    logp = log_softmax(W)
    idx = np.flatnonzero(mask)
    return -logp[idx, targets[idx]].sum(), logp


def ce_loss(W, targets, pad_id=None) -> float:
    W = np.asarray(W, dtype=np.float64)
    targets, mask = _check_targets(W, targets, pad_id)
    n = int(mask.sum())
    if n == 0:
        raise AllPadded("every target position is padding")
    return float(_ce_sum(W, targets, mask)[0] / n)


def total_loss(parts, w: LossWeights) -> LossBreakdown:
    if isinstance(parts, LossBreakdown):
        parts = parts.as_dict()
    kl, rep, ot, ce = (float(parts[k]) for k in ("kl", "rep", "ot", "ce"))
    total = w.alpha * kl + w.beta * rep + w.gamma * ot + w.ce_weight * ce
    return LossBreakdown(kl, rep, ot, ce, total)


# ---------------------------------------------------------------------------
# Trainable student-side parameters and the batch objective

PARAM_NAMES = ("E", "U_w", "P_w", "P_l", "B", "W_proj")


@dataclass
class DistillParams:
    """Student encoder ``E``, head ``U_w``, shared projections, and ``W_proj``."""

    E: np.ndarray
    U_w: np.ndarray
    P_w: np.ndarray
    P_l: np.ndarray
    B: np.ndarray
    W_proj: np.ndarray

    @classmethod
    def init(cls, d_feat, d_w, V_w, V_l, d, d_l, rng):
        return cls(
            E=rng.normal(0.0, d_feat ** -0.5, (d_feat, d_w)),
            U_w=rng.normal(0.0, d_w ** -0.5, (d_w, V_w)),
            P_w=rng.normal(0.0, V_w ** -0.5, (V_w, d)),
            P_l=rng.normal(0.0, V_l ** -0.5, (V_l, d)),
            B=rng.normal(0.0, d ** -0.5, (d, V_w)),
            W_proj=rng.normal(0.0, d_l ** -0.5, (d_w, d_l)),
        )

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def copy(self):
        return DistillParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self):
        return DistillParams(**{k: np.zeros_like(v) for k, v in self.items()})


@dataclass
class Example:
    """One forward unit: student features/targets and frozen teacher outputs."""

    X: np.ndarray
    targets: np.ndarray
    H_l: np.ndarray
    L: np.ndarray


def student_logits(params: DistillParams, X):
    H_w = X @ params.E
    return H_w, H_w @ params.U_w


def compute_plans(params, batch, sink_cfg: SinkhornConfig = SinkhornConfig()):
    plans = []
    for ex in batch:
        _, W = student_logits(params, ex.X)
        plans.append(alignment_cost(W @ params.P_w, ex.L @ params.P_l, sink_cfg)[1].P)
    return plans


def objective(params: DistillParams, batch, w: LossWeights, plans=None, pad_id=None,
              sink_cfg: SinkhornConfig = SinkhornConfig(), want_grad: bool = True,
              scale_t2: bool = True, kl_per_token: bool = False):
    """Batch loss breakdown and, optionally, gradients for every parameter.

    ``plans`` are the per-example transport plans; they are treated as
    constants.  When omitted they are computed from the current parameters.
    ``kl_per_token`` divides each example's KL by its length.
    Returns ``(breakdown, grads, plans)``; ``grads`` is ``None`` without
    ``want_grad``.
    """
    if plans is None:
        plans = compute_plans(params, batch, sink_cfg)
    T = w.temperature
    t2 = T * T if scale_t2 else 1.0
    nb = len(batch)
    masks = []
    for ex in batch:
        masks.append(_check_targets(np.empty((ex.targets.shape[0], params.U_w.shape[1])),
                                    ex.targets, pad_id)[1])
    n_tok = int(sum(m.sum() for m in masks))
    if n_tok == 0:
        raise AllPadded("every target position in the batch is padding")

    g = params.zeros_like() if want_grad else None
    kl_sum = rep_sum = ot_sum = ce_sum = 0.0
    for ex, P, mask in zip(batch, plans, masks):
        targets = np.asarray(ex.targets, dtype=np.int64)
        H_w, W = student_logits(params, ex.X)
        Ws = W @ params.P_w
        Ls = ex.L @ params.P_l
        C = squared_distances(Ws, Ls)
        ot_i = float(np.sum(P * C))
        A = barycentric_weights(P)
        AL = A @ Ls
        L2 = AL @ params.B
        kl_rows, p, q, logr = _kl_rows(L2, W, T)
        kl_scale = t2 / W.shape[0] if kl_per_token else t2
        kl_i = kl_scale * kl_rows.sum()
        h_L = ex.H_l[-1]
        r = H_w[-1] - params.W_proj @ h_L
        rep_i = float(r @ r)
        ce_i, logp = _ce_sum(W, targets, mask)
        kl_sum += kl_i
        rep_sum += rep_i
        ot_sum += ot_i
        ce_sum += ce_i
        if not want_grad:
            continue

        # dTotal/dW from CE and KL
        dW = np.exp(logp)
        idx = np.flatnonzero(mask)
        dW[idx, targets[idx]] -= 1.0
        dW[~mask] = 0.0
        dW *= w.ce_weight / n_tok
        ka = w.alpha * kl_scale / (nb * T)
        dW += ka * (q - p)
        dL2 = ka * p * (logr - kl_rows[:, None])

        # L'' = A L' B
        g.B += AL.T @ dL2
        dLs = A.T @ (dL2 @ params.B.T)

        # OT on shared rows
        kg = w.gamma / nb
        rows, cols = P.sum(axis=1), P.sum(axis=0)
        dWs = kg * 2.0 * (rows[:, None] * Ws - P @ Ls)
        dLs += kg * 2.0 * (cols[:, None] * Ls - P.T @ Ws)
        g.P_w += W.T @ dWs
        dW += dWs @ params.P_w.T
        g.P_l += ex.L.T @ dLs

        # head and encoder
        g.U_w += H_w.T @ dW
        dH = dW @ params.U_w.T
        kb = w.beta / nb
        dH[-1] += kb * 2.0 * r
        g.W_proj += -kb * 2.0 * np.outer(r, h_L)
        g.E += ex.X.T @ dH

    parts = {"kl": kl_sum / nb, "rep": rep_sum / nb, "ot": ot_sum / nb, "ce": ce_sum / n_tok}
    return total_loss(parts, w), g, plans


def gradients(batch, params: DistillParams, w: LossWeights, plans=None, **kw) -> DistillParams:
    """Exact gradient of the batch total with plans held constant."""
    return objective(params, batch, w, plans=plans, **kw)[1]


def finite_difference_check(params: DistillParams, batch, w: LossWeights, h: float = 1e-4,
                            floor: float = 1e-8, **kw) -> dict:
    """Max entrywise relative error of analytic vs central-difference gradients.

    Plans are computed once and frozen, matching the analytic treatment.
    Returns ``{matrix name: max |g - fd| / max(|g|, |fd|, floor)}``.
    """
    kw.pop("plans", None)
    _, grads, plans = objective(params, batch, w, **kw)
    out = {}
    for name, M in params.items():
        G = getattr(grads, name)
        fd = np.empty_like(M)
        for idx in np.ndindex(M.shape):
            orig = M[idx]
            M[idx] = orig + h
            up = objective(params, batch, w, plans=plans, want_grad=False, **kw)[0].total
            M[idx] = orig - h
            down = objective(params, batch, w, plans=plans, want_grad=False, **kw)[0].total
            M[idx] = orig
            fd[idx] = (up - down) / (2.0 * h)
        scale = np.maximum(np.maximum(np.abs(G), np.abs(fd)), floor)
        out[name] = float(np.max(np.abs(G - fd) / scale))
    return out
