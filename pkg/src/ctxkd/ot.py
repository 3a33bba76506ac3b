"""Shared-space projection, Sinkhorn transport, and barycentric logit alignment.

Student logits ``W`` (T_w x V_w) and teacher logits ``L`` (T_t x V_l) are
mapped into a common d-dimensional space, coupled by an entropic transport
plan over timesteps, and the teacher side is carried back onto the student
time axis and vocabulary::

    W' = W @ P_w            L' = L @ P_l
    C[i, j] = |W'_i - L'_j|^2
    P = sinkhorn(C, 1/T_w, 1/T_t)
    L'' = (P / P.sum(1)) @ L' @ B
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegeneratePlan, DimensionMismatch, NoConvergence, NumericalUnderflow

LOG_DOMAIN_THRESHOLD = 30.0


def _matrix(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def _matmul(A, B, a_name, b_name):
    A, B = _matrix(A, a_name), _matrix(B, b_name)
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"{a_name} {A.shape} and {b_name} {B.shape} do not chain")
    return A @ B


def project_logits(H, U):
    """Vocabulary projection ``H @ U`` of hidden states to logits."""
    return _matmul(H, U, "H", "U")


@dataclass
class SharedProjection:
    P_w: np.ndarray
    P_l: np.ndarray
    B: np.ndarray

    @property
    def d(self) -> int:
        return self.P_w.shape[1]

    @classmethod
    def random(cls, V_w, V_l, d, rng):
        return cls(rng.normal(0.0, V_w ** -0.5, (V_w, d)),
                   rng.normal(0.0, V_l ** -0.5, (V_l, d)),
                   rng.normal(0.0, d ** -0.5, (d, V_w)))


def to_shared_space(W, L, proj: SharedProjection):
    return _matmul(W, proj.P_w, "W", "P_w"), _matmul(L, proj.P_l, "L", "P_l")


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    max_iters: int = 200
    tol: float = 1e-6
    domain: str = "auto"  # auto | kernel | log

    def __post_init__(self):
        if not (self.epsilon > 0 and self.max_iters > 0 and self.tol > 0):
            raise ValueError("epsilon, max_iters and tol must be positive")
        if self.domain not in ("auto", "kernel", "log"):
            raise ValueError(f"unknown domain {self.domain!r}")


@dataclass
class TransportPlan:
    P: np.ndarray
    a: np.ndarray
    b: np.ndarray
    cost: float
    converged: bool
    n_iter: int
    residual: float
    log_domain: bool

    @property
    def shape(self):
        return self.P.shape


def _prob_vector(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty vector")
    if np.any(x <= 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be a strictly positive probability vector")
    return x


def sinkhorn(C, a=None, b=None, cfg: SinkhornConfig = SinkhornConfig(), strict: bool = False):
    """Entropic OT plan for cost ``C`` with marginals ``a``, ``b`` (uniform by default).

    The reported ``cost`` is the transport cost ``sum(P * C)`` without the
    entropy term.  When the marginal residual is still above ``tol`` after
    ``max_iters`` the plan comes back with ``converged=False``; ``strict``
    raises :class:`NoConvergence` instead (the plan rides on the exception).
    """
    C = _matrix(C, "C")
    n, m = C.shape
    a = np.full(n, 1.0 / n) if a is None else _prob_vector(a, "a")
    b = np.full(m, 1.0 / m) if b is None else _prob_vector(b, "b")
    if a.size != n or b.size != m:
        raise DimensionMismatch(f"marginals {a.size}, {b.size} do not match cost {C.shape}")
    eps = cfg.epsilon
    use_log = cfg.domain == "log" or (
        cfg.domain == "auto" and np.max(np.abs(C)) / eps > LOG_DOMAIN_THRESHOLD)
    if use_log:
        f, g, it, res = kernels.sinkhorn_log(C, eps, a, b, cfg.max_iters, cfg.tol)
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
    else:
        K = np.exp(-C / eps)
        if np.any(K.sum(axis=1) == 0.0) or np.any(K.sum(axis=0) == 0.0):
            raise NumericalUnderflow(
                f"Gibbs kernel row/column underflows at epsilon={eps}; cost scale too large")
        u, v, it, res = kernels.sinkhorn_kernel(K, a, b, cfg.max_iters, cfg.tol)
        P = u[:, None] * K * v[None, :]
    if not np.all(np.isfinite(P)):
        raise NumericalUnderflow(f"non-finite transport plan at epsilon={eps}")
    residual = max(np.max(np.abs(P.sum(axis=1) - a)), np.max(np.abs(P.sum(axis=0) - b)))
    plan = TransportPlan(P, a, b, float(np.sum(P * C)), bool(residual < cfg.tol), int(it),
                         float(residual), bool(use_log))
    if strict and not plan.converged:
        raise NoConvergence(
            f"Sinkhorn residual {residual:.3e} above tol {cfg.tol:g} after {it} iterations", plan)
    return plan


def squared_distances(X, Y):
    """Pairwise squared Euclidean distances between rows of ``X`` and ``Y``."""
    d = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d, 0.0)


def alignment_cost(W_shared, L_shared, cfg: SinkhornConfig = SinkhornConfig(), strict: bool = False):
    """Wasserstein alignment cost between shared-space rows; returns ``(cost, plan)``."""
    W_shared, L_shared = _matrix(W_shared, "W'"), _matrix(L_shared, "L'")
    if W_shared.shape[1] != L_shared.shape[1]:
        raise DimensionMismatch(f"shared dims differ: {W_shared.shape[1]} vs {L_shared.shape[1]}")
    plan = sinkhorn(squared_distances(W_shared, L_shared), cfg=cfg, strict=strict)
    return plan.cost, plan


def barycentric_weights(P):
    """Row-normalised plan: each row becomes a convex-combination weight vector."""
    rows = P.sum(axis=1)
    if np.any(rows < 1e-12):
        raise DegeneratePlan(f"plan row {int(np.argmin(rows))} carries no mass")
    return P / rows[:, None]


def align_teacher(L, L_shared, plan, proj: SharedProjection):
    """Aligned teacher logits ``L''`` (T_w x V_w)."""
    P = plan.P if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    L_shared = _matrix(L_shared, "L'")
    if L is not None and np.shape(L)[0] != L_shared.shape[0]:
        raise DimensionMismatch("L and L' disagree on teacher length")
    if P.shape[1] != L_shared.shape[0]:
        raise DimensionMismatch(f"plan {P.shape} does not match teacher length {L_shared.shape[0]}")
    if proj.B.shape[0] != L_shared.shape[1]:
        raise DimensionMismatch(f"B {proj.B.shape} does not match shared dim {L_shared.shape[1]}")
    return barycentric_weights(P) @ L_shared @ proj.B
