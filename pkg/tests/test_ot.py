import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxkd.errors import DegeneratePlan, DimensionMismatch, NoConvergence, NumericalUnderflow
from ctxkd.ot import (
    SharedProjection, SinkhornConfig, align_teacher, alignment_cost, barycentric_weights, project_logits,
    sinkhorn, squared_distances, to_shared_space,
)

from oracles import lp_transport, matmul_loops


def test_project_logits():
    U = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(project_logits(np.eye(2), U), U)
    np.testing.assert_array_equal(project_logits([[2.0]], [[3.0, -1.0]]), [[6.0, -2.0]])
    rng = np.random.default_rng(0)
    H, U = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(project_logits(H, U), matmul_loops(H.tolist(), U.tolist()), rtol=1e-13)
    with pytest.raises(DimensionMismatch):
        project_logits(H, U.T)
    with pytest.raises(ValueError):
        project_logits([[np.nan]], [[1.0]])


def test_to_shared_space():
    rng = np.random.default_rng(1)
    W, L = rng.normal(size=(3, 4)), rng.normal(size=(5, 6))
    proj = SharedProjection(np.eye(4), np.zeros((6, 4)), np.zeros((4, 4)))
    Ws, Ls = to_shared_space(W, L, proj)
    np.testing.assert_array_equal(Ws, W)
    np.testing.assert_array_equal(Ls, 0)
    proj = SharedProjection.random(4, 6, 3, rng)
    Ws, Ls = to_shared_space(W, L, proj)
    np.testing.assert_allclose(Ws, matmul_loops(W.tolist(), proj.P_w.tolist()), rtol=1e-13)
    np.testing.assert_allclose(Ls, matmul_loops(L.tolist(), proj.P_l.tolist()), rtol=1e-13)
    assert proj.d == 3
    with pytest.raises(DimensionMismatch):
        to_shared_space(L, W, proj)


def test_zero_cost_gives_outer_product():
    a, b = np.array([0.2, 0.8]), np.array([0.5, 0.25, 0.25])
    plan = sinkhorn(np.zeros((2, 3)), a, b)
    np.testing.assert_allclose(plan.P, np.outer(a, b), atol=1e-15)
    assert plan.cost == 0 and plan.converged


def test_one_by_one():
    plan = sinkhorn([[2.5]])
    assert plan.P.shape == (1, 1)
    assert plan.P[0, 0] == pytest.approx(1.0, abs=1e-15) and plan.cost == pytest.approx(2.5, abs=1e-14)


def test_two_by_two_against_lp():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    plan = sinkhorn(C, cfg=SinkhornConfig(epsilon=0.01))
    lp_cost, lp_plan = lp_transport(C, [0.5, 0.5], [0.5, 0.5])
    np.testing.assert_allclose(plan.P, [[0.5, 0.0], [0.0, 0.5]], atol=1e-3)
    assert abs(plan.cost - lp_cost) < 1e-3 and lp_cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(lp_plan, [[0.5, 0.0], [0.0, 0.5]])


def _entropy(p):
    return -np.sum(p * np.log(p))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 32 - 1),
       st.sampled_from([0.05, 0.1, 0.5]))
def test_cost_lower_bound_against_lp(n, m, seed, eps):
    rng = np.random.default_rng(seed)
    C = rng.random((n, m)) * 2
    a = rng.random(n) + 0.2
    b = rng.random(m) + 0.2
    a, b = a / a.sum(), b / b.sum()
    plan = sinkhorn(C, a, b, SinkhornConfig(epsilon=eps, max_iters=5000, tol=1e-10))
    lp, _ = lp_transport(C, a, b)
    assert plan.cost >= 0
    assert plan.cost >= lp - eps * (_entropy(a) + _entropy(b)) - 1e-12
    assert plan.cost <= lp + eps * (_entropy(a) + _entropy(b)) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2 ** 32 - 1),
       st.sampled_from([0.01, 0.1, 1.0]))
def test_marginals_hold_when_converged(n, m, seed, eps):
    rng = np.random.default_rng(seed)
    plan = sinkhorn(rng.random((n, m)) * 5, cfg=SinkhornConfig(epsilon=eps, max_iters=2000))
    assert np.all(plan.P >= 0)
    if plan.converged:
        assert np.max(np.abs(plan.P.sum(1) - 1 / n)) < 1e-6
        assert np.max(np.abs(plan.P.sum(0) - 1 / m)) < 1e-6


def test_domain_switch_threshold():
    C = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert not sinkhorn(C, cfg=SinkhornConfig(epsilon=0.1)).log_domain       # max C/eps = 20
    assert sinkhorn(C, cfg=SinkhornConfig(epsilon=0.05)).log_domain          # 40 > 30
    k = sinkhorn(C, cfg=SinkhornConfig(epsilon=0.1, domain="kernel"))
    g = sinkhorn(C, cfg=SinkhornConfig(epsilon=0.1, domain="log"))
    np.testing.assert_allclose(k.P, g.P, atol=1e-12)


def test_epsilon_monotone_cost():
    rng = np.random.default_rng(7)
    for _ in range(20):
        C = rng.random((5, 6))
        costs = [sinkhorn(C, cfg=SinkhornConfig(epsilon=e, max_iters=20000, tol=1e-12)).cost
                 for e in (0.5, 0.1, 0.02)]
        assert costs[0] + 1e-9 >= costs[1] and costs[1] + 1e-9 >= costs[2]


def test_no_convergence_and_underflow():
    rng = np.random.default_rng(2)
    C = rng.random((8, 8))
    cfg = SinkhornConfig(epsilon=0.001, max_iters=1, tol=1e-12)
    plan = sinkhorn(C, cfg=cfg)
    assert not plan.converged and plan.n_iter == 1
    with pytest.raises(NoConvergence) as info:
        sinkhorn(C, cfg=cfg, strict=True)
    assert info.value.plan.P.shape == (8, 8)
    with pytest.raises(NumericalUnderflow):
        sinkhorn(np.full((2, 2), 1e4), cfg=SinkhornConfig(epsilon=1.0, domain="kernel"))


def test_bad_marginals_and_config():
    with pytest.raises(ValueError):
        sinkhorn(np.zeros((2, 2)), a=[1.0, 0.0])
    with pytest.raises(DimensionMismatch):
        sinkhorn(np.zeros((2, 2)), a=[1.0])
    with pytest.raises(ValueError):
        SinkhornConfig(epsilon=0)
    with pytest.raises(ValueError):
        SinkhornConfig(domain="fourier")


def test_deterministic_plans():
    rng = np.random.default_rng(4)
    C = rng.random((6, 9))
    assert np.array_equal(sinkhorn(C).P, sinkhorn(C).P)


def test_alignment_cost_examples():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(1, 3))
    Y = rng.normal(size=(1, 3))
    cost, plan = alignment_cost(X, Y)
    assert cost == pytest.approx(np.sum((X - Y) ** 2), rel=1e-14)
    rows = np.eye(4) * 3.0
    cost, plan = alignment_cost(rows, rows[[2, 0, 3, 1]], SinkhornConfig(epsilon=0.1))
    lp, lp_plan = lp_transport(squared_distances(rows, rows[[2, 0, 3, 1]]), np.full(4, 0.25), np.full(4, 0.25))
    assert lp == pytest.approx(0.0, abs=1e-12) and cost < 1e-3
    np.testing.assert_allclose(plan.P, lp_plan, atol=1e-3)
    cost, plan = alignment_cost(rows, rows)
    np.testing.assert_allclose(plan.P, np.eye(4) / 4, atol=1e-3)
    with pytest.raises(DimensionMismatch):
        alignment_cost(rows, rows[:, :3])


def test_squared_distances_nonnegative():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(4, 3))
    D = squared_distances(X, X)
    assert np.all(D >= 0) and np.allclose(np.diag(D), 0, atol=1e-12)
    np.testing.assert_allclose(D[0, 1], np.sum((X[0] - X[1]) ** 2))


def test_align_teacher_examples():
    rng = np.random.default_rng(8)
    Ls = rng.normal(size=(3, 2))
    B = np.eye(2)
    proj = SharedProjection(np.zeros((2, 2)), np.zeros((5, 2)), B)
    np.testing.assert_allclose(align_teacher(None, Ls, np.eye(3) / 3, proj), Ls)
    np.testing.assert_allclose(align_teacher(None, Ls[:2], np.full((1, 2), 0.5), proj), [Ls[:2].mean(0)])
    with pytest.raises(DegeneratePlan):
        align_teacher(None, Ls, np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]]), proj)
    with pytest.raises(DimensionMismatch):
        align_teacher(None, Ls, np.eye(2) / 2, proj)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_align_teacher_is_convex(n, m, seed):
    rng = np.random.default_rng(seed)
    Ls = rng.normal(size=(m, 3))
    B = rng.normal(size=(3, 4))
    plan = sinkhorn(rng.random((n, m)))
    L2 = align_teacher(None, Ls, plan, SharedProjection(np.zeros((4, 3)), np.zeros((2, 3)), B))
    src = Ls @ B
    assert L2.shape == (n, 4)
    assert np.all(L2 >= src.min(0) - 1e-12) and np.all(L2 <= src.max(0) + 1e-12)
    np.testing.assert_allclose(barycentric_weights(plan.P).sum(1), 1.0)
