import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cocoimc import numerics as nx
from cocoimc.data import ConfigurationError
from cocoimc.losses import (
    LossBreakdown,
    LossWeights,
    joint_distribution,
    literal_mi_value,
    loss_ccl,
    loss_cml,
    loss_pre,
    loss_rec,
    total_loss,
)
from cocoimc.numerics import ContractError

from oracles import ccl_loops, joint_loops


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def softmax_rows(rng, n, k, scale=2.0):
    e = np.exp(scale * rng.normal(size=(n, k)))
    return e / e.sum(axis=1, keepdims=True)


def ident(z):
    return z


def test_weight_defaults():
    w = LossWeights()
    assert (w.alpha, w.beta, w.lam) == (0.01, 0.001, 1.0)


def test_weights_reject_negative():
    with pytest.raises(ConfigurationError):
        LossWeights(alpha=-1)
    with pytest.raises(ConfigurationError):
        LossWeights(momentum=1.2)


def test_rec_exact_reconstruction(rng):
    x = rng.normal(size=(4, 3))
    assert loss_rec(x, x.copy()).item() == 0.0


def test_rec_single_row():
    out = loss_rec(np.array([[1.0, 0.0], [5.0, 5.0]]), np.array([[0.0, 1.0], [0.0, 0.0]]), observed=[True, False])
    assert out.item() == 2.0


def test_rec_brute_force(rng):
    x, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    ref = sum((y[i, j] - x[i, j]) ** 2 for i in range(4) for j in range(3)) / 4
    assert abs(loss_rec(x, y).item() - ref) < 1e-12


def test_rec_needs_observed_row(rng):
    with pytest.raises(ContractError):
        loss_rec(np.ones((2, 2)), np.ones((2, 2)), observed=[False, False])


def test_rec_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        loss_rec(np.ones((2, 2)), np.ones((2, 3)))


def test_cml_hand_values():
    a = np.array([[1.0, 0.0]])
    assert loss_cml(a, a).item() == 0.0
    assert abs(loss_cml(a, np.array([[0.0, 1.0]])).item() - 2.0) < 1e-15
    assert abs(loss_cml(a, -a).item() - 4.0) < 1e-15


def test_cml_requires_unit_rows():
    with pytest.raises(ContractError):
        loss_cml(np.array([[2.0, 0.0]]), np.array([[1.0, 0.0]]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 16))
def test_cml_cosine_identity(seed, d):
    rng = np.random.default_rng(seed)
    a, b = unit_rows(rng, 1, d), unit_rows(rng, 1, d)
    cos = float((a * b).sum())
    assert abs(loss_cml(a, b).item() - (2 - 2 * cos)) < 1e-10


def test_pre_perfect_and_unit_offset(rng):
    z = rng.normal(size=(5, 3))
    assert loss_pre(z, z.copy(), ident, ident).item() == 0.0
    z2 = z - np.array([[1.0, 0.0, 0.0]])
    assert abs(loss_pre(z, z2, ident, ident).item() - 2.0) < 1e-12


def test_pre_brute_force(rng):
    z1, z2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    complete = np.array([1, 1, 0, 1, 0, 1], bool)
    ref = 0.0
    for i in np.flatnonzero(complete):
        ref += ((z1[i] @ A - z2[i]) ** 2).sum() + ((z2[i] @ B - z1[i]) ** 2).sum()
    ref /= complete.sum()
    got = loss_pre(z1, z2, lambda z: z @ A, lambda z: z @ B, complete)
    assert abs(got.item() - ref) < 1e-12


def test_pre_without_complete_rows():
    with pytest.raises(ContractError):
        loss_pre(np.ones((2, 2)), np.ones((2, 2)), ident, ident, complete=[False, False])


def test_pre_targets_are_constants(rng):
    tape = nx.Tape()
    z1, z2 = tape.leaf(rng.normal(size=(4, 2))), tape.leaf(rng.normal(size=(4, 2)))
    tape.backward(loss_pre(z1, z2, ident, ident))
    # with identity predictors each source gets 2 (z_src - z_other) / n and no target term
    np.testing.assert_allclose(z1.grad, 2 * (z1.value - z2.value) / 4, atol=1e-14)


def test_pre_detach_source(rng):
    tape = nx.Tape()
    z1, z2 = tape.leaf(rng.normal(size=(4, 2))), tape.leaf(rng.normal(size=(4, 2)))
    W = tape.leaf(np.eye(2))
    tape.backward(loss_pre(z1, z2, lambda z: z @ W, lambda z: z @ W, detach_source=True))
    assert not z1.grad.any() and not z2.grad.any()
    assert W.grad.any()


def test_joint_one_hot_and_uniform():
    p = np.eye(3)[[0, 0, 1, 2]]
    np.testing.assert_allclose(joint_distribution(p, p), np.diag([0.5, 0.25, 0.25]))
    u = np.full((5, 4), 0.25)
    np.testing.assert_allclose(joint_distribution(u, u), np.full((4, 4), 1 / 16), atol=1e-16)


def test_joint_matches_loops(rng):
    for _ in range(10):
        n, k = int(rng.integers(1, 20)), int(rng.integers(2, 6))
        p1, p2 = softmax_rows(rng, n, k), softmax_rows(rng, n, k)
        np.testing.assert_allclose(joint_distribution(p1, p2), joint_loops(p1, p2), rtol=0, atol=1e-12)


def test_joint_rejects_non_distributions():
    with pytest.raises(ContractError):
        joint_distribution(np.full((2, 2), 0.6), np.full((2, 2), 0.5))
    with pytest.raises(nx.DimensionError):
        joint_distribution(np.full((2, 2), 0.5), np.full((3, 2), 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_joint_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p1, p2 = softmax_rows(rng, 12, 4), softmax_rows(rng, 12, 4)
    perm = rng.permutation(12)
    np.testing.assert_allclose(joint_distribution(p1[perm], p2[perm]), joint_distribution(p1, p2), atol=1e-15)


@pytest.mark.parametrize("k", [2, 3, 7])
def test_ccl_closed_forms(k):
    assert abs(loss_ccl(np.eye(k) / k, 0.0).item() + math.log(k)) < 1e-12
    assert abs(loss_ccl(np.full((k, k), 1 / k**2), 0.0).item()) < 1e-12
    # the bracketed sum is ln(1/K) (1 - 2(1 + eta)); the loss is its negation
    inner = math.log(1 / k) * (1 - 2 * 10)
    assert abs(loss_ccl(np.eye(k) / k, 9.0).item() + inner) < 1e-12
    assert abs(loss_ccl(np.eye(k) / k, 9.0).item() + 19 * math.log(k)) < 1e-12
    assert abs(ccl_loops((np.eye(k) / k).tolist(), 9.0) + 19 * math.log(k)) < 1e-12


def test_ccl_matches_loops(rng):
    for _ in range(20):
        k = int(rng.integers(2, 8))
        P = rng.random((k, k)) ** 3
        P /= P.sum()
        eta = float(rng.uniform(0, 10))
        assert abs(loss_ccl(P, eta).item() - ccl_loops(P.tolist(), eta)) < 1e-10


def test_ccl_zero_entries_contribute_nothing():
    P = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert abs(loss_ccl(P, 0.0).item() + math.log(2)) < 1e-12


def test_ccl_rejects_bad_input():
    with pytest.raises(ContractError):
        loss_ccl(np.full((2, 2), 0.3))
    with pytest.raises(nx.DimensionError):
        loss_ccl(np.full((2, 3), 1 / 6))


def _random_joint(seed, k):
    rng = np.random.default_rng(seed)
    P = rng.random((k, k)) ** 2
    return P / P.sum()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_ccl_bounds_without_regulariser(seed, k):
    P = _random_joint(seed, k)
    v = loss_ccl(P, 0.0).item()
    assert -math.log(k) - 1e-12 <= v <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.floats(0, 20))
def test_ccl_transpose_symmetry(seed, k, eta):
    P = _random_joint(seed, k)
    assert abs(loss_ccl(P, eta).item() - loss_ccl(P.T, eta).item()) < 1e-12
    S = (P + P.T) / 2
    assert loss_ccl(S, eta).item() == loss_ccl(S.T.copy(), eta).item()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0, 20))
def test_literal_expression_is_constant(seed, k, eta):
    P = _random_joint(seed, k)
    assert abs(literal_mi_value(P, eta) + 1 / (1 + eta)) < 1e-9


def test_total_loss_examples():
    w = LossWeights()
    assert total_loss(LossBreakdown(), w) == 0.0
    parts = LossBreakdown(rec=1.0, cml=1.0, pre=5.0, ccl=1.0)
    assert abs(total_loss(parts, w, pre_active=False) - 1.011) < 1e-12
    assert abs(total_loss(parts, w, pre_active=True) - 6.011) < 1e-12


@given(
    arrays(np.float64, 4, elements=st.floats(-100, 100)),
    st.floats(0, 10),
    st.floats(0, 10),
    st.floats(0, 10),
    st.booleans(),
)
def test_total_loss_linearity(vals, a, b, lam, active):
    parts = LossBreakdown(*vals)
    w = LossWeights(alpha=a, beta=b, lam=lam)
    ref = b * vals[1] + lam * (vals[3] + (vals[2] if active else 0.0)) + a * vals[0]
    got = total_loss(parts, w, active)
    assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))
    doubled = total_loss(parts, LossWeights(alpha=2 * a, beta=2 * b, lam=2 * lam), active)
    assert abs(doubled - 2 * got) <= 1e-12 * max(1.0, abs(got))


# gradient checks through a small network


def _net(x, w1, w2):
    return nx.relu(x @ w1) @ w2


def test_rec_grad_through_network(rng):
    x = rng.normal(size=(6, 4))
    err = nx.grad_check(lambda w1, w2: loss_rec(x, _net(x, w1, w2)), [rng.normal(size=(4, 5)), rng.normal(size=(5, 4))])
    assert err < 1e-7


def test_cml_grad_through_network(rng):
    x = rng.normal(size=(6, 4))
    target = unit_rows(rng, 6, 3)
    err = nx.grad_check(
        lambda w1, w2: loss_cml(nx.l2norm(_net(x, w1, w2)), target), [rng.normal(size=(4, 5)), rng.normal(size=(5, 3))]
    )
    assert err < 1e-4


def test_pre_grad_through_network(rng):
    z1, z2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    err = nx.grad_check(
        lambda w1, w2, w3, w4: loss_pre(z1, z2, lambda z: _net(z, w1, w2), lambda z: _net(z, w3, w4)),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4, 3))],
    )
    assert err < 1e-7


def test_ccl_grad_through_network(rng):
    x1, x2 = rng.normal(size=(10, 4)), rng.normal(size=(10, 3))

    def f(a1, a2, b1, b2):
        P = joint_distribution(nx.softmax(_net(x1, a1, a2)), nx.softmax(_net(x2, b1, b2)))
        return loss_ccl(P, 9.0)

    params = [rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 5)), rng.normal(size=(5, 3))]
    assert nx.grad_check(f, params) < 1e-4


def test_cml_accepts_zero_fallback_rows():
    q = np.array([[0.0, 0.0], [1.0, 0.0]])
    z = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert abs(loss_cml(q, z).item() - 0.5) < 1e-15
