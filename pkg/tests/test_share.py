import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compactnet import autodiff as ad
from compactnet import share
from compactnet.autodiff import Tensor
from compactnet.gradcheck import finite_diff_grad, max_relative_error
from compactnet.harness.cli import WORKED_ALPHA

PRINTED_LSM = np.array([
    [1, 0.05, 1, 0.05, 0.15],
    [0.05, 1, 0.05, 1, 0.40],
    [1, 0.05, 1, 0.05, 0.15],
    [0.05, 1, 0.05, 1, 0.40],
    [0.15, 0.40, 0.15, 0.40, 1],
])


def bank(k=3, L=4, shape=(2, 3), seed=0):
    return share.TemplateBank.random(k, L, shape, np.random.default_rng(seed))


# effective weights

def test_one_hot_selects_template():
    b = bank()
    b.alpha.data = np.eye(3)[:, [2, 0, 1, 2]]
    W = share.effective_weights(b)
    assert np.array_equal(W[0].data, b.T.data[2].reshape(2, 3))
    assert np.array_equal(W[1].data, b.T.data[0].reshape(2, 3))


def test_single_template_scales():
    b = bank(k=1)
    W = share.effective_weights(b)
    for l in range(4):
        assert np.allclose(W[l].data, b.alpha.data[0, l] * b.T.data[0].reshape(2, 3))


def test_bank_shape_validation():
    with pytest.raises(ValueError):
        share.TemplateBank(Tensor(np.ones((2, 6))), Tensor(np.ones((3, 4))), (2, 3))
    with pytest.raises(ValueError):
        share.TemplateBank(Tensor(np.ones((2, 6))), Tensor(np.ones((2, 4))), (2, 2))


def test_effective_weight_gradients():
    b = bank(seed=1)
    C = [Tensor(np.random.default_rng(l).normal(size=(2, 3))) for l in range(4)]
    f = lambda: sum((ad.tsum(W * c) for W, c in zip(share.effective_weights(b), C)), Tensor(0.0))
    _, g = ad.value_and_grad(f, [b.alpha, b.T])
    fd = finite_diff_grad(lambda: float(f().data), [b.alpha, b.T], 1e-5)
    assert max_relative_error(g, fd) <= 1e-4


def test_parameter_counts():
    assert share.parameter_counts(k=4, d=100, L=10) == {"shared": 440, "unshared": 1000}


# layer similarity

def test_worked_example_lsm_two_decimals():
    S = share.compute_lsm(WORKED_ALPHA)
    # printed values are truncated, not rounded
    assert np.array_equal(np.floor(S * 100 + 1e-9) / 100, PRINTED_LSM)
    assert np.max(np.abs(S - PRINTED_LSM)) < 0.01


def test_lsm_basic_properties():
    S = share.compute_lsm(np.random.default_rng(0).normal(size=(4, 6)))
    assert np.allclose(S, S.T) and np.all(np.diag(S) == 1)
    assert np.all((S >= 0) & (S <= 1))


def test_lsm_orthogonal_and_antiparallel():
    assert np.array_equal(share.compute_lsm(np.eye(3)), np.eye(3))
    a = np.array([[1.0, -3.0], [2.0, -6.0]])
    assert share.compute_lsm(a)[0, 1] == pytest.approx(1.0)


def test_lsm_zero_column_names_layers():
    a = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 2.0]])
    with pytest.raises(ValueError, match=r"\[1\]"):
        share.compute_lsm(a)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-3, 3)),
       arrays(np.float64, 5, elements=st.floats(0.1, 10)), st.lists(st.booleans(), min_size=5, max_size=5))
def test_lsm_scale_invariance(alpha, scale, flip):
    alpha[:, np.linalg.norm(alpha, axis=0) < 1e-3] += 1.0
    d = scale * np.where(flip, -1.0, 1.0)
    assert np.max(np.abs(share.compute_lsm(alpha * d) - share.compute_lsm(alpha))) <= 1e-12


def test_lsm_csv():
    text = share.lsm_to_csv(np.eye(2))
    assert text == "1.000000,0.000000\n0.000000,1.000000\n"


# grouping

def test_worked_example_groups():
    g = share.group_layers(share.compute_lsm(WORKED_ALPHA), 0.9)
    assert g.tolist() == [0, 1, 0, 1, 2]


def test_grouping_extremes():
    S = share.compute_lsm(WORKED_ALPHA)
    assert share.group_layers(S, 1e-9).tolist() == [0] * 5
    assert share.group_layers(S, 1.0 + 1e-12).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        share.group_layers(S, 0.0)


def test_grouping_is_transitive():
    S = np.array([[1, 0.95, 0.1], [0.95, 1, 0.95], [0.1, 0.95, 1]])
    assert share.group_layers(S, 0.9).tolist() == [0, 0, 0]


# reparameterization

def test_worked_example_b_first_two_rows():
    res = share.reparameterize(WORKED_ALPHA, [0, 1, 0, 1, 2])
    assert np.allclose(res.B[0], [-0.2, 0.05, -0.15, -0.05])
    assert np.allclose(res.B[1], [0.15, 0.9, -0.3, 1.8])
    assert res.alpha_prime.tolist() == [[1, 0, 1, 0, 0], [0, 1, 0, 1, 0], [0, 0, 0, 0, 1]]


def test_worked_example_b_third_row_is_the_fifth_column():
    res = share.reparameterize(WORKED_ALPHA, [0, 1, 0, 1, 2])
    assert np.array_equal(res.B[2], WORKED_ALPHA[:, 4])
    assert res.residuals[4] == 0


def test_group_validation():
    with pytest.raises(ValueError):
        share.reparameterize(WORKED_ALPHA, [0, 2, 0, 2, 2])
    with pytest.raises(ValueError):
        share.reparameterize(WORKED_ALPHA, [0, 1])


def test_projection_identity():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 6))
    groups = [0, 1, 0, 2, 1, 0]
    res = share.reparameterize(a, groups)
    for l, g in enumerate(groups):
        members = [m for m, h in enumerate(groups) if h == g]
        ls = np.linalg.lstsq(np.ones((len(members), 1)), a[:, members].T, rcond=None)[0][0]
        assert np.allclose(res.reconstructed_alpha()[:, l], ls)
    # only the singleton group reconstructs exactly
    assert (res.residuals == 0).tolist() == [g == 2 for g in groups]


def test_duplicate_columns_fold_exactly():
    rng = np.random.default_rng(4)
    col = rng.normal(size=(3, 2))
    a = col[:, [0, 1, 0, 0, 1]]
    res = share.reparameterize(a, [0, 1, 0, 0, 1])
    assert np.allclose(res.residuals, 0, atol=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_invertible_swap_preserves_weights(seed):
    rng = np.random.default_rng(seed)
    k, L, d = rng.integers(1, 6), rng.integers(1, 7), rng.integers(1, 10)
    a, T = rng.normal(size=(k, L)), rng.normal(size=(k, d))
    B = rng.normal(size=(k, k)) + 3 * np.eye(k)
    a2, T2 = share.reparameterize_bank(a, T, B)
    assert np.max(np.abs(a.T @ T - a2.T @ T2)) <= 1e-10


# folded execution

def shared_net(seed=0, L=5, k=4):
    return share.SharedMLP(3, 4, 2, L, k, seed=seed)


def test_template_mode_equals_weight_mode():
    net = shared_net()
    x = np.random.default_rng(0).normal(size=(6, 3))
    assert np.allclose(net.forward(x).data, net.forward(x, mode="templates").data, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        net.forward(x, mode="both")


def test_exact_fold_matches_original():
    net = shared_net(1)
    base = net.bank.alpha.data[:, [0, 1, 0, 2, 1]]
    net = net.with_alpha(base)
    x = np.random.default_rng(1).normal(size=(5, 3))
    res = share.fold(net.bank, 0.999)
    assert res.n == 3
    _, dev = share.fold_and_execute(net, res, x)
    assert dev <= 1e-10


def test_single_group_is_self_loop():
    net = shared_net(2)
    col = net.bank.alpha.data[:, :1]
    net = net.with_alpha(np.repeat(col, 5, axis=1))
    res = share.fold(net.bank, 0.5)
    assert res.program == [0] * 5 and res.program_text() == "g1x5"
    _, dev = share.fold_and_execute(net, res, np.ones((2, 3)))
    assert dev <= 1e-10


def test_approximate_fold_equals_least_squares_replacement():
    net = shared_net(3)
    x = np.random.default_rng(3).normal(size=(5, 3))
    res = share.reparameterize(net.bank.alpha, [0, 1, 0, 1, 2], net.bank.T)
    folded, dev = share.fold_and_execute(net, res, x)
    replaced = net.with_alpha(res.reconstructed_alpha()).forward(x).data
    assert np.allclose(folded, replaced, rtol=1e-12, atol=1e-13)
    assert dev == pytest.approx(np.max(np.abs(replaced - net.forward(x).data)))


def test_fold_needs_templates():
    net = shared_net()
    with pytest.raises(ValueError):
        share.fold_and_execute(net, share.reparameterize(net.bank.alpha, [0, 1, 2, 3, 4]), np.ones((1, 3)))


# program text

@pytest.mark.parametrize("prog,text", [
    ([0, 1, 0, 1, 2], "[g1 g2]x2 g3"),
    ([0, 0, 0], "g1x3"),
    ([0, 1, 2], "g1 g2 g3"),
    ([], ""),
])
def test_program_text(prog, text):
    assert share.program_to_text(prog) == text
    assert share.program_from_text(text) == prog


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=12))
def test_program_text_round_trip(prog):
    assert share.program_from_text(share.program_to_text(prog)) == prog


# recurrence regularizer

def regression(seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(8, 3)), rng.normal(size=(8, 2))


def test_zero_lambda_is_plain_loss():
    net = shared_net()
    x, y = regression()
    assert float(share.recurrence_regularized_loss(net, 0.0, x, y).data) == float(net.loss(x, y).data)
    with pytest.raises(ValueError):
        share.recurrence_regularized_loss(net, -1.0, x, y)


def test_regularized_loss_gradients():
    net = shared_net(5)
    x, y = regression(5)
    f = lambda: share.recurrence_regularized_loss(net, 0.1, x, y)
    _, g = ad.value_and_grad(f, net.parameters())
    fd = finite_diff_grad(lambda: float(f().data), net.parameters(), 1e-5)
    assert max_relative_error(g, fd) <= 1e-4


def test_regularizer_increases_similarity():
    net = shared_net(6)
    x, y = regression(6)
    before = share.mean_offdiagonal(share.compute_lsm(net.bank.alpha))
    for _ in range(500):
        _, (ga,) = ad.value_and_grad(lambda: share.recurrence_regularized_loss(net, 1.0, x, y), [net.bank.alpha])
        net.bank.alpha.data = net.bank.alpha.data - 0.01 * ga
    after = share.mean_offdiagonal(share.compute_lsm(net.bank.alpha))
    assert after > before
