import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import finite_difference_error, random_micro_batch
from workrank.contrastive import (BatchSimilarityMatrix, LossConfig, LossError, LossWeights, batch_loss, infonce,
                                  infonce_grad, loss_gradients, mtm_asymmetric, mtm_asymmetric_grad, mtm_pairwise,
                                  mtm_pairwise_grad, mtm_symmetric, mtm_symmetric_grad, mtm_total)
from workrank.encoder import EncoderParams
from workrank.interaction import InteractionConfig
from workrank.sampler import GraphBatch, MiniBatch

E = math.e
ONE_POS = math.log(1 + 1 / E)  # 0.3133
ONE_NEG = math.log(1 + E)      # 1.3133


def bsm(values, positives, tau=1.0):
    return BatchSimilarityMatrix(np.asarray(values, float), tau, np.asarray(positives, bool))


def diag(values, tau=1.0):
    v = np.asarray(values, float)
    return bsm(v, np.eye(len(v)), tau)


# --- closed forms -----------------------------------------------------------


def test_infonce_single_pair_is_zero():
    assert infonce(diag([[0.7]])) == 0.0


def test_infonce_two_by_two():
    assert infonce(diag([[1, 0], [0, 1]])) == pytest.approx(ONE_POS, abs=1e-12)
    assert ONE_POS == pytest.approx(0.3133, abs=1e-4)


def test_asymmetric_multi_positive_closed_form():
    b = bsm([[1, 0]], [[1, 1]])
    assert mtm_asymmetric(b) == pytest.approx(0.5 * (ONE_POS + ONE_NEG), abs=1e-12)
    assert mtm_asymmetric(b) == pytest.approx(0.8133, abs=1e-4)


def test_symmetric_one_query_reverse_term_vanishes():
    # Q = {q1}, Y = {y1, y2}: each target has a single candidate query, so the
    # reverse direction is -log 1 = 0 and the total equals the forward term.
    b = bsm([[1, 0]], [[1, 1]])
    assert mtm_asymmetric(b.transposed()) == 0.0
    assert mtm_symmetric(b) == pytest.approx(0.8133, abs=1e-4)


def test_symmetric_two_way_multi_positive():
    # every node sees sims (1, 0) to its two positives, in both directions
    m = bsm([[1, 0], [0, 1]], [[1, 1], [1, 1]])
    assert mtm_asymmetric(m) == pytest.approx(0.5 * (ONE_POS + ONE_NEG), abs=1e-12)
    assert mtm_asymmetric(m.transposed()) == pytest.approx(0.5 * (ONE_POS + ONE_NEG), abs=1e-12)
    assert mtm_symmetric(m) == pytest.approx(1.6266, abs=1e-4)


def test_infonce_row_shift_invariance():
    v = np.random.default_rng(0).normal(size=(4, 4))
    shifted = v.copy()
    shifted[2] += 3.7
    assert infonce(diag(shifted)) == pytest.approx(infonce(diag(v)), abs=1e-12)


def test_asymmetric_reduces_to_infonce_on_diagonal():
    v = np.random.default_rng(1).normal(size=(5, 5))
    assert mtm_asymmetric(diag(v)) == pytest.approx(infonce(diag(v)), abs=1e-12)


def test_duplicate_query_row_keeps_loss():
    v = np.array([[1.0, 0.2, -0.3], [0.1, 0.9, 0.4]])
    pos = np.array([[1, 0, 1], [0, 1, 0]], bool)
    dup = bsm(np.vstack([v, v[:1]]), np.vstack([pos, pos[:1]]))
    base = bsm(v, pos)
    # mean over queries: duplicating q1 reweights, so compare against the hand-weighted mean
    rows = [mtm_asymmetric(bsm(v[[i]], pos[[i]])) for i in range(2)]
    assert mtm_asymmetric(base) == pytest.approx(np.mean(rows), abs=1e-12)
    assert mtm_asymmetric(dup) == pytest.approx((2 * rows[0] + rows[1]) / 3, abs=1e-12)
    same = bsm(np.vstack([v[:1], v[:1]]), np.vstack([pos[:1], pos[:1]]))
    assert mtm_asymmetric(same) == pytest.approx(rows[0], abs=1e-12)


def test_symmetric_of_symmetric_matrix_is_twice_asymmetric():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 4))
    v = a + a.T
    pos = np.eye(4, dtype=bool) | np.eye(4, k=1, dtype=bool) | np.eye(4, k=-1, dtype=bool)
    b = bsm(v, pos)
    assert mtm_symmetric(b) == pytest.approx(2 * mtm_asymmetric(b), abs=1e-12)


def test_pairwise_two_positive_fixture():
    # one query, two positives with sims (1, 0): each edge is its own pair and
    # the other positive sits in the denominator; reverse direction is a
    # one-candidate softmax per target (0).
    b = bsm([[1, 0]], [[1, 1]])
    assert mtm_pairwise(b) == pytest.approx(0.5 * (ONE_POS + ONE_NEG), abs=1e-12)
    # 2 x 2 with q1 -> {y1, y2}, q2 -> {y2}
    v = np.array([[1.0, 0.0], [0.5, 2.0]])
    pos = np.array([[1, 1], [0, 1]], bool)

    def nll(logits, k):
        return -logits[k] + math.log(sum(math.exp(x) for x in logits))

    edges = [(0, 0), (0, 1), (1, 1)]
    want = sum(nll(v[i], j) + nll(v[:, j], i) for i, j in edges) / 3
    assert mtm_pairwise(bsm(v, pos)) == pytest.approx(want, abs=1e-12)


def test_pairwise_edge_order_invariance():
    v = np.random.default_rng(3).normal(size=(3, 3))
    e1 = [(0, 0), (1, 2), (2, 1), (0, 2)]
    a = BatchSimilarityMatrix.from_edges(v, 0.5, e1)
    b = BatchSimilarityMatrix.from_edges(v, 0.5, list(reversed(e1)))
    assert mtm_pairwise(a) == mtm_pairwise(b)


def test_total_projection_linearity_and_defaults():
    rng = np.random.default_rng(4)
    per = {g: diag(rng.normal(size=(3, 3))) for g in ("job", "vacancy", "alternative")}
    a, b, c = (mtm_symmetric(per[g]) for g in ("job", "vacancy", "alternative"))
    assert mtm_total(per, LossWeights(1, 0, 0)) == pytest.approx(a, abs=1e-12)
    assert mtm_total(per, LossWeights(2, 1, 1)) == pytest.approx(2 * mtm_total(per), abs=1e-12)
    assert mtm_total(per) == pytest.approx(a + 0.5 * b + 0.5 * c, abs=1e-12)


# --- errors -----------------------------------------------------------------


def test_errors():
    with pytest.raises(LossError):
        infonce(bsm(np.zeros((2, 3)), np.zeros((2, 3))))
    with pytest.raises(LossError):
        BatchSimilarityMatrix(np.zeros((2, 2)), 0.0, np.eye(2))
    with pytest.raises(LossError, match="rows without"):
        mtm_asymmetric(bsm(np.zeros((2, 2)), [[1, 0], [0, 0]]))
    with pytest.raises(LossError):
        mtm_symmetric(bsm(np.zeros((2, 2)), [[1, 1], [0, 0]]))
    with pytest.raises(LossError, match="empty edge"):
        mtm_pairwise(bsm(np.zeros((2, 2)), np.zeros((2, 2))))
    with pytest.raises(LossError):
        LossWeights(0, 0, 0)
    with pytest.raises(LossError, match="maxsim"):
        LossConfig(interaction=InteractionConfig("maxsim"))


# --- properties -------------------------------------------------------------


@st.composite
def batches(draw, square=False):
    n_q = draw(st.integers(1, 5))
    n_y = n_q if square else draw(st.integers(1, 5))
    v = draw(arrays(np.float64, (n_q, n_y), elements=st.floats(-2, 2, allow_nan=False)))
    pos = draw(arrays(np.bool_, (n_q, n_y)))
    for i in range(n_q):
        pos[i, i % n_y] = True
    for j in range(n_y):
        pos[j % n_q, j] = True
    tau = draw(st.sampled_from([0.05, 0.2, 1.0]))
    return bsm(v, pos, tau)


@settings(max_examples=100, deadline=None)
@given(batches(), st.randoms(use_true_random=False))
def test_permutation_invariance(b, rnd):
    pr, pc = list(range(b.values.shape[0])), list(range(b.values.shape[1]))
    rnd.shuffle(pr)
    rnd.shuffle(pc)
    p = bsm(b.values[np.ix_(pr, pc)], b.positives[np.ix_(pr, pc)], b.tau)
    for fn in (mtm_asymmetric, mtm_symmetric, mtm_pairwise):
        assert fn(p) == pytest.approx(fn(b), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(batches(square=True))
def test_infonce_permutation_invariance(b):
    n = b.values.shape[0]
    perm = np.roll(np.arange(n), 1)
    assert infonce(diag(b.values[np.ix_(perm, perm)], b.tau)) == pytest.approx(infonce(diag(b.values, b.tau)),
                                                                               rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(batches())
def test_transpose_symmetry_and_positivity(b):
    assert mtm_symmetric(b) == pytest.approx(mtm_symmetric(b.transposed()), abs=1e-12)
    for fn in (mtm_asymmetric, mtm_symmetric, mtm_pairwise):
        assert fn(b) >= 0


@settings(max_examples=100, deadline=None)
@given(batches(square=True))
def test_reduction_chain_on_diagonal(b):
    d = diag(b.values, b.tau)
    assert mtm_asymmetric(d) == pytest.approx(infonce(d), abs=1e-9)
    assert mtm_symmetric(d) == pytest.approx(mtm_pairwise(d), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(batches(square=True), st.floats(0.01, 1.0), st.data())
def test_raising_a_positive_never_increases_loss_one_to_one(b, delta, data):
    # holds for one positive per node; with several positives averaged outside
    # the log, pushing an already dominant positive can raise the loss
    n = b.values.shape[0]
    perm = data.draw(st.permutations(range(n)))
    pos = np.zeros((n, n), bool)
    pos[np.arange(n), perm] = True
    i = data.draw(st.integers(0, n - 1))
    base = bsm(b.values, pos, b.tau)
    up = b.values.copy()
    up[i, perm[i]] += delta
    raised = bsm(up, pos, b.tau)
    for fn in (mtm_asymmetric, mtm_symmetric, mtm_pairwise):
        assert fn(raised) <= fn(base) + 1e-12
    d = b.values.copy()
    d[i, i] += delta
    assert infonce(diag(d, b.tau)) <= infonce(diag(b.values, b.tau)) + 1e-12


def test_multi_positive_monotonicity_counterexample():
    # two positives, the first already dominant: raising it moves mass away from the second
    b = bsm([[3.0, 0.0, -5.0]], [[1, 1, 0]])
    up = bsm([[3.5, 0.0, -5.0]], [[1, 1, 0]])
    assert mtm_asymmetric(up) > mtm_asymmetric(b)


@pytest.mark.parametrize("grad_fn", [mtm_asymmetric_grad, mtm_symmetric_grad, mtm_pairwise_grad, infonce_grad])
def test_matrix_gradients_by_central_differences(grad_fn):
    rng = np.random.default_rng(5)
    v = rng.normal(size=(4, 4))
    pos = np.eye(4, dtype=bool) | (rng.random((4, 4)) < 0.4)
    loss, g = grad_fn(bsm(v, pos, 0.3))
    num = np.zeros_like(v)
    for idx in np.ndindex(v.shape):
        up, dn = v.copy(), v.copy()
        up[idx] += 1e-6
        dn[idx] -= 1e-6
        num[idx] = (grad_fn(bsm(up, pos, 0.3))[0] - grad_fn(bsm(dn, pos, 0.3))[0]) / 2e-6
    assert np.allclose(g, num, atol=1e-7)


# --- end-to-end gradients ---------------------------------------------------


def one_pair_batch():
    gb = GraphBatch(("j",), ("data scientist",), np.ones((1, 1), bool))
    return MiniBatch(("s",), ("statistics",), {"job": gb})


def test_single_pair_infonce_gradients_are_zero():
    p = EncoderParams(np.random.default_rng(0).normal(size=(64, 8)))
    cfg = LossConfig("infonce", InteractionConfig("softmax_token"), LossWeights(1, 0, 0))
    grads = loss_gradients(p, one_pair_batch(), cfg)
    assert not np.any(grads["table"])


def test_seed0_micro_batch_matches_finite_differences():
    params, batch = random_micro_batch(0, h=8)
    assert finite_difference_error(params, batch, LossConfig()) < 1e-4


def test_gradient_linear_in_weights():
    params, batch = random_micro_batch(1, h=4)
    w1 = LossWeights(1.0, 0.0, 0.0)
    w3 = LossWeights(3.0, 0.0, 0.0)
    g1 = loss_gradients(params, batch, LossConfig(weights=w1))
    g3 = loss_gradients(params, batch, LossConfig(weights=w3))
    for k in g1:
        assert np.allclose(g3[k], 3 * g1[k], rtol=1e-12, atol=1e-15)
    ga = loss_gradients(params, batch, LossConfig(weights=LossWeights(0, 1, 0)))
    gb = loss_gradients(params, batch, LossConfig(weights=LossWeights(0, 0, 1)))
    gall = loss_gradients(params, batch, LossConfig(weights=LossWeights(1, 1, 1)))
    for k in g1:
        assert np.allclose(gall[k], g1[k] + ga[k] + gb[k], atol=1e-12)


def test_disabled_graph_texts_get_no_gradient():
    params, batch = random_micro_batch(2, h=4, vocab=4096, projection=False)
    # give the vacancy graph a word nobody else uses
    gb = batch.graphs["vacancy"]
    texts = ("zzuniqueword",) + gb.target_texts[1:]
    graphs = dict(batch.graphs, vacancy=GraphBatch(gb.target_ids, texts, gb.positives))
    batch = MiniBatch(batch.skill_ids, batch.skill_texts, graphs)
    from workrank.encoder import tokenize
    row = tokenize("zzuniqueword", vocab_size=params.vocab_size).tokens[0]
    g = loss_gradients(params, batch, LossConfig(weights=LossWeights(1, 0, 1)))
    assert not np.any(g["table"][row])
    g = loss_gradients(params, batch, LossConfig(weights=LossWeights(1, 1, 1)))
    assert np.any(g["table"][row])


def test_batch_loss_deterministic():
    params, batch = random_micro_batch(3)
    a = batch_loss(params, batch, LossConfig())
    b = batch_loss(params, batch, LossConfig())
    assert a.total == b.total
    for k in a.grads:
        assert np.array_equal(a.grads[k], b.grads[k])
