import json
import math

import numpy as np
import pytest
from scipy.special import log_softmax

import oracles
from phonekit.ctc import (
    CharVocabulary,
    LogPosteriorGrid,
    LossConfig,
    TargetSequence,
    cross_entropy_teacher_forced,
    ctc_forward,
    ctc_loss,
    dump_lattice,
    extended_labels,
    hierarchical_targets,
    inter_ctc_loss,
    joint_loss,
    project_posteriors,
    self_condition,
    self_condition_backward,
    softmax_backward,
)
from phonekit.errors import ConfigError, NumericalError


def random_grid(rng, T, V):
    return LogPosteriorGrid(log_softmax(rng.standard_normal((T, V + 1)), axis=1))


def test_single_frame_single_label():
    grid = LogPosteriorGrid(np.log([[0.5, 0.5]]))
    assert ctc_loss(grid, TargetSequence((1,))) == pytest.approx(math.log(2.0))


def test_two_frames_three_paths():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(3), size=2)  # columns: blank, a, b
    grid = LogPosteriorGrid(np.log(p))
    # paths collapsing to "a": (a,a), (a,blank), (blank,a)
    want = p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1]
    assert ctc_loss(grid, TargetSequence((1,))) == pytest.approx(-math.log(want))


def test_repeat_needs_separating_blank():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(2), size=3)
    grid = LogPosteriorGrid(np.log(p))
    # "aa" in three frames forces the unique path a, blank, a
    want = p[0, 1] * p[1, 0] * p[2, 1]
    assert ctc_loss(grid, TargetSequence((1, 1))) == pytest.approx(-math.log(want))


def test_matches_bruteforce_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(150):
        T = int(rng.integers(1, 6))
        V = int(rng.integers(1, 4))
        N = int(rng.integers(0, 4))
        grid = random_grid(rng, T, V)
        target = TargetSequence(tuple(int(x) for x in rng.integers(1, V + 1, size=N))) if N else TargetSequence(())
        want = oracles.ctc_loss_bruteforce(grid.log_probs.tolist(), target.labels)
        got = ctc_loss(grid, target)
        if math.isinf(want):
            assert math.isinf(got)
        else:
            assert got == pytest.approx(want, abs=1e-9)


def test_occupancy_matches_bruteforce():
    rng = np.random.default_rng(43)
    for _ in range(40):
        T = int(rng.integers(1, 5))
        V = int(rng.integers(1, 3))
        N = int(rng.integers(1, 3))
        grid = random_grid(rng, T, V)
        target = TargetSequence(tuple(int(x) for x in rng.integers(1, V + 1, size=N)))
        res = ctc_forward(grid, target)
        want = oracles.ctc_occupancy_bruteforce(grid.log_probs.tolist(), target.labels)
        assert np.allclose(res.occupancy, want, atol=1e-10)
        if res.feasible:
            # occupancies are per-frame distributions over the vocabulary
            assert np.allclose(res.occupancy.sum(axis=1), 1.0, atol=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(44)
    for _ in range(20):
        T = int(rng.integers(2, 6))
        V = int(rng.integers(1, 4))
        N = int(rng.integers(1, 3))
        target = TargetSequence(tuple(int(x) for x in rng.integers(1, V + 1, size=N)))
        if target.min_frames() > T:
            continue
        logits = rng.standard_normal((T, V + 1))

        def loss_fn(x):
            return ctc_loss(LogPosteriorGrid(log_softmax(x, axis=1)), target)

        res = ctc_forward(LogPosteriorGrid(log_softmax(logits, axis=1)), target)
        numeric = oracles.finite_difference_grad(loss_fn, logits)
        assert oracles.grad_close(res.grad_logits, numeric)
        assert np.allclose(res.grad_logits.sum(axis=1), 0.0, atol=1e-10)


def test_infeasible_target_is_inf_not_crash():
    grid = LogPosteriorGrid(np.log(np.full((2, 3), 1 / 3)))
    res = ctc_forward(grid, TargetSequence((1, 2, 1)))  # needs 3 frames
    assert math.isinf(res.loss) and res.loss > 0
    assert not res.feasible
    assert np.all(res.grad_logits == 0.0)
    assert np.all(res.gamma == 0.0)
    assert not np.isnan(res.log_alpha).any()


def test_empty_target_all_blanks():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(3), size=4)
    grid = LogPosteriorGrid(np.log(p))
    want = -float(np.log(p[:, 0]).sum())
    assert ctc_loss(grid, TargetSequence(())) == pytest.approx(want)


def test_relabeling_symmetry_bit_exact():
    rng = np.random.default_rng(45)
    for _ in range(30):
        T, V = int(rng.integers(1, 7)), 3
        grid = random_grid(rng, T, V)
        n = int(rng.integers(0, 4))
        labels = tuple(int(x) for x in rng.integers(1, V + 1, size=n))
        perm = rng.permutation(V) + 1  # label v -> perm[v-1], blank fixed
        cols = np.concatenate(([0], perm))
        permuted = np.empty_like(grid.log_probs)
        permuted[:, cols] = grid.log_probs
        relabeled = tuple(int(perm[v - 1]) for v in labels)
        a = ctc_loss(grid, TargetSequence(labels))
        b = ctc_loss(LogPosteriorGrid(permuted), TargetSequence(relabeled))
        assert a == b  # bit-identical, not just close


def test_grid_validation():
    with pytest.raises(NumericalError):
        LogPosteriorGrid(np.zeros((2, 3)))  # rows sum to 3, not 1
    bad = np.log(np.full((2, 3), 1 / 3))
    bad[0, 0] = np.nan
    with pytest.raises(NumericalError):
        LogPosteriorGrid(bad)
    with pytest.raises(NumericalError):
        LogPosteriorGrid(np.zeros((3,)))
    with pytest.raises(NumericalError):
        LogPosteriorGrid(np.zeros((2, 1)))


def test_project_posteriors_hand_example():
    # One frame, logits (0, ln 3) -> probabilities (1/4, 3/4).
    hidden = np.ones((1, 1))
    weight = np.array([[0.0], [math.log(3.0)]])
    bias = np.zeros(2)
    grid = project_posteriors(hidden, weight, bias)
    assert grid.log_probs[0, 0] == pytest.approx(math.log(0.25))
    assert grid.log_probs[0, 1] == pytest.approx(math.log(0.75))


def test_target_validation_and_min_frames():
    with pytest.raises(ConfigError):
        TargetSequence((0, 1))
    assert TargetSequence(()).min_frames() == 0
    assert TargetSequence((1, 2, 3)).min_frames() == 3
    assert TargetSequence((1, 1, 2, 2)).min_frames() == 6
    grid = LogPosteriorGrid(np.log(np.full((2, 3), 1 / 3)))
    with pytest.raises(ConfigError):
        ctc_loss(grid, TargetSequence((5,)))
    assert [int(x) for x in extended_labels(TargetSequence((2, 1)))] == [0, 2, 0, 1, 0]


def test_inter_lambda_zero_is_vanilla_bitwise():
    rng = np.random.default_rng(46)
    for _ in range(20):
        grid = random_grid(rng, 4, 2)
        aux = random_grid(rng, 4, 2)
        target = TargetSequence((1, 2))
        # auxiliary target deliberately unreachable: lam=0 must still be clean
        res = inter_ctc_loss(grid, target, [aux], 0.0, [TargetSequence((1, 2, 1, 2))])
        assert res.loss == ctc_loss(grid, target)
        assert res.aux == ()
        assert not math.isnan(res.loss)


def test_inter_weighting_formula():
    rng = np.random.default_rng(47)
    grid = random_grid(rng, 5, 2)
    aux1 = random_grid(rng, 5, 2)
    aux2 = random_grid(rng, 5, 2)
    target = TargetSequence((1, 2))
    lam = 0.3
    res = inter_ctc_loss(grid, target, [aux1, aux2], lam)
    want = ctc_loss(grid, target) + lam * (
        ctc_loss(aux1, target) + ctc_loss(aux2, target)
    ) / 2.0
    assert res.loss == pytest.approx(want, abs=1e-12)
    assert len(res.aux) == 2


def test_inter_rejects_bad_lam():
    rng = np.random.default_rng(3)
    grid = random_grid(rng, 3, 2)
    with pytest.raises(ConfigError):
        inter_ctc_loss(grid, TargetSequence((1,)), [], 1.5)


def test_self_condition_matches_naive_matmul():
    rng = np.random.default_rng(48)
    hidden = rng.standard_normal((4, 3))
    post = rng.dirichlet(np.ones(5), size=4)
    w = rng.standard_normal((3, 5))
    got = self_condition(hidden, post, w)
    want = np.asarray(oracles.matmul_naive(post.tolist(), w.T.tolist())) + hidden
    assert np.allclose(got, want, atol=1e-12)


def test_self_condition_backward_finite_differences():
    rng = np.random.default_rng(49)
    hidden = rng.standard_normal((3, 4))
    post = rng.dirichlet(np.ones(3), size=3)
    w = rng.standard_normal((4, 3))
    probe = rng.standard_normal((3, 4))  # fixed linear functional of the output

    gh, gp, gw = self_condition_backward(probe, post, w)
    num_h = oracles.finite_difference_grad(
        lambda x: float((self_condition(x, post, w) * probe).sum()), hidden
    )
    num_p = oracles.finite_difference_grad(
        lambda x: float((self_condition(hidden, x, w) * probe).sum()), post
    )
    num_w = oracles.finite_difference_grad(
        lambda x: float((self_condition(hidden, post, x) * probe).sum()), w
    )
    assert oracles.grad_close(gh, num_h)
    assert oracles.grad_close(gp, num_p)
    assert oracles.grad_close(gw, num_w)


def test_softmax_backward_finite_differences():
    rng = np.random.default_rng(50)
    logits = rng.standard_normal((4, 5))
    probe = rng.standard_normal((4, 5))

    def fn(x):
        ex = np.exp(x - x.max(axis=1, keepdims=True))
        return float((ex / ex.sum(axis=1, keepdims=True) * probe).sum())

    probs = np.exp(log_softmax(logits, axis=1))
    got = softmax_backward(probe, probs)
    assert oracles.grad_close(got, oracles.finite_difference_grad(fn, logits))


def test_cross_entropy_sum_and_grad():
    rng = np.random.default_rng(51)
    logits = rng.standard_normal((5, 4))
    ids = rng.integers(0, 4, size=5)
    loss, grad = cross_entropy_teacher_forced(logits, ids)
    logp = log_softmax(logits, axis=1)
    assert loss == pytest.approx(-sum(logp[i, ids[i]] for i in range(5)))
    want = np.exp(logp)
    for i in range(5):
        want[i, ids[i]] -= 1.0
    assert np.allclose(grad, want, atol=1e-12)
    numeric = oracles.finite_difference_grad(
        lambda x: cross_entropy_teacher_forced(x, ids)[0], logits
    )
    assert oracles.grad_close(grad, numeric)
    with pytest.raises(ConfigError):
        cross_entropy_teacher_forced(logits, ids[:3])


def test_joint_endpoints_exact():
    assert joint_loss(2.5, 7.0, 1.0) == 2.5
    assert joint_loss(2.5, 7.0, 0.0) == 7.0
    assert joint_loss(math.inf, 7.0, 0.0) == 7.0  # dead branch never touched
    assert joint_loss(2.0, 4.0, 0.25) == pytest.approx(0.25 * 2.0 + 0.75 * 4.0)
    with pytest.raises(ConfigError):
        joint_loss(1.0, 1.0, -0.1)


def test_char_vocabulary_mapping():
    vocab = CharVocabulary({1: 1, 2: 1, 3: 2}, num_chars=2)
    got = hierarchical_targets(TargetSequence((1, 2, 3, 1)), vocab)
    assert got.labels == (1, 1, 2, 1)  # repeats kept, length preserved
    with pytest.raises(ConfigError):
        vocab.map_target(TargetSequence((4,)))
    with pytest.raises(ConfigError):
        CharVocabulary({1: 3}, num_chars=2)


def test_loss_config_validation():
    LossConfig("inter", 0.3, (1, 2))
    with pytest.raises(ConfigError):
        LossConfig("cdc")
    with pytest.raises(ConfigError):
        LossConfig("inter", 1.5)
    with pytest.raises(ConfigError):
        LossConfig("inter", 0.5, (0,))


def test_dump_lattice_json_round_trip():
    grid = LogPosteriorGrid(np.log(np.full((3, 3), 1 / 3)))
    target = TargetSequence((1,))
    blob = json.dumps(dump_lattice(ctc_forward(grid, target), target))
    data = json.loads(blob)
    assert data["feasible"] is True
    assert data["extended_labels"] == [0, 1, 0]
    assert len(data["log_alpha"]) == 3
