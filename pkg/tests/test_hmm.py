import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_monotone_trace
from csphmm.errors import InvalidInputError, NoValidPathError
from csphmm.hmm import (
    EmissionModel,
    HmmModel,
    InitialLaws,
    TopologyMask,
    TrainConfig,
    TransitionTensor,
    expand_to_first_order,
    forward_log_likelihood,
    init_model,
    joint_log_prob,
    lift_order,
    logsumexp,
    normalized_log_likelihood,
    random_model,
    sample_sequence,
    sequence_log_prob,
    train_baum_welch,
    train_order_pipeline,
    viterbi_align,
)
from oracles import (
    brute_force_best_path,
    brute_force_forward,
    scalar_joint_log_prob,
    scalar_path_log_prob,
)


def single_state_model(density_peak_dim=1):
    mask = TopologyMask.circular(1)
    return HmmModel(
        1,
        mask,
        InitialLaws(np.array([1.0])),
        TransitionTensor(1, np.array([[1.0]])),
        # variance 1/(2 pi) makes the density exactly 1 at the mean
        EmissionModel.single_gaussian(
            np.zeros((1, density_peak_dim)), np.full((1, density_peak_dim), 1 / (2 * np.pi))
        ),
    )


# ---------------------------------------------------------------------------
# structure types


def test_circular_mask_allows_self_and_next():
    mask = TopologyMask.circular(6)
    for i in range(6):
        successors = set(np.flatnonzero(mask.allowed[i]))
        assert successors == {i, (i + 1) % 6}


def test_mask_requires_a_successor_per_state():
    with pytest.raises(InvalidInputError):
        TopologyMask(np.array([[True, False], [False, False]]))


@given(st.integers(1, 5), st.integers(1, 3))
def test_uniform_tensor_rows_sum_to_one_under_mask(n, order):
    mask = TopologyMask.circular(n)
    tensor = TransitionTensor.uniform(mask, order)
    tensor.validate(mask)
    sums = tensor.values.sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 5))
def test_random_tensor_respects_mask_and_rows(n, order, seed):
    mask = TopologyMask.circular(n)
    tensor = TransitionTensor.random(mask, order, np.random.default_rng(seed))
    tensor.validate(mask)


def test_transition_tensor_validation_catches_bad_rows():
    mask = TopologyMask.full(2)
    with pytest.raises(InvalidInputError):
        TransitionTensor(1, np.array([[0.5, 0.6], [0.5, 0.5]])).validate(mask)
    circ = TopologyMask.circular(3)
    bad = TransitionTensor.uniform(TopologyMask.full(3), 1)
    with pytest.raises(InvalidInputError):
        bad.validate(circ)


# ---------------------------------------------------------------------------
# sequence_log_prob


def test_single_state_chain_has_probability_one():
    model = single_state_model()
    assert sequence_log_prob(model, np.zeros(7, dtype=int)) == 0.0


def test_order3_uniform_factors_with_deterministic_start():
    mask = TopologyMask.full(2)
    model = HmmModel(
        3,
        mask,
        InitialLaws(
            np.array([1.0, 0.0]),
            TransitionTensor.uniform(mask, 1).values,
            TransitionTensor.uniform(mask, 2).values,
        ),
        TransitionTensor.uniform(mask, 3),
        EmissionModel.single_gaussian(np.zeros((2, 1)), np.ones((2, 1))),
    )
    value = sequence_log_prob(model, np.zeros(5, dtype=int))
    assert value == pytest.approx(4 * math.log(0.5), abs=1e-12)


def test_sequence_log_prob_matches_telescoping_oracle():
    model = random_model(3, 3, feature_dim=2, seed=11)
    rng = np.random.default_rng(5)
    for _ in range(20):
        path = rng.integers(0, 3, size=7)
        expected = scalar_path_log_prob(model, path)
        assert sequence_log_prob(model, path) == pytest.approx(expected, abs=1e-12)


def test_sequence_log_prob_masked_path_is_neg_inf():
    model = random_model(4, 1, feature_dim=1, seed=0)  # circular: 0 -> 2 illegal
    assert sequence_log_prob(model, np.array([0, 2])) == -np.inf


def test_sequence_log_prob_rejects_bad_states():
    model = random_model(2, 1, feature_dim=1, seed=0)
    with pytest.raises(InvalidInputError):
        sequence_log_prob(model, np.array([0, 5]))
    with pytest.raises(InvalidInputError):
        sequence_log_prob(model, np.array([], dtype=int))


# ---------------------------------------------------------------------------
# joint_log_prob


def test_joint_single_state_unit_density():
    model = single_state_model()
    obs = np.zeros((3, 1))  # at the mean, density exactly 1
    assert joint_log_prob(model, np.zeros(3, dtype=int), obs) == pytest.approx(0.0, abs=1e-12)


def test_joint_masked_path_is_neg_inf():
    model = random_model(4, 1, feature_dim=2, seed=1)
    obs = np.random.default_rng(0).normal(0, 1, (2, 2))
    assert joint_log_prob(model, np.array([0, 2]), obs) == -np.inf


def test_joint_matches_scalar_oracle():
    model = random_model(2, 3, feature_dim=3, n_mixtures=2, seed=3)
    rng = np.random.default_rng(7)
    obs = rng.normal(0, 1, (4, 3))
    for path in itertools.product(range(2), repeat=4):
        expected = scalar_joint_log_prob(model, path, obs)
        assert joint_log_prob(model, np.array(path), obs) == pytest.approx(expected, abs=1e-12)


def test_joint_rejects_length_and_dim_mismatch():
    model = random_model(2, 1, feature_dim=2, seed=0)
    with pytest.raises(InvalidInputError):
        joint_log_prob(model, np.array([0, 1]), np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        joint_log_prob(model, np.array([0, 1]), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# forward


def test_forward_single_state_equals_only_path_joint():
    model = single_state_model()
    obs = np.random.default_rng(2).normal(0, 1, (6, 1))
    fwd = forward_log_likelihood(model, obs)
    joint = joint_log_prob(model, np.zeros(6, dtype=int), obs)
    assert fwd == pytest.approx(joint, abs=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("n", [2, 3])
def test_forward_matches_path_enumeration(order, n):
    model = random_model(n, order, feature_dim=2, n_mixtures=2, seed=order * 10 + n)
    obs = np.random.default_rng(order + n).normal(0, 1, (6, 2))
    expected = brute_force_forward(model, obs)
    assert forward_log_likelihood(model, obs) == pytest.approx(expected, abs=1e-9)


def test_forward_handles_sequences_shorter_than_order():
    model = random_model(3, 3, feature_dim=1, seed=4)
    obs = np.random.default_rng(1).normal(0, 1, (2, 1))
    expected = brute_force_forward(model, obs)
    assert forward_log_likelihood(model, obs) == pytest.approx(expected, abs=1e-9)


def test_forward_rejects_empty_and_mismatched():
    model = random_model(2, 1, feature_dim=2, seed=0)
    with pytest.raises(InvalidInputError):
        forward_log_likelihood(model, np.zeros((0, 2)))
    with pytest.raises(InvalidInputError):
        forward_log_likelihood(model, np.zeros((4, 3)))


def test_broadcast_order3_equals_order1_forward():
    base = random_model(3, 1, feature_dim=2, seed=9)
    lifted = lift_order(lift_order(base))
    obs = np.random.default_rng(3).normal(0, 1, (10, 2))
    f1 = forward_log_likelihood(base, obs)
    f3 = forward_log_likelihood(lifted, obs)
    assert f3 == pytest.approx(f1, rel=1e-10)


# ---------------------------------------------------------------------------
# expansion


def test_expansion_structure_order2():
    model = random_model(2, 2, feature_dim=1, topology=TopologyMask.full(2), seed=21)
    expansion = expand_to_first_order(model)
    assert expansion.n_composite_states == 4
    trans = expansion.transition_matrix()
    index = {tuple(row): c for c, row in enumerate(expansion.tuples)}
    for i, j, k in itertools.product(range(2), repeat=3):
        assert trans[index[(i, j)], index[(j, k)]] == pytest.approx(
            model.transitions.values[i, j, k], abs=1e-15
        )
    for (i, j), (jp, k) in itertools.product(index, repeat=2):
        if jp != j:
            assert trans[index[(i, j)], index[(jp, k)]] == 0.0
    pi = expansion.initial_distribution()
    for i, j in index:
        assert pi[index[(i, j)]] == pytest.approx(
            model.initials.psi1[i] * model.initials.startup2[i, j], abs=1e-15
        )


def test_expansion_forward_matches_native_order3():
    model = random_model(2, 3, feature_dim=2, seed=23)
    obs = np.random.default_rng(8).normal(0, 1, (8, 2))
    native = forward_log_likelihood(model, obs)
    expanded = expand_to_first_order(model).forward_log_likelihood(obs)
    assert expanded == pytest.approx(native, rel=1e-10)


def test_expansion_of_deterministic_cycle_is_deterministic():
    n = 3
    mask = TopologyMask.circular(n)
    values = np.zeros((n,) * 3)
    for i, j in itertools.product(range(n), repeat=2):
        values[i, j, (j + 1) % n] = 1.0
    cycle = HmmModel(
        2,
        mask,
        InitialLaws(np.full(n, 1 / n), TransitionTensor.uniform(mask, 1).values),
        TransitionTensor(2, values),
        EmissionModel.single_gaussian(np.zeros((n, 1)), np.ones((n, 1))),
    )
    trans = expand_to_first_order(cycle).transition_matrix()
    # every composite row is a point mass on its unique successor
    np.testing.assert_allclose(trans.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((trans == 0.0) | (trans == 1.0))


def test_expansion_rejects_order1_and_short_sequences():
    with pytest.raises(InvalidInputError):
        expand_to_first_order(random_model(2, 1, feature_dim=1, seed=0))
    expansion = expand_to_first_order(random_model(2, 3, feature_dim=1, seed=0))
    with pytest.raises(InvalidInputError):
        expansion.forward_log_likelihood(np.zeros((2, 1)))


# ---------------------------------------------------------------------------
# viterbi


def test_viterbi_single_state():
    model = single_state_model()
    obs = np.random.default_rng(0).normal(0, 1, (5, 1))
    alignment = viterbi_align(model, obs)
    assert np.array_equal(alignment.state_path, np.zeros(5, dtype=int))


@pytest.mark.parametrize("order", [1, 2, 3])
def test_viterbi_matches_enumerated_argmax(order):
    model = random_model(3, order, feature_dim=2, seed=order + 40)
    obs = np.random.default_rng(order).normal(0, 1, (5, 2))
    best_path, best = brute_force_best_path(model, obs)
    alignment = viterbi_align(model, obs)
    assert tuple(alignment.state_path) == best_path
    assert alignment.log_prob == pytest.approx(best, abs=1e-9)


def test_viterbi_follows_dominant_emissions():
    n = 3
    mask = TopologyMask.full(n)
    means = np.array([[0.0], [10.0], [20.0]])
    model = HmmModel(
        1,
        mask,
        InitialLaws(np.full(n, 1 / n)),
        TransitionTensor.uniform(mask, 1),
        EmissionModel.single_gaussian(means, np.full((n, 1), 0.01)),
    )
    target = np.array([0, 1, 2, 1, 0])
    obs = means[target] + 0.001
    alignment = viterbi_align(model, obs)
    assert np.array_equal(alignment.state_path, target)


def test_viterbi_log_prob_never_exceeds_forward():
    for seed in range(5):
        model = random_model(3, 2, feature_dim=2, seed=seed)
        obs = np.random.default_rng(seed).normal(0, 1, (7, 2))
        alignment = viterbi_align(model, obs)
        assert alignment.log_prob <= forward_log_likelihood(model, obs) + 1e-12


def test_viterbi_raises_when_no_path_has_mass():
    # structurally valid models always have a positive path, so build a
    # degenerate one by hand: all start mass on a dead-end state
    mask = TopologyMask.circular(2)
    model = HmmModel(
        1,
        mask,
        InitialLaws(np.array([1.0, 0.0])),
        TransitionTensor(1, np.array([[0.0, 0.0], [0.0, 1.0]])),
        EmissionModel.single_gaussian(np.zeros((2, 1)), np.ones((2, 1))),
    )
    with pytest.raises(NoValidPathError):
        viterbi_align(model, np.zeros((3, 1)))


# ---------------------------------------------------------------------------
# lift


def test_lift_uniform_stays_uniform():
    mask = TopologyMask.circular(4)
    model = HmmModel(
        2,
        mask,
        InitialLaws.uniform(mask, 2),
        TransitionTensor.uniform(mask, 2),
        EmissionModel.single_gaussian(np.zeros((4, 1)), np.ones((4, 1))),
    )
    lifted = lift_order(model)
    expected = TransitionTensor.uniform(mask, 3).values
    np.testing.assert_allclose(lifted.transitions.values, expected, atol=1e-15)


@given(st.integers(2, 4), st.integers(1, 2), st.integers(0, 3))
@settings(max_examples=20)
def test_lift_preserves_row_sums(n, order, seed):
    model = random_model(n, order, feature_dim=1, seed=seed)
    lifted = lift_order(model)
    sums = lifted.transitions.values.sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


def test_lift_preserves_forward_likelihood():
    rng = np.random.default_rng(0)
    for seed in range(6):
        order = 1 + seed % 2
        model = random_model(3, order, feature_dim=2, seed=seed)
        lifted = lift_order(model)
        obs = rng.normal(0, 1, (10, 2))
        assert forward_log_likelihood(lifted, obs) == pytest.approx(
            forward_log_likelihood(model, obs), rel=1e-10
        )


def test_lift_rejects_order3():
    with pytest.raises(InvalidInputError):
        lift_order(random_model(2, 3, feature_dim=1, seed=0))


# ---------------------------------------------------------------------------
# sampling


def test_sample_deterministic_cycle_path():
    n = 4
    mask = TopologyMask.circular(n)
    values = np.zeros((n, n))
    for i in range(n):
        values[i, (i + 1) % n] = 1.0
    model = HmmModel(
        1,
        mask,
        InitialLaws(np.array([1.0, 0, 0, 0])),
        TransitionTensor(1, values),
        EmissionModel.single_gaussian(np.zeros((n, 1)), np.ones((n, 1))),
    )
    path, _ = sample_sequence(model, 9, seed=0)
    assert np.array_equal(path, np.arange(9) % n)


def test_sample_same_seed_identical():
    model = random_model(3, 2, feature_dim=2, n_mixtures=2, seed=0)
    p1, s1 = sample_sequence(model, 20, seed=123)
    p2, s2 = sample_sequence(model, 20, seed=123)
    assert np.array_equal(p1, p2)
    assert np.array_equal(s1.vectors, s2.vectors)


def test_sampled_transition_frequencies_match_probabilities():
    # binomial bound: with ~50k visits per state and p in [0.3, 0.7],
    # sd(p_hat) <= sqrt(0.25/50000) ~ 0.0022, so 0.01 is > 4 sigma.
    mask = TopologyMask.full(2)
    a = np.array([[0.7, 0.3], [0.4, 0.6]])
    model = HmmModel(
        1,
        mask,
        InitialLaws(np.array([0.5, 0.5])),
        TransitionTensor(1, a),
        EmissionModel.single_gaussian(np.zeros((2, 1)), np.ones((2, 1))),
    )
    path, _ = sample_sequence(model, 100_000, seed=7)
    counts = np.zeros((2, 2))
    np.add.at(counts, (path[:-1], path[1:]), 1.0)
    freq = counts / counts.sum(axis=1, keepdims=True)
    assert np.max(np.abs(freq - a)) <= 0.01


# ---------------------------------------------------------------------------
# normalized log-likelihood


def test_normalized_t1_equals_single_frame_marginal():
    model = random_model(3, 3, feature_dim=2, seed=1)
    obs = np.random.default_rng(0).normal(0, 1, (1, 2))
    assert normalized_log_likelihood(model, obs) == pytest.approx(
        forward_log_likelihood(model, obs), abs=1e-12
    )


def test_normalized_invariant_under_doubling_single_state():
    model = single_state_model(density_peak_dim=2)
    obs = np.random.default_rng(4).normal(0, 1, (6, 2))
    doubled = np.vstack([obs, obs])
    a = normalized_log_likelihood(model, obs)
    b = normalized_log_likelihood(model, doubled)
    assert b == pytest.approx(a, rel=1e-12)


def test_normalized_is_forward_over_t():
    model = random_model(2, 2, feature_dim=2, seed=6)
    obs = np.random.default_rng(5).normal(0, 1, (9, 2))
    assert normalized_log_likelihood(model, obs) == pytest.approx(
        forward_log_likelihood(model, obs) / 9.0, abs=1e-12
    )


# ---------------------------------------------------------------------------
# training


def data_from(model, n_seqs, length, seed):
    rng = np.random.default_rng(seed)
    return [sample_sequence(model, length, rng)[1] for _ in range(n_seqs)]


def test_train_zero_iterations_returns_model_unchanged():
    gen = random_model(2, 1, feature_dim=1, seed=0)
    data = data_from(gen, 3, 10, seed=1)
    model = init_model(data, 2, order=1, n_mixtures=1, seed=0)
    trained, trace = train_baum_welch(model, data, TrainConfig(max_iters=0))
    assert trace == []
    assert np.array_equal(trained.transitions.values, model.transitions.values)
    assert np.array_equal(trained.initials.psi1, model.initials.psi1)
    assert np.array_equal(trained.emissions.means, model.emissions.means)
    assert np.array_equal(trained.emissions.variances, model.emissions.variances)
    assert np.array_equal(trained.emissions.weights, model.emissions.weights)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_training_trace_is_monotone_and_invariants_hold(order):
    gen = random_model(3, order, feature_dim=2, n_mixtures=1, seed=order)
    data = data_from(gen, 8, 20, seed=order + 1)
    model = init_model(data, 3, order=1, n_mixtures=2, seed=0)
    for _ in range(order - 1):
        model = lift_order(model)
    trained, trace = train_baum_welch(model, data, TrainConfig(max_iters=6, rel_tol=0.0))
    assert len(trace) == 6
    assert_monotone_trace(trace)
    trained.validate()


def test_invariants_hold_after_every_iteration():
    gen = random_model(3, 2, feature_dim=2, n_mixtures=1, seed=5)
    data = data_from(gen, 6, 15, seed=6)
    model = init_model(data, 3, order=1, n_mixtures=2, seed=0)
    model = lift_order(model)
    blocked = ~model.topology.allowed
    traces = []
    for _ in range(5):
        model, trace = train_baum_welch(model, data, TrainConfig(max_iters=1, rel_tol=0.0))
        traces.extend(trace)
        model.validate()
        view = model.transitions.values.reshape(-1, 3, 3)
        assert np.all(view[:, blocked] == 0.0)
    assert_monotone_trace(traces)


def test_training_recovers_generating_transitions():
    # tolerance 0.1 was validated against the sampling error of this exact
    # setup (200 sequences x 50 frames => ~0.008 observed) before freezing
    gen = HmmModel(
        1,
        TopologyMask.full(2),
        InitialLaws(np.array([0.6, 0.4])),
        TransitionTensor(1, np.array([[0.8, 0.2], [0.3, 0.7]])),
        EmissionModel.single_gaussian(np.array([[0.0], [4.0]]), np.ones((2, 1))),
    )
    data = data_from(gen, 200, 50, seed=42)
    model = init_model(data, 2, order=1, n_mixtures=1, topology=TopologyMask.full(2), seed=1)
    trained, trace = train_baum_welch(model, data, TrainConfig(max_iters=30, rel_tol=1e-7))
    assert_monotone_trace(trace)
    best = min(
        np.max(np.abs(trained.transitions.values[np.ix_(p, p)] - gen.transitions.values))
        for p in itertools.permutations(range(2))
    )
    assert best < 0.1


def test_training_accepts_short_sequences():
    gen = random_model(2, 1, feature_dim=1, seed=0)
    data = [s.vectors[:1] for s in data_from(gen, 3, 5, seed=2)]
    model = init_model(data, 2, order=1, n_mixtures=1, seed=0)
    trained, trace = train_baum_welch(model, data, TrainConfig(max_iters=3, rel_tol=0.0))
    assert_monotone_trace(trace)
    trained.validate()


def test_training_rejects_bad_data():
    gen = random_model(2, 1, feature_dim=2, seed=0)
    data = data_from(gen, 2, 8, seed=3)
    model = init_model(data, 2, order=1, n_mixtures=1, seed=0)
    with pytest.raises(InvalidInputError):
        train_baum_welch(model, [], TrainConfig())
    with pytest.raises(InvalidInputError):
        train_baum_welch(model, [np.zeros((4, 3))], TrainConfig())


def test_order_pipeline_reaches_requested_order():
    gen = random_model(3, 3, feature_dim=2, n_mixtures=1, seed=8)
    data = data_from(gen, 6, 18, seed=9)
    model, traces = train_order_pipeline(
        data, 3, max_order=3, n_mixtures=2, config=TrainConfig(max_iters=4), seed=0
    )
    assert model.order == 3
    assert sorted(traces) == [1, 2, 3]
    for trace in traces.values():
        assert_monotone_trace(trace)
    model.validate()


def test_masked_transitions_stay_zero_through_training():
    gen = random_model(4, 2, feature_dim=2, n_mixtures=1, seed=10)
    data = data_from(gen, 6, 20, seed=11)
    model, _ = train_order_pipeline(
        data, 4, max_order=2, n_mixtures=1, config=TrainConfig(max_iters=5), seed=0
    )
    blocked = ~model.topology.allowed
    view = model.transitions.values.reshape(-1, 4, 4)
    assert np.all(view[:, blocked] == 0.0)


# ---------------------------------------------------------------------------
# logsumexp corner cases


def test_logsumexp_handles_all_neg_inf():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    out = logsumexp(np.full((2, 2), -np.inf), axis=0)
    assert np.all(np.isneginf(out))


def test_logsumexp_matches_direct_computation():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 10, (4, 5))
    expected = np.log(np.exp(x).sum(axis=1))
    np.testing.assert_allclose(logsumexp(x, axis=1), expected, atol=1e-12)
