"""Core model: invariant encodings, incremental state, the O(NK) sampler."""

import math

import numpy as np
import pytest

from ncp.errors import ConfigError
from ncp.genmodel import Assignment, Dataset, GenConfig, enumerate_assignments, sample_dataset
from ncp.model import (
    NcpModel,
    assign_point,
    build_model,
    conditional_probs,
    encode_points,
    init_state,
    log_prob_of,
    recompute_state,
    sample_assignment,
    sample_many,
    start_step,
)
from ncp.nets import MlpSpec, mlp_forward
from ncp.rng import stream


@pytest.fixture(scope="module")
def tiny_model():
    return build_model(2, 6, 8, (8,), (8,), (10,), stream(100, "m"))


@pytest.fixture(scope="module")
def tiny_data():
    cfg = GenConfig(alpha=0.7, sigma_mu=10.0, sigma_x=1.0, dim_x=2, n_min=7, n_max=7)
    return sample_dataset(cfg, stream(101, "d"))


def constant_scorer_model(point_dim=1):
    # zero scorer weights force equal logits, i.e. uniform candidate choice
    model = build_model(point_dim, 3, 4, (4,), (4,), (4,), stream(7, "const"))
    for w in model.scorer.weights:
        w[:] = 0.0
    for b in model.scorer.biases:
        b[:] = 0.0
    return model


def test_model_dim_validation():
    enc = build_model(2, 6, 8, (8,), (8,), (10,), stream(0, "v"))
    with pytest.raises(ConfigError):
        NcpModel(
            enc.encoder_spec,
            enc.cluster_spec,
            MlpSpec(5, (10,), 1),  # wrong scorer input width
            enc.encoder,
            enc.cluster,
            enc.scorer,
        )


def test_encode_points_rows_and_duplicates(tiny_model):
    pts = np.array([[0.5, -1.0], [0.5, -1.0], [2.0, 0.3]])
    enc = encode_points(tiny_model, pts)
    assert enc.shape == (3, tiny_model.enc_dim)
    assert np.array_equal(enc[0], enc[1])
    direct, _ = mlp_forward(tiny_model.encoder, tiny_model.encoder_spec, pts)
    assert np.array_equal(enc, direct)


def test_encode_points_empty(tiny_model):
    enc = encode_points(tiny_model, np.zeros((0, 2)))
    assert enc.shape == (0, tiny_model.enc_dim)


def test_init_state_fields(tiny_model):
    pts = np.array([[0.1, 0.2], [1.0, -0.5]])
    enc = encode_points(tiny_model, pts)
    state = init_state(tiny_model, enc)
    assert state.labels.tolist() == [1, 0]
    assert np.array_equal(state.cluster_sums[0], enc[0])
    assert np.array_equal(state.unassigned_sum, enc[1])
    code, _ = mlp_forward(tiny_model.cluster, tiny_model.cluster_spec, enc[:1])
    assert np.array_equal(state.pooled, code[0])

    single = init_state(tiny_model, enc[:1])
    assert np.all(single.unassigned_sum == 0.0)


def test_conditional_probs_normalized_and_pure(tiny_model, tiny_data):
    state = recompute_state(tiny_model, tiny_data, tiny_data.true_assignment.as_array()[:4])
    start_step(state, 5)
    pooled_before = state.pooled.copy()
    probs = conditional_probs(tiny_model, state, 5)
    assert probs.size == state.n_clusters + 1
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all(probs >= 0)
    assert np.array_equal(state.pooled, pooled_before)


def test_conditional_probs_requires_removal(tiny_model, tiny_data):
    state = recompute_state(tiny_model, tiny_data, tiny_data.true_assignment.as_array()[:4])
    with pytest.raises(ConfigError):
        conditional_probs(tiny_model, state, 5)


def test_relabel_equivariance_swap_is_bit_exact(tiny_model):
    # swapping the first two cluster rows permutes the first two outputs
    # bit-exactly: float addition is commutative, so the two-term pooled sum
    # is literally identical
    pts = np.array([[0.0, 0.0], [4.0, 4.0], [0.2, -0.1], [4.2, 3.9], [1.9, 2.1]])
    enc = encode_points(tiny_model, pts)
    state = recompute_state(tiny_model, pts, np.array([1, 2, 1, 2]))
    start_step(state, 5)
    probs = conditional_probs(tiny_model, state, 5)

    state2 = recompute_state(tiny_model, pts, np.array([1, 2, 1, 2]))
    state2.cluster_sums = state2.cluster_sums[[1, 0]]
    state2.cluster_codes = state2.cluster_codes[[1, 0]]
    start_step(state2, 5)
    probs2 = conditional_probs(tiny_model, state2, 5)
    assert np.array_equal(probs[[1, 0, 2]], probs2)
    del enc


def test_relabel_equivariance_general_permutation(tiny_model):
    pts = np.array(
        [[0.0, 0.0], [4.0, 4.0], [-3.0, 2.0], [0.2, -0.1], [4.2, 3.9], [-2.9, 2.2], [1.0, 1.0]]
    )
    state = recompute_state(tiny_model, pts, np.array([1, 2, 3, 1, 2, 3]))
    start_step(state, 7)
    probs = conditional_probs(tiny_model, state, 7)
    perm = [2, 0, 1]  # new order of cluster rows
    state2 = recompute_state(tiny_model, pts, np.array([1, 2, 3, 1, 2, 3]))
    state2.cluster_sums = state2.cluster_sums[perm]
    state2.cluster_codes = state2.cluster_codes[perm]
    state2.pooled = state2.cluster_codes.sum(axis=0)
    start_step(state2, 7)
    probs2 = conditional_probs(tiny_model, state2, 7)
    # float summation order in the pool differs, so equality is near-exact
    assert np.abs(probs[perm + [3]] - probs2).max() < 1e-12


def test_within_cluster_permutation_same_sums_identical_output(tiny_model):
    # same membership sets => identical sums (ascending point order) => bit-identical
    pts = np.array([[0.3, 0.1], [2.0, 2.0], [0.4, 0.0], [2.1, 1.9], [1.0, 1.0]])
    a = recompute_state(tiny_model, pts, np.array([1, 2, 1, 2]))
    swapped_pts = pts[[2, 1, 0, 3, 4]]  # swap the two members of cluster 1
    b = recompute_state(tiny_model, swapped_pts, np.array([1, 2, 1, 2]))
    assert np.array_equal(a.cluster_sums, b.cluster_sums)
    start_step(a, 5)
    start_step(b, 5)
    pa = conditional_probs(tiny_model, a, 5)
    pb = conditional_probs(tiny_model, b, 5)
    assert np.array_equal(pa, pb)


def test_assign_point_new_cluster_and_sums(tiny_model, tiny_data):
    enc = encode_points(tiny_model, tiny_data.points)
    state = init_state(tiny_model, enc)
    for pos in range(2, tiny_data.n + 1):
        start_step(state, pos)
        conditional_probs(tiny_model, state, pos)
        assign_point(tiny_model, state, pos, 1)
    assert state.n_clusters == 1
    assert np.abs(state.cluster_sums[0] - enc.sum(axis=0)).max() < 1e-10

    state = init_state(tiny_model, enc)
    start_step(state, 2)
    k_before = state.n_clusters
    assign_point(tiny_model, state, 2, k_before + 1)
    assert state.n_clusters == k_before + 1

    with pytest.raises(ConfigError):
        start_step(state, 3)
        assign_point(tiny_model, state, 3, 99)


def test_incremental_state_matches_recompute(tiny_model):
    cfg = GenConfig(alpha=1.0, sigma_mu=10.0, sigma_x=1.0, dim_x=2, n_min=40, n_max=40)
    data = sample_dataset(cfg, stream(55, "inc"))
    enc = encode_points(tiny_model, data.points)
    state = init_state(tiny_model, enc)
    rng = stream(56, "draw")
    for pos in range(2, data.n + 1):
        start_step(state, pos)
        probs = conditional_probs(tiny_model, state, pos)
        k = int(rng.integers(1, probs.size + 1))
        assign_point(tiny_model, state, pos, k)
        fresh = recompute_state(tiny_model, data, state.labels[:pos])
        assert np.abs(state.cluster_sums - fresh.cluster_sums).max() < 1e-8
        assert np.abs(state.pooled - fresh.pooled).max() < 1e-8
        assert np.abs(state.unassigned_sum - fresh.unassigned_sum).max() < 1e-8


def test_recompute_state_validations(tiny_model, tiny_data):
    with pytest.raises(ConfigError):
        recompute_state(tiny_model, tiny_data, np.array([], dtype=np.int64))
    with pytest.raises(ConfigError):
        recompute_state(tiny_model, tiny_data, np.array([2, 1]))
    full = recompute_state(tiny_model, tiny_data, tiny_data.true_assignment.as_array())
    assert np.all(full.unassigned_sum == 0.0)


def test_sample_single_point(tiny_model):
    trace = sample_assignment(tiny_model, np.array([[0.0, 0.0]]), stream(1, "s"))
    assert trace.assignment.labels == (1,)
    assert trace.log_q == 0.0
    assert trace.f_evals == 0


def test_sample_trace_invariants(tiny_model, tiny_data):
    trace = sample_assignment(tiny_model, tiny_data, stream(2, "s"))
    # scorer-call count equals sum over steps of (clusters before the step + 1)
    labels = trace.assignment.as_array()
    expected_calls = 0
    for n in range(2, tiny_data.n + 1):
        expected_calls += int(labels[: n - 1].max()) + 1
    assert trace.f_evals == expected_calls
    assert len(trace.step_probs) == tiny_data.n - 1
    total = sum(math.log(p[k - 1]) for p, k in zip(trace.step_probs, labels[1:]))
    assert trace.log_q == pytest.approx(total, abs=1e-12)
    # teacher-forcing the sampled assignment reproduces the same value
    assert log_prob_of(tiny_model, tiny_data, trace.assignment) == trace.log_q


def test_log_prob_single_point(tiny_model):
    assert log_prob_of(tiny_model, np.array([[1.0, 2.0]]), Assignment((1,))) == 0.0


def test_log_prob_rejects_non_canonical(tiny_model, tiny_data):
    with pytest.raises(ConfigError):
        Assignment((1, 3))
    with pytest.raises(ConfigError):
        log_prob_of(tiny_model, tiny_data, Assignment((1, 1)))


def test_sampler_distribution_normalizes(tiny_model):
    cfg = GenConfig(alpha=0.7, sigma_mu=10.0, sigma_x=1.0, dim_x=2, n_min=4, n_max=4)
    data = sample_dataset(cfg, stream(60, "norm"))
    total = sum(math.exp(log_prob_of(tiny_model, data, a)) for a in enumerate_assignments(4))
    assert abs(total - 1.0) < 1e-8


def test_constant_scorer_reproduces_uniform_ancestral_process():
    # with equal logits the sampler draws uniformly over K+1 at each step;
    # the induced partition law has probability prod_n 1/(K_n + 1)
    model = constant_scorer_model()
    pts = stream(61, "pts").normal(size=(4, 1))

    def uniform_process_prob(labels):
        prob = 1.0
        for n in range(2, len(labels) + 1):
            prob /= int(max(labels[: n - 1])) + 1
        return prob

    expected = {a.labels: uniform_process_prob(a.labels) for a in enumerate_assignments(4)}
    assert abs(sum(expected.values()) - 1.0) < 1e-12

    draws = 100_000
    counts: dict = {}
    for i in range(draws):
        tr = sample_assignment(model, pts, stream(62, "u", i), keep_probs=False)
        counts[tr.assignment.labels] = counts.get(tr.assignment.labels, 0) + 1
    for labels, p in expected.items():
        freq = counts.get(labels, 0) / draws
        se = math.sqrt(p * (1 - p) / draws)
        assert abs(freq - p) < 3.5 * se, (labels, freq, p)


def test_greedy_mode_picks_argmax(tiny_model, tiny_data):
    g1 = sample_assignment(tiny_model, tiny_data, stream(3, "g"), greedy=True)
    g2 = sample_assignment(tiny_model, tiny_data, stream(4, "g"), greedy=True)
    assert g1.assignment.labels == g2.assignment.labels
    for probs, k in zip(g1.step_probs, g1.assignment.labels[1:]):
        assert k - 1 == int(np.argmax(probs))


def test_sample_many_matches_single_path_and_worker_invariance(tiny_model, tiny_data):
    seq = sample_many(tiny_model, tiny_data, 12, seed=77, workers=1)
    par = sample_many(tiny_model, tiny_data, 12, seed=77, workers=2)
    for a, b in zip(seq, par):
        assert a.assignment.labels == b.assignment.labels
        assert a.log_q == b.log_q
    direct = sample_assignment(tiny_model, tiny_data, stream(77, "sample", 3), keep_probs=False)
    assert seq[3].assignment.labels == direct.assignment.labels
    assert seq[3].log_q == direct.log_q


def test_sample_many_shuffle_input_maps_back(tiny_model, tiny_data):
    traces = sample_many(tiny_model, tiny_data, 4, seed=5, workers=1, shuffle_input=True)
    for t in traces:
        assert len(t.assignment) == tiny_data.n


def test_refresh_interval_keeps_state_consistent(tiny_model):
    # push past the refresh threshold in one long run
    from ncp.model import REFRESH_INTERVAL

    cfg = GenConfig(alpha=2.0, sigma_mu=10.0, sigma_x=1.0, dim_x=2, n_min=1, n_max=1)
    pts = stream(88, "long").normal(size=(REFRESH_INTERVAL + 40, 2)) * 5.0
    trace = sample_assignment(tiny_model, pts, stream(89, "run"), keep_probs=False)
    assert len(trace.assignment) == pts.shape[0]
    del cfg
