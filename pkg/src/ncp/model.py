"""Amortized clustering model: invariant set encodings and the O(NK) sampler.

Three networks cooperate:

* ``encoder`` maps each observation to an encoding vector,
* ``cluster_net`` maps the sum of a cluster's encodings to a cluster code,
* ``scorer`` maps ``[candidate pool | unassigned sum | point encoding]``
  (concatenated in that fixed order) to one logit.

A sampler state carries, for a prefix of assigned points, the per-cluster
encoding sums, the pooled sum of cluster codes, and the sum of encodings of
the still-unassigned points.  Assigning one point updates all of these in
O(K) network evaluations, so a full ancestral sample costs O(NK) scorer
calls, like one sweep of a Gibbs sampler.

Summation order is canonical everywhere (ascending point index within a
cluster, ascending cluster index for the pool), both in the incremental
updates and in ``recompute_state``, so symmetry properties that are exact
in real arithmetic stay testable at tight tolerances.  Incremental updates
still accumulate rounding drift, so states refresh from scratch every
``REFRESH_INTERVAL`` assignments.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .errors import ConfigError
from .genmodel import Assignment, Dataset
from .nets import MlpParams, MlpSpec, init_params, mlp_forward
from .rng import stream

REFRESH_INTERVAL = 512
_SAMPLE_CHUNK = 64  # fixed so results never depend on the worker count


@dataclass
class NcpModel:
    """Parameters and dimensions of the three networks."""

    encoder_spec: MlpSpec
    cluster_spec: MlpSpec
    scorer_spec: MlpSpec
    encoder: MlpParams
    cluster: MlpParams
    scorer: MlpParams

    def __post_init__(self):
        if self.cluster_spec.in_dim != self.enc_dim:
            raise ConfigError("cluster net input dim must equal encoder output dim")
        if self.scorer_spec.in_dim != self.pool_dim + 2 * self.enc_dim:
            raise ConfigError(
                "scorer input dim must equal pool_dim + 2 * enc_dim "
                f"({self.pool_dim} + 2*{self.enc_dim} != {self.scorer_spec.in_dim})"
            )
        if self.scorer_spec.out_dim != 1:
            raise ConfigError("scorer must output a single logit")

    @property
    def point_dim(self) -> int:
        return self.encoder_spec.in_dim

    @property
    def enc_dim(self) -> int:
        return self.encoder_spec.out_dim

    @property
    def pool_dim(self) -> int:
        return self.cluster_spec.out_dim

    def parts(self) -> list[MlpParams]:
        return [self.encoder, self.cluster, self.scorer]

    def parameter_arrays(self) -> list[np.ndarray]:
        return [a for p in self.parts() for a in p.arrays()]

    def copy(self) -> "NcpModel":
        return NcpModel(
            self.encoder_spec,
            self.cluster_spec,
            self.scorer_spec,
            self.encoder.copy(),
            self.cluster.copy(),
            self.scorer.copy(),
        )


def build_model(
    point_dim: int,
    enc_dim: int,
    pool_dim: int,
    encoder_hidden: tuple[int, ...],
    cluster_hidden: tuple[int, ...],
    scorer_hidden: tuple[int, ...],
    rng: np.random.Generator,
    input_scale: float = 1.0,
) -> NcpModel:
    """Assemble freshly initialized networks with consistent dimensions.

    ``input_scale`` divides the encoder's first-layer weights once at build
    time.  With raw observations much larger than O(1), zero-bias PReLU
    stacks start out positively homogeneous (bias terms are invisible
    against the pre-activations), which collapses same-side points onto one
    activation cone and makes the pooled candidate scores degenerate;
    starting the first layer at the scale of the data removes that plateau.
    The layer stays fully trainable.
    """
    enc_spec = MlpSpec(point_dim, tuple(encoder_hidden), enc_dim)
    clu_spec = MlpSpec(enc_dim, tuple(cluster_hidden), pool_dim)
    sco_spec = MlpSpec(pool_dim + 2 * enc_dim, tuple(scorer_hidden), 1)
    encoder = init_params(enc_spec, rng)
    if input_scale != 1.0:
        encoder.weights[0] /= float(input_scale)
    return NcpModel(
        enc_spec,
        clu_spec,
        sco_spec,
        encoder,
        init_params(clu_spec, rng),
        init_params(sco_spec, rng),
    )


@dataclass
class SamplerState:
    """Incrementally maintained encodings for a partially assigned dataset."""

    encodings: np.ndarray  # (n, enc_dim)
    labels: np.ndarray  # (n,) int64, 0 where unassigned
    cluster_sums: np.ndarray  # (K, enc_dim)
    cluster_codes: np.ndarray  # (K, pool_dim), cached cluster_net(cluster_sums[k])
    pooled: np.ndarray  # (pool_dim,) sum of cluster codes
    unassigned_sum: np.ndarray  # (enc_dim,)
    n_clusters: int
    n_assigned: int
    pending: int | None = None  # point removed from the unassigned pool, not yet assigned
    assigns_since_refresh: int = 0

    @property
    def n_points(self) -> int:
        return self.encodings.shape[0]


@dataclass
class SampleTrace:
    """One ancestral sample: assignment, per-step probabilities, log q, scorer-call count."""

    assignment: Assignment
    step_probs: list[np.ndarray] | None
    log_q: float
    f_evals: int


def encode_points(model: NcpModel, points: np.ndarray) -> np.ndarray:
    """Row i of the result is the encoding of observation i."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.point_dim:
        raise ConfigError(
            f"points shape {points.shape} does not match model point_dim {model.point_dim}"
        )
    if points.shape[0] == 0:
        return np.zeros((0, model.enc_dim))
    out, _ = mlp_forward(model.encoder, model.encoder_spec, points)
    return out


def _state_from_labels(
    model: NcpModel, encodings: np.ndarray, labels: np.ndarray
) -> SamplerState:
    n = encodings.shape[0]
    n_assigned = int(np.count_nonzero(labels))
    k = int(labels.max())
    sums = np.zeros((k, model.enc_dim))
    assigned = labels > 0
    np.add.at(sums, labels[assigned] - 1, encodings[assigned])
    codes, _ = mlp_forward(model.cluster, model.cluster_spec, sums)
    pooled = codes.sum(axis=0)
    unassigned = encodings[~assigned].sum(axis=0) if n_assigned < n else np.zeros(model.enc_dim)
    return SamplerState(
        encodings=encodings,
        labels=labels.copy(),
        cluster_sums=sums,
        cluster_codes=codes,
        pooled=pooled,
        unassigned_sum=np.asarray(unassigned, dtype=np.float64),
        n_clusters=k,
        n_assigned=n_assigned,
    )


def recompute_state(model: NcpModel, data, prefix_labels) -> SamplerState:
    """Build a state from scratch by direct summation over a label prefix.

    ``prefix_labels`` covers the first n >= 1 points and must be canonical.
    Used both as the from-scratch oracle for the incremental updates and as
    the periodic drift refresh.
    """
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    prefix = np.asarray(prefix_labels, dtype=np.int64)
    if prefix.size == 0:
        raise ConfigError("prefix must assign at least the first point")
    if prefix.size > points.shape[0]:
        raise ConfigError("prefix longer than the dataset")
    from .genmodel import is_canonical

    if not is_canonical(prefix):
        raise ConfigError(f"prefix labels are not canonical: {prefix}")
    encodings = encode_points(model, points)
    labels = np.zeros(points.shape[0], dtype=np.int64)
    labels[: prefix.size] = prefix
    return _state_from_labels(model, encodings, labels)


def init_state(model: NcpModel, encodings: np.ndarray) -> SamplerState:
    """State after the forced first step: point 1 opens cluster 1."""
    if encodings.shape[0] < 1:
        raise ConfigError("need at least one point")
    labels = np.zeros(encodings.shape[0], dtype=np.int64)
    labels[0] = 1
    return _state_from_labels(model, encodings, labels)


def start_step(state: SamplerState, n: int) -> None:
    """Remove point n from the unassigned pool ahead of its candidate scoring."""
    if state.pending is not None:
        raise ConfigError(f"point {state.pending} is still awaiting assignment")
    if not (1 <= n <= state.n_points) or state.labels[n - 1] != 0:
        raise ConfigError(f"point {n} is not available for assignment")
    state.unassigned_sum = state.unassigned_sum - state.encodings[n - 1]
    state.pending = n


def _candidate_probs(model: NcpModel, state: SamplerState, n: int):
    hn = state.encodings[n - 1]
    k = state.n_clusters
    cand_sums = np.vstack([state.cluster_sums + hn, hn[None, :]])
    cand_codes, _ = mlp_forward(model.cluster, model.cluster_spec, cand_sums)
    # Candidate pools: existing cluster k swaps its code for the grown one;
    # the empty candidate cluster contributes cluster_net(0) := 0 exactly.
    old_codes = np.vstack([state.cluster_codes, np.zeros((1, model.pool_dim))])
    pools = state.pooled[None, :] - old_codes + cand_codes
    scorer_in = np.concatenate(
        [pools, np.tile(state.unassigned_sum, (k + 1, 1)), np.tile(hn, (k + 1, 1))],
        axis=1,
    )
    logits, _ = mlp_forward(model.scorer, model.scorer_spec, scorer_in)
    logits = logits[:, 0]
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    return probs, cand_codes


def conditional_probs(model: NcpModel, state: SamplerState, n: int) -> np.ndarray:
    """p(c_n = k | assigned prefix, x) for k = 1..K+1; leaves the state unchanged.

    Requires that ``start_step(state, n)`` already removed point n from the
    unassigned pool.
    """
    if state.pending != n:
        raise ConfigError(f"point {n} has not been removed from the unassigned pool")
    probs, _ = _candidate_probs(model, state, n)
    return probs


def assign_point(model: NcpModel, state: SamplerState, n: int, k: int, _codes=None) -> None:
    """Assign the pending point n to candidate k (k = K+1 opens a new cluster)."""
    if state.pending != n:
        raise ConfigError(f"point {n} has not been removed from the unassigned pool")
    kk = state.n_clusters
    if not (1 <= k <= kk + 1):
        raise ConfigError(f"candidate {k} outside 1..{kk + 1}")
    hn = state.encodings[n - 1]
    if _codes is not None:
        new_code = _codes[k - 1]
    else:
        cand = (state.cluster_sums[k - 1] + hn) if k <= kk else hn
        new_code = mlp_forward(model.cluster, model.cluster_spec, cand[None, :])[0][0]
    old_code = state.cluster_codes[k - 1] if k <= kk else np.zeros(model.pool_dim)
    state.pooled = state.pooled - old_code + new_code
    if k <= kk:
        state.cluster_sums[k - 1] = state.cluster_sums[k - 1] + hn
        state.cluster_codes[k - 1] = new_code
    else:
        state.cluster_sums = np.vstack([state.cluster_sums, hn[None, :]])
        state.cluster_codes = np.vstack([state.cluster_codes, new_code[None, :]])
        state.n_clusters += 1
    state.labels[n - 1] = k
    state.n_assigned += 1
    state.pending = None
    state.assigns_since_refresh += 1
    if state.assigns_since_refresh >= REFRESH_INTERVAL:
        fresh = _state_from_labels(model, state.encodings, state.labels)
        state.cluster_sums = fresh.cluster_sums
        state.cluster_codes = fresh.cluster_codes
        state.pooled = fresh.pooled
        state.unassigned_sum = fresh.unassigned_sum
        state.assigns_since_refresh = 0


def sample_assignment(
    model: NcpModel,
    data,
    rng: np.random.Generator,
    greedy: bool = False,
    keep_probs: bool = True,
) -> SampleTrace:
    """One full ancestral sample over all points in presentation order."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n = points.shape[0]
    if n < 1:
        raise ConfigError("need at least one point")
    encodings = encode_points(model, points)
    state = init_state(model, encodings)
    step_probs: list[np.ndarray] | None = [] if keep_probs else None
    log_q = 0.0
    f_evals = 0
    for pos in range(2, n + 1):
        start_step(state, pos)
        probs, codes = _candidate_probs(model, state, pos)
        f_evals += probs.size
        if greedy:
            k = int(np.argmax(probs)) + 1
        else:
            u = rng.random()
            k = int(np.searchsorted(np.cumsum(probs), u, side="right")) + 1
            k = min(k, probs.size)
        log_q += math.log(probs[k - 1])
        if step_probs is not None:
            step_probs.append(probs)
        assign_point(model, state, pos, k, _codes=codes)
    return SampleTrace(
        assignment=Assignment.from_labels(state.labels),
        step_probs=step_probs,
        log_q=float(log_q),
        f_evals=f_evals,
    )


def log_prob_of(model: NcpModel, data, a: Assignment) -> float:
    """Teacher-forced log q of a given canonical assignment."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if len(a) != points.shape[0]:
        raise ConfigError(f"assignment covers {len(a)} points but data has {points.shape[0]}")
    labels = a.as_array()
    encodings = encode_points(model, points)
    state = init_state(model, encodings)
    log_q = 0.0
    for pos in range(2, points.shape[0] + 1):
        start_step(state, pos)
        probs, codes = _candidate_probs(model, state, pos)
        k = int(labels[pos - 1])
        log_q += math.log(probs[k - 1])
        assign_point(model, state, pos, k, _codes=codes)
    return float(log_q)


# ---------------------------------------------------------------------------
# Parallel iid sampling

_WORKER: dict = {}


def _one_sample(model, points, seed: int, index: int, shuffle_input: bool, greedy: bool):
    rng = stream(seed, "sample", index)
    points = np.asarray(points, dtype=np.float64)
    if shuffle_input:
        perm = rng.permutation(points.shape[0])
        trace = sample_assignment(model, points[perm], rng, greedy=greedy, keep_probs=False)
        original = np.empty(points.shape[0], dtype=np.int64)
        original[perm] = trace.assignment.as_array()
        assignment = Assignment.from_labels(original, canonicalize=True)
        return SampleTrace(assignment, None, trace.log_q, trace.f_evals)
    return sample_assignment(model, points, rng, greedy=greedy, keep_probs=False)


def _init_worker(model, points, seed, shuffle_input, greedy):
    _WORKER["args"] = (model, points, seed, shuffle_input, greedy)


def _run_chunk(indices):
    model, points, seed, shuffle_input, greedy = _WORKER["args"]
    out = []
    for i in indices:
        t = _one_sample(model, points, seed, i, shuffle_input, greedy)
        out.append((i, t.assignment.labels, t.log_q, t.f_evals))
    return out


def sample_many(
    model: NcpModel,
    data,
    n_samples: int,
    seed: int,
    workers: int = 1,
    shuffle_input: bool = False,
    greedy: bool = False,
) -> list[SampleTrace]:
    """``n_samples`` iid samples, ordered by sample index.

    Sample i is a pure function of (model, data, seed, i): the per-sample
    generator is derived from the seed and the index, never from worker
    identity, so results are identical for any worker count.
    """
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    chunks = [
        range(lo, min(lo + _SAMPLE_CHUNK, n_samples))
        for lo in range(0, n_samples, _SAMPLE_CHUNK)
    ]
    rows: list[tuple] = []
    if workers <= 1 or len(chunks) == 1:
        for chunk in chunks:
            for i in chunk:
                t = _one_sample(model, points, seed, i, shuffle_input, greedy)
                rows.append((i, t.assignment.labels, t.log_q, t.f_evals))
    else:
        ctx = get_context("fork")
        with ProcessPoolExecutor(
            max_workers=workers,
            mp_context=ctx,
            initializer=_init_worker,
            initargs=(model, points, seed, shuffle_input, greedy),
        ) as pool:
            for part in pool.map(_run_chunk, chunks):
                rows.extend(part)
    rows.sort(key=lambda r: r[0])
    return [
        SampleTrace(Assignment(labels), None, log_q, f_evals)
        for _, labels, log_q, f_evals in rows
    ]
