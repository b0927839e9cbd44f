"""Training: expected-NLL objective, mini-batch construction, diagnostics.

One mini-batch draws a single point count N, a single partition of those N
points, then ``datasets_per_batch`` independent datasets conditioned on
that partition, and finally ``perms_per_batch`` random global permutations
applied to every dataset.  The loss is the mean, over all
(dataset, permutation) draws, of the teacher-forced sequence negative
log-likelihood; gradients come from a hand-rolled reverse pass through the
unrolled assignment recursion.

Because every dataset in the batch shares the permuted label sequence, the
whole batch shares one control flow per permutation and the pass vectorizes
over a merged (permutation, dataset) axis.  The backward pass is gradient-
checkpointed: it stores only the per-step cluster-sum snapshots and
recomputes network activations while walking the steps in reverse.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .genmodel import (
    Assignment,
    Dataset,
    GenConfig,
    canonicalize_labels,
    exact_conditional,
    joint_log_prob_rows,
    sample_crp,
)
from .model import NcpModel, conditional_probs, recompute_state, start_step
from .nets import AdamState, LrSchedule, adam_step, mlp_backward, mlp_forward
from .rng import stream


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch composition, schedule, and diagnostics cadence.

    The shipped defaults follow the reference recipe: one point-count draw
    and one partition draw per batch, 48 datasets, 8 permutations, ADAM at
    1e-4 for the first 1000 iterations and 1e-5 afterwards.
    """

    gen: GenConfig
    iterations: int
    datasets_per_batch: int = 48
    perms_per_batch: int = 8
    lr: LrSchedule = LrSchedule()
    diag_every: int = 25
    checkpoint_every: int = 0  # 0 = only at the end
    window: int = 100
    rao_blackwell: bool = False
    rb_tail: int = 3
    rb_budget: int = 2000
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.datasets_per_batch < 1 or self.perms_per_batch < 1:
            raise ConfigError("batch composition counts must be >= 1")
        if self.rb_tail < 0 or self.rb_budget < 1:
            raise ConfigError("rb_tail must be >= 0 and rb_budget >= 1")
        if self.diag_every < 1 or self.window < 1:
            raise ConfigError("diag_every and window must be >= 1")


@dataclass
class DiagnosticsRecord:
    iteration: int
    nll: float
    accuracy: float
    perm_variance: float
    seconds: float


@dataclass
class Minibatch:
    points: np.ndarray  # (B, N, d)
    labels: np.ndarray  # (N,) canonical, shared across datasets
    perms: np.ndarray  # (P, N) index permutations
    perm_labels: np.ndarray  # (P, N) canonical labels in permuted order


def draw_minibatch(cfg: TrainConfig, rng: np.random.Generator) -> Minibatch:
    gen = cfg.gen
    n = int(rng.integers(gen.n_min, gen.n_max + 1))
    a = sample_crp(gen.alpha, n, rng)
    labels = a.as_array()
    b = cfg.datasets_per_batch
    means = rng.normal(0.0, gen.sigma_mu, size=(b, a.k_count, gen.dim_x))
    points = means[:, labels - 1, :] + rng.normal(0.0, gen.sigma_x, size=(b, n, gen.dim_x))
    perms = np.stack([rng.permutation(n) for _ in range(cfg.perms_per_batch)])
    perm_labels = np.stack([canonicalize_labels(labels[p]) for p in perms])
    return Minibatch(points, labels, perms, perm_labels)


# ---------------------------------------------------------------------------
# Vectorized teacher-forced pass


@dataclass
class PassResult:
    loss: float  # mean sequence NLL over (perm, dataset) draws
    grads: dict | None  # {"encoder": MlpParams, "cluster": ..., "scorer": ...}
    accuracy: float
    position_nll: np.ndarray  # (steps,) mean NLL contribution per position


def _scatter_plan(labels_row: np.ndarray) -> np.ndarray:
    # running cluster count before each step: count[pos] = max(labels[:pos])
    return np.maximum.accumulate(labels_row)


def teacher_forced_pass(
    model: NcpModel,
    points: np.ndarray,
    perms: np.ndarray,
    perm_labels: np.ndarray,
    targets: dict[int, np.ndarray] | None = None,
    loss_weights: np.ndarray | None = None,
    want_grads: bool = True,
    assigned_length: int | None = None,
) -> PassResult:
    """Loss and exact gradients of the teacher-forced objective.

    ``points`` is (B, N, d); ``perms``/``perm_labels`` are (P, M) with
    M <= N (positions beyond M stay unassigned and only feed the
    unassigned-sum input).  ``targets`` optionally replaces the one-hot
    label at step index pos (0-based position of the scored point) with a
    soft distribution of shape (P, B, K_pos + 1).  ``loss_weights`` weights
    each step's contribution (default all ones).
    """
    points = np.asarray(points, dtype=np.float64)
    b, n, d = points.shape
    p, m = perm_labels.shape
    if assigned_length is not None:
        m = assigned_length
    if perms.shape[1] < m:
        raise ConfigError("permutation rows shorter than the assigned length")
    enc_dim, pool_dim = model.enc_dim, model.pool_dim

    flat = points.reshape(b * n, d)
    h_flat, h_cache = mlp_forward(model.encoder, model.encoder_spec, flat)
    h_all = h_flat.reshape(b, n, enc_dim)
    # (P, B, N, enc): encodings in permuted presentation order
    h_big = h_all[:, perms, :].transpose(1, 0, 2, 3)

    # suffix[pos] = sum of encodings of points at positions >= pos
    suffix = np.zeros((p, b, n + 1, enc_dim))
    suffix[:, :, :n, :] = h_big[:, :, ::-1, :].cumsum(axis=2)[:, :, ::-1, :]

    kmax_total = int(perm_labels.max())
    kprev_all = np.maximum.accumulate(perm_labels, axis=1)  # clusters among first pos+1 points

    n_steps = m - 1
    weights = np.ones(n_steps) if loss_weights is None else np.asarray(loss_weights, float)
    if weights.shape != (n_steps,):
        raise ConfigError(f"loss_weights must have shape ({n_steps},)")

    sums = np.zeros((p, b, kmax_total + 1, enc_dim))
    first = perms[:, 0]
    sums[:, :, 0, :] = h_all[:, first, :].transpose(1, 0, 2)

    # Keeping every network activation for the reverse pass trades memory for
    # a full forward recomputation; fall back to recompute when the estimate
    # is large (wide nets, long sequences).
    g_widths = model.cluster_spec.in_dim + sum(model.cluster_spec.hidden) * 2
    f_widths = model.scorer_spec.in_dim + sum(model.scorer_spec.hidden) * 2
    est_rows = p * b * (2 * kmax_total + 1)
    cache_bytes = est_rows * (g_widths + f_widths) * 8 * max(n_steps, 1)
    keep_activations = want_grads and cache_bytes < 1.5e9

    scale = 1.0 / (p * b)
    total_loss = 0.0
    correct = 0
    position_nll = np.zeros(n_steps)
    snapshots = []  # per-step state copies (plus activations when kept)
    k_idx = np.arange(kmax_total + 1)

    def step_forward(pos: int, sums_now: np.ndarray, need_cache: bool):
        kprev = kprev_all[:, pos - 1]  # (P,)
        kp = int(kprev.max())
        c = kp + 1
        hn = h_big[:, :, pos, :]  # (P, B, enc)
        exist = (k_idx[None, :kp] < kprev[:, None]).astype(np.float64)  # (P, kp)
        g_in = np.concatenate(
            [sums_now[:, :, :kp, :], sums_now[:, :, :c, :] + hn[:, :, None, :]], axis=2
        )
        g_out, g_cache = mlp_forward(
            model.cluster, model.cluster_spec, g_in.reshape(p * b * (kp + c), enc_dim)
        )
        g_out = g_out.reshape(p, b, kp + c, pool_dim)
        codes_old = g_out[:, :, :kp, :]
        codes_new = g_out[:, :, kp:, :]
        pool_base = (codes_old * exist[:, None, :, None]).sum(axis=2)  # (P, B, pool)
        old_ext = np.concatenate([codes_old, np.zeros((p, b, 1, pool_dim))], axis=2)
        # candidate k swaps cluster k's code for the grown one; slot kprev is
        # the empty candidate whose old code is the constant zero
        old_ext = old_ext * (k_idx[None, None, :c, None] < kprev[:, None, None, None])
        pools = pool_base[:, :, None, :] - old_ext + codes_new
        q_now = suffix[:, :, pos + 1, :]
        f_in = np.concatenate(
            [
                pools,
                np.broadcast_to(q_now[:, :, None, :], (p, b, c, enc_dim)),
                np.broadcast_to(hn[:, :, None, :], (p, b, c, enc_dim)),
            ],
            axis=3,
        )
        f_out, f_cache = mlp_forward(
            model.scorer, model.scorer_spec, f_in.reshape(p * b * c, model.scorer_spec.in_dim)
        )
        logits = f_out.reshape(p, b, c)
        valid = k_idx[None, :c] <= kprev[:, None]  # candidate k+1 <= K+1
        logits = np.where(valid[:, None, :], logits, -np.inf)
        mx = logits.max(axis=2, keepdims=True)
        z = np.exp(logits - mx)
        zs = z.sum(axis=2, keepdims=True)
        probs = z / zs
        lse = mx[:, :, 0] + np.log(zs[:, :, 0])
        caches = (g_cache, f_cache, kp, c, exist, valid) if need_cache else None
        return logits, probs, lse, caches

    for pos in range(1, m):
        logits, probs, lse, caches = step_forward(pos, sums, need_cache=keep_activations)
        t = perm_labels[:, pos] - 1  # (P,) 0-based candidate index
        tgt = None if targets is None else targets.get(pos)
        if tgt is None:
            picked = np.take_along_axis(logits, t[:, None, None], axis=2)[:, :, 0]
            step_loss = lse - picked
        else:
            c = logits.shape[2]
            if tgt.shape != (p, b, c):
                raise ConfigError(f"target at step {pos} has shape {tgt.shape}, want {(p, b, c)}")
            safe = np.where(np.isfinite(logits), logits, 0.0)
            step_loss = lse - (tgt * safe).sum(axis=2)
        if not np.all(np.isfinite(step_loss)):
            raise NumericError(f"non-finite loss at step {pos}")
        total_loss += weights[pos - 1] * step_loss.sum() * scale
        position_nll[pos - 1] = step_loss.mean()
        correct += int((probs.argmax(axis=2) == t[:, None]).sum())
        if want_grads:
            snapshots.append((sums.copy() if not keep_activations else None, probs, caches))
        # teacher forcing: the sampled label always drives the state
        hn = h_big[:, :, pos, :]
        rows = np.arange(p)
        sums[rows, :, t, :] += hn
    accuracy = correct / (p * b * max(n_steps, 1))

    if not want_grads:
        return PassResult(float(total_loss), None, accuracy, position_nll)

    g_enc = model.encoder.zeros_like()
    g_clu = model.cluster.zeros_like()
    g_sco = model.scorer.zeros_like()
    sa = np.zeros((p, b, kmax_total + 1, enc_dim))  # grads wrt cluster sums, suffix-accumulated
    dq_steps = np.zeros((p, b, n, enc_dim))
    dh_big = np.zeros((p, b, n, enc_dim))

    for pos in range(m - 1, 0, -1):
        sums_then, probs, caches = snapshots[pos - 1]
        if caches is None:
            _, probs, _, caches = step_forward(pos, sums_then, need_cache=True)
        g_cache, f_cache, kp, c, exist, valid = caches
        t = perm_labels[:, pos] - 1
        tgt = targets.get(pos) if targets is not None else None
        if tgt is None:
            tgt_arr = np.zeros((p, b, c))
            np.put_along_axis(tgt_arr, np.broadcast_to(t[:, None, None], (p, b, 1)), 1.0, axis=2)
        else:
            tgt_arr = tgt
        dlogits = (probs - tgt_arr) * (weights[pos - 1] * scale)
        dlogits = np.where(valid[:, None, :], dlogits, 0.0)

        df, df_in = mlp_backward(
            model.scorer, model.scorer_spec, f_cache, dlogits.reshape(p * b * c, 1)
        )
        g_sco.add_(df)
        df_in = df_in.reshape(p, b, c, model.scorer_spec.in_dim)
        dpools = df_in[:, :, :, : model.pool_dim]
        dq = df_in[:, :, :, model.pool_dim : model.pool_dim + enc_dim].sum(axis=2)
        dhn = df_in[:, :, :, model.pool_dim + enc_dim :].sum(axis=2)

        dpool_base = dpools.sum(axis=2)
        dcodes_new = dpools
        dcodes_old = (dpool_base[:, :, None, :] - dpools[:, :, :kp, :]) * exist[:, None, :, None]
        dg_out = np.concatenate([dcodes_old, dcodes_new], axis=2)
        dg, dg_in = mlp_backward(
            model.cluster, model.cluster_spec, g_cache, dg_out.reshape(p * b * (kp + c), pool_dim)
        )
        g_clu.add_(dg)
        dg_in = dg_in.reshape(p, b, kp + c, enc_dim)
        d_sums_rows = dg_in[:, :, :kp, :]
        d_cand_rows = dg_in[:, :, kp:, :]
        dhn = dhn + d_cand_rows.sum(axis=2)
        d_sums_step = np.zeros((p, b, kmax_total + 1, enc_dim))
        d_sums_step[:, :, :kp, :] = (d_sums_rows + d_cand_rows[:, :, :kp, :]) * exist[
            :, None, :, None
        ]

        rows = np.arange(p)
        dh_big[:, :, pos, :] = dhn + sa[rows, :, t, :]
        sa += d_sums_step
        dq_steps[:, :, pos, :] = dq

    dh_big[:, :, 0, :] = sa[:, :, 0, :]
    dh_big[:, :, 1:, :] += dq_steps.cumsum(axis=2)[:, :, :-1, :]

    # scatter gradients from permuted positions back to original point order
    dh_orig = np.zeros((b, n, enc_dim))
    for pi in range(p):
        inv = np.empty(n, dtype=np.int64)
        inv[perms[pi]] = np.arange(n)
        dh_orig += dh_big[pi][:, inv, :]
    denc, _ = mlp_backward(
        model.encoder, model.encoder_spec, h_cache, dh_orig.reshape(b * n, enc_dim)
    )
    g_enc.add_(denc)

    grads = {"encoder": g_enc, "cluster": g_clu, "scorer": g_sco}
    return PassResult(float(total_loss), grads, accuracy, position_nll)


def nll_minibatch(model: NcpModel, cfg: TrainConfig, rng: np.random.Generator):
    """Mini-batch loss, gradients, and stats; aborts on non-finite loss.

    The offending batch is dumped next to the working directory as an .npz
    so blowups stay reproducible.
    """
    batch = draw_minibatch(cfg, rng)
    targets = _rb_batch_targets(batch, cfg) if cfg.rao_blackwell else None
    try:
        return teacher_forced_pass(
            model, batch.points, batch.perms, batch.perm_labels, targets=targets
        )
    except NumericError:
        import tempfile

        path = tempfile.mktemp(prefix="ncp-bad-batch-", suffix=".npz")
        np.savez(path, points=batch.points, labels=batch.labels, perms=batch.perms)
        raise NumericError(f"non-finite mini-batch loss; batch serialized to {path}")


# ---------------------------------------------------------------------------
# Rao-Blackwellized targets (conjugate case)


def _tail_completions(prefix: np.ndarray, n_total: int, budget: int) -> np.ndarray | None:
    """All canonical completions of prefix to n_total points, or None over budget."""
    k = int(prefix.max())
    count = 1
    for j in range(n_total - prefix.size):
        count *= k + 1 + j
        if count > budget:
            return None
    rows = prefix[None, :].astype(np.int64)
    kmax = np.array([k], dtype=np.int64)
    for _ in range(prefix.size, n_total):
        branching = kmax + 1
        idx = np.repeat(np.arange(rows.shape[0]), branching)
        total = int(branching.sum())
        starts = np.repeat(np.cumsum(branching) - branching, branching)
        col = np.arange(total) - starts + 1
        rows = np.concatenate([rows[idx], col[:, None]], axis=1)
        kmax = np.maximum(kmax[idx], col)
    return rows


def rb_targets_tail(
    points: np.ndarray,
    prefix_labels: np.ndarray,
    tail_labels: np.ndarray,
    cfg: GenConfig,
    budget: int = 2000,
) -> list[np.ndarray | None]:
    """Exact conditionals for every tail position from one enumeration sweep.

    Given a sampled assignment split into ``prefix_labels`` (first n-1
    points) and ``tail_labels`` (the sampled labels of the remaining
    points), returns for each tail position m the exact
    p(c_m | sampled c_{1:m-1}, x), marginalizing over the not-yet-fixed
    trailing labels.  Entries are None where the enumeration exceeds the
    budget (callers fall back to the sampled one-hot target there).
    """
    points = np.asarray(points, dtype=np.float64)
    prefix = np.asarray(prefix_labels, dtype=np.int64)
    tail = np.asarray(tail_labels, dtype=np.int64)
    n_total = prefix.size + tail.size
    if n_total != points.shape[0]:
        raise ConfigError("prefix plus tail must cover the dataset")
    rows = _tail_completions(prefix, n_total, budget)
    if rows is None:
        return [None] * tail.size
    logp = joint_log_prob_rows(points, rows, cfg)
    out: list[np.ndarray | None] = []
    keep = np.ones(rows.shape[0], dtype=bool)
    for j in range(tail.size):
        pos = prefix.size + j  # 0-based column of the position being scored
        sub_rows = rows[keep]
        sub_logp = logp[keep]
        # all kept rows share the fixed columns, so K is well defined
        n_choices = int(sub_rows[:, :pos].max()) + 1
        weights = np.full(n_choices, -np.inf)
        choices = sub_rows[:, pos]
        for c in range(1, n_choices + 1):
            mask = choices == c
            if mask.any():
                w = sub_logp[mask]
                mxx = w.max()
                weights[c - 1] = mxx + math.log(float(np.sum(np.exp(w - mxx))))
        probs = np.exp(weights - weights.max())
        probs /= probs.sum()
        out.append(probs)
        keep = keep & (rows[:, pos] == tail[j])
    return out


def rb_targets(
    data, prefix: Assignment, cfg: GenConfig, budget: int = 2000
) -> np.ndarray:
    """Exact p(c_n | c_{1:n-1}, x) for the position right after ``prefix``.

    Obtained by enumerating all completions of the remaining points and
    marginalizing; raises if the completion count exceeds ``budget``.
    """
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n_total = points.shape[0]
    prefix_arr = prefix.as_array()
    if prefix_arr.size >= n_total:
        raise ConfigError("prefix already covers the dataset")
    dummy_tail = np.ones(n_total - prefix_arr.size, dtype=np.int64)
    out = rb_targets_tail(points, prefix_arr, dummy_tail, cfg, budget=budget)
    if out[0] is None:
        raise ConfigError(f"completion enumeration exceeds budget {budget}")
    return out[0]


def _rb_batch_targets(batch: Minibatch, cfg: TrainConfig) -> dict[int, np.ndarray] | None:
    n = batch.perm_labels.shape[1]
    r = min(cfg.rb_tail, n - 1)
    if r == 0:
        return None
    p, b = batch.perms.shape[0], batch.points.shape[0]
    targets: dict[int, np.ndarray] = {}
    kprev = np.maximum.accumulate(batch.perm_labels, axis=1)
    for pos in range(n - r, n):
        c = int(kprev[:, pos - 1].max()) + 1
        targets[pos] = np.zeros((p, b, c))
    for pi in range(p):
        pts_perm = batch.points[:, batch.perms[pi], :]
        prefix = batch.perm_labels[pi, : n - r]
        tail = batch.perm_labels[pi, n - r :]
        for bi in range(b):
            per_pos = rb_targets_tail(
                pts_perm[bi], prefix, tail, cfg.gen, budget=cfg.rb_budget
            )
            for j, tgt in enumerate(per_pos):
                pos = n - r + j
                c = targets[pos].shape[2]
                if tgt is None:
                    targets[pos][pi, bi, batch.perm_labels[pi, pos] - 1] = 1.0
                else:
                    targets[pos][pi, bi, : tgt.size] = tgt
    return targets


def rb_loss(
    model: NcpModel,
    data,
    prefix: Assignment,
    targets: np.ndarray,
    want_grads: bool = True,
):
    """Cross-entropy between exact targets and the model conditional at one position."""
    points = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    points = points[None, :, :]
    n_assigned = len(prefix) + 1
    c = prefix.k_count + 1
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (c,):
        raise ConfigError(f"targets must have shape ({c},), got {targets.shape}")
    perms = np.arange(points.shape[1])[None, :]
    labels = np.concatenate([prefix.as_array(), [1] * (points.shape[1] - len(prefix))])[None, :]
    weights = np.zeros(n_assigned - 1)
    weights[-1] = 1.0
    result = teacher_forced_pass(
        model,
        points,
        perms,
        labels,
        targets={n_assigned - 1: targets[None, None, :]},
        loss_weights=weights,
        want_grads=want_grads,
        assigned_length=n_assigned,
    )
    return result.loss, result.grads


# ---------------------------------------------------------------------------
# Diagnostics


def permutation_variance(
    model: NcpModel, data: Dataset, n_perms: int = 8, rng: np.random.Generator | None = None
) -> float:
    """Sample variance of the sequence log-likelihood under random global permutations.

    A trained model should assign (nearly) the same joint probability to a
    partition no matter the presentation order; at initialization it will
    not.  Uses the dataset's generative assignment.
    """
    if data.true_assignment is None:
        raise ConfigError("dataset carries no assignment")
    if rng is None:
        raise ConfigError("an explicit random stream is required")
    labels = data.true_assignment.as_array()
    vals = np.empty(n_perms)
    for j in range(n_perms):
        perm = rng.permutation(data.n)
        relabeled = canonicalize_labels(labels[perm])
        vals[j] = _sequence_log_prob(model, data.points[perm], relabeled)
    return float(np.var(vals, ddof=1))


def _sequence_log_prob(model: NcpModel, points: np.ndarray, labels: np.ndarray) -> float:
    res = teacher_forced_pass(
        model,
        points[None, :, :],
        np.arange(points.shape[0])[None, :],
        np.asarray(labels)[None, :],
        want_grads=False,
    )
    return -res.loss


def last_point_tv(model: NcpModel, data: Dataset, cfg: GenConfig) -> float:
    """Total-variation distance between the model's and the exact last-point conditional."""
    if data.true_assignment is None:
        raise ConfigError("dataset carries no assignment")
    labels = data.true_assignment.as_array()
    prefix = Assignment.from_labels(labels[:-1], canonicalize=True)
    exact = exact_conditional(data, prefix, data.n, cfg)
    state = recompute_state(model, data, prefix.as_array())
    start_step(state, data.n)
    approx = conditional_probs(model, state, data.n)
    return 0.5 * float(np.abs(exact - approx).sum())


# ---------------------------------------------------------------------------
# The training loop


@dataclass
class TrainState:
    """Optimizer state for the three networks plus the global step counter."""

    encoder: AdamState
    cluster: AdamState
    scorer: AdamState
    iteration: int = 0

    @classmethod
    def fresh(cls, model: NcpModel) -> "TrainState":
        return cls(
            AdamState.for_params(model.encoder),
            AdamState.for_params(model.cluster),
            AdamState.for_params(model.scorer),
        )


@dataclass
class TrainResult:
    model: NcpModel
    state: TrainState
    records: list[DiagnosticsRecord]


def train(
    model: NcpModel,
    cfg: TrainConfig,
    state: TrainState | None = None,
    on_record=None,
    on_checkpoint=None,
) -> TrainResult:
    """Run the ADAM loop for ``cfg.iterations`` total iterations.

    Training is resumable: pass the state saved alongside a checkpoint and
    the loop continues from ``state.iteration``, reproducing an
    uninterrupted run bit-exactly because every stochastic draw comes from
    a stream derived from (seed, iteration).
    """
    if state is None:
        state = TrainState.fresh(model)
    records: list[DiagnosticsRecord] = []
    t0 = time.perf_counter()
    for it in range(state.iteration + 1, cfg.iterations + 1):
        rng = stream(cfg.seed, "batch", it)
        result = nll_minibatch(model, cfg, rng)
        adam_step(model.encoder, result.grads["encoder"], state.encoder, cfg.lr, cfg.grad_clip)
        adam_step(model.cluster, result.grads["cluster"], state.cluster, cfg.lr, cfg.grad_clip)
        adam_step(model.scorer, result.grads["scorer"], state.scorer, cfg.lr, cfg.grad_clip)
        state.iteration = it
        if it % cfg.diag_every == 0 or it == cfg.iterations:
            diag_data = _diag_dataset(cfg, it)
            pv = permutation_variance(
                model, diag_data, n_perms=8, rng=stream(cfg.seed, "diagperm", it)
            )
            rec = DiagnosticsRecord(
                iteration=it,
                nll=result.loss,
                accuracy=result.accuracy,
                perm_variance=pv,
                seconds=time.perf_counter() - t0,
            )
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and on_checkpoint is not None:
            on_checkpoint(model, state)
    return TrainResult(model=model, state=state, records=records)


def _diag_dataset(cfg: TrainConfig, it: int) -> Dataset:
    from .genmodel import sample_dataset

    return sample_dataset(cfg.gen, stream(cfg.seed, "diagdata", it))


def smoothed(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average over up to ``window`` previous entries."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(values.size):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out
