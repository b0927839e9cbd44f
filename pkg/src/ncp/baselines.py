"""Collapsed Gibbs sampler and self-normalized importance sampling.

The Gibbs kernel integrates cluster means out (possible because the mean
prior is conjugate) and resamples one point at a time from its full
conditional: an existing cluster attracts proportionally to its size times
the posterior-predictive density of the point given the cluster's current
members, and a new cluster proportionally to the concentration times the
prior-predictive density.

The importance estimator treats amortized model samples as a proposal for
the exact partition posterior: weights are p(c, x) / q(c | x), computed in
log space with max subtraction, then self-normalized, so the unknown
evidence cancels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateProposalError
from .genmodel import (
    Assignment,
    Dataset,
    GenConfig,
    canonicalize_labels,
    exact_posterior,
    joint_log_prob_rows,
)
from .model import NcpModel, sample_many
from .rng import stream


@dataclass(frozen=True)
class GibbsConfig:
    n_sweeps: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise ConfigError("n_sweeps must be >= 1")
        if self.burn_in < 0 or self.thinning < 1:
            raise ConfigError("burn_in must be >= 0 and thinning >= 1")


class _GibbsState:
    """Labels plus per-cluster counts and sums, kept incrementally."""

    def __init__(self, points: np.ndarray, labels: np.ndarray):
        self.points = points
        self.labels = labels.astype(np.int64).copy()
        k = int(labels.max())
        self.counts = np.bincount(self.labels, minlength=k + 1)[1:].astype(np.float64)
        self.sums = np.zeros((k, points.shape[1]))
        np.add.at(self.sums, self.labels - 1, points)

    def remove(self, i: int) -> None:
        k = self.labels[i] - 1
        self.counts[k] -= 1
        self.sums[k] -= self.points[i]
        self.labels[i] = 0
        if self.counts[k] == 0.0:
            # delete the emptied cluster and close the label gap immediately
            self.counts = np.delete(self.counts, k)
            self.sums = np.delete(self.sums, k, axis=0)
            self.labels[self.labels > k + 1] -= 1

    def insert(self, i: int, k: int) -> None:
        if k == self.counts.size + 1:
            self.counts = np.append(self.counts, 0.0)
            self.sums = np.vstack([self.sums, np.zeros((1, self.points.shape[1]))])
        self.counts[k - 1] += 1
        self.sums[k - 1] += self.points[i]
        self.labels[i] = k


def _conditional_log_weights(state: _GibbsState, x: np.ndarray, cfg: GenConfig) -> np.ndarray:
    s2 = cfg.sigma_x**2
    l2 = cfg.sigma_mu**2
    post_var = 1.0 / (1.0 / l2 + state.counts / s2)  # (K,)
    pred_mean = post_var[:, None] * state.sums / s2  # (K, d)
    pred_var = s2 + post_var  # (K,)
    d = x.size
    logw = np.empty(state.counts.size + 1)
    logw[:-1] = (
        np.log(state.counts)
        - 0.5 * d * np.log(2.0 * math.pi * pred_var)
        - ((x[None, :] - pred_mean) ** 2).sum(axis=1) / (2.0 * pred_var)
    )
    prior_var = s2 + l2
    logw[-1] = (
        math.log(cfg.alpha)
        - 0.5 * d * math.log(2.0 * math.pi * prior_var)
        - float(x @ x) / (2.0 * prior_var)
    )
    return logw


def _sweep(state: _GibbsState, cfg: GenConfig, rng: np.random.Generator) -> None:
    n = state.points.shape[0]
    for i in range(n):
        state.remove(i)
        logw = _conditional_log_weights(state, state.points[i], cfg)
        probs = np.exp(logw - logw.max())
        probs /= probs.sum()
        u = rng.random()
        k = int(np.searchsorted(np.cumsum(probs), u, side="right")) + 1
        k = min(k, probs.size)
        state.insert(i, k)


def gibbs_sweep(
    points, cfg: GenConfig, a: Assignment, rng: np.random.Generator
) -> Assignment:
    """One full collapsed-Gibbs sweep over all points; returns a canonical assignment."""
    pts = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=np.float64)
    if len(a) != pts.shape[0]:
        raise ConfigError("assignment length does not match the dataset")
    state = _GibbsState(pts, a.as_array())
    _sweep(state, cfg, rng)
    return Assignment.from_labels(canonicalize_labels(state.labels))


@dataclass
class GibbsRun:
    assignments: list[Assignment]
    k_trace: np.ndarray  # cluster count per emitted sample


def run_gibbs(
    data, cfg: GenConfig, gcfg: GibbsConfig, init: Assignment | None = None
) -> GibbsRun:
    """Burn in, then emit every ``thinning``-th of ``n_sweeps`` post-burn-in sweeps.

    The chain starts from a single shared cluster unless ``init`` is given.
    """
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n = pts.shape[0]
    labels = init.as_array() if init is not None else np.ones(n, dtype=np.int64)
    state = _GibbsState(pts, labels)
    rng = stream(gcfg.seed, "gibbs")
    for _ in range(gcfg.burn_in):
        _sweep(state, cfg, rng)
    assignments: list[Assignment] = []
    for sweep_idx in range(1, gcfg.n_sweeps + 1):
        _sweep(state, cfg, rng)
        if sweep_idx % gcfg.thinning == 0:
            assignments.append(Assignment.from_labels(canonicalize_labels(state.labels)))
    k_trace = np.array([a.k_count for a in assignments], dtype=np.int64)
    return GibbsRun(assignments=assignments, k_trace=k_trace)


# ---------------------------------------------------------------------------
# Importance sampling


@dataclass
class IsEstimate:
    estimate: float
    weights: np.ndarray  # normalized, nonnegative, sums to 1
    ess: float
    n_samples: int


class NcpProposal:
    """Draws iid samples from a trained model; log q comes from the trace."""

    def __init__(self, model: NcpModel, workers: int = 1):
        self.model = model
        self.workers = workers

    def draw(self, points: np.ndarray, n_samples: int, seed: int):
        traces = sample_many(self.model, points, n_samples, seed, workers=self.workers)
        assignments = [t.assignment for t in traces]
        log_q = np.array([t.log_q for t in traces])
        return assignments, log_q


class ExactPosteriorProposal:
    """Enumeration-backed sampler from the exact partition posterior.

    Useful as a ground-truth proposal: the weight ratio is then the
    constant evidence, so all normalized weights collapse to 1/S.
    """

    def __init__(self, cfg: GenConfig):
        self.cfg = cfg

    def draw(self, points: np.ndarray, n_samples: int, seed: int):
        dist = exact_posterior(Dataset(np.asarray(points, dtype=np.float64)), self.cfg)
        assignments = [a for a, _ in dist.entries]
        probs = np.array([p for _, p in dist.entries])
        rows = np.stack([a.as_array() for a in assignments])
        log_joint = joint_log_prob_rows(np.asarray(points, dtype=np.float64), rows, self.cfg)
        mx = log_joint.max()
        log_norm = mx + math.log(float(np.sum(np.exp(log_joint - mx))))
        log_probs = log_joint - log_norm
        rng = stream(seed, "exact-proposal")
        idx = rng.choice(probs.size, size=n_samples, p=probs)
        return [assignments[i] for i in idx], log_probs[idx]


def importance_estimate(
    proposal,
    data,
    cfg: GenConfig,
    statistic,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> IsEstimate:
    """Self-normalized importance estimate of E[statistic(c) | x].

    ``proposal`` is an NcpModel, an object with a ``draw`` method, or
    anything returning (assignments, log_q).  Weights are computed in log
    space; a proposal whose every draw has zero joint probability raises
    DegenerateProposalError.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if isinstance(proposal, NcpModel):
        proposal = NcpProposal(proposal, workers=workers)
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    assignments, log_q = proposal.draw(pts, n_samples, seed)
    rows = np.stack([a.as_array() for a in assignments])
    log_joint = joint_log_prob_rows(pts, rows, cfg)
    log_w = log_joint - log_q
    mx = log_w.max()
    if not np.isfinite(mx):
        raise DegenerateProposalError("every importance weight is zero")
    u = np.exp(log_w - mx)
    denom = float(u.sum())
    values = np.array([float(statistic(a)) for a in assignments])
    estimate = float(np.sum(u * values) / denom)
    weights = u / denom
    ess = float(1.0 / np.sum(weights * weights))
    return IsEstimate(estimate=estimate, weights=weights, ess=ess, n_samples=n_samples)


# ---------------------------------------------------------------------------
# Mean-cluster-count comparison


def cluster_count(a: Assignment) -> float:
    return float(a.k_count)


def mean_k_experiment(
    model: NcpModel,
    data,
    cfg: GenConfig,
    budgets: list[int],
    repetitions: int = 8,
    gibbs_burn_in: int = 1000,
    seed: int = 0,
    workers: int = 1,
):
    """Estimate E[K | x] with both methods at several sample budgets.

    Returns (rows, summary): rows carry one record per
    (method, budget, repetition) with the estimate and its wall-clock
    seconds; summary carries median and quartiles per (method, budget).
    """
    if not budgets or any(b < 1 for b in budgets):
        raise ConfigError("budgets must be a nonempty list of positive counts")
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    rows = []
    for rep in range(repetitions):
        for budget in budgets:
            t0 = time.perf_counter()
            est = importance_estimate(
                model,
                pts,
                cfg,
                cluster_count,
                budget,
                seed=int(stream(seed, "is-seed", rep, budget).integers(2**63)),
                workers=workers,
            )
            rows.append(
                {
                    "method": "ncp-is",
                    "budget": budget,
                    "repetition": rep,
                    "estimate": est.estimate,
                    "seconds": time.perf_counter() - t0,
                }
            )
        for budget in budgets:
            t0 = time.perf_counter()
            gcfg = GibbsConfig(
                n_sweeps=budget,
                burn_in=gibbs_burn_in,
                seed=int(stream(seed, "gibbs-seed", rep, budget).integers(2**63)),
            )
            run = run_gibbs(pts, cfg, gcfg)
            rows.append(
                {
                    "method": "gibbs",
                    "budget": budget,
                    "repetition": rep,
                    "estimate": float(run.k_trace.mean()),
                    "seconds": time.perf_counter() - t0,
                }
            )
    summary = []
    for method in ("ncp-is", "gibbs"):
        for budget in budgets:
            vals = np.array(
                [r["estimate"] for r in rows if r["method"] == method and r["budget"] == budget]
            )
            secs = np.array(
                [r["seconds"] for r in rows if r["method"] == method and r["budget"] == budget]
            )
            summary.append(
                {
                    "method": method,
                    "budget": budget,
                    "median": float(np.median(vals)),
                    "q25": float(np.quantile(vals, 0.25)),
                    "q75": float(np.quantile(vals, 0.75)),
                    "median_seconds": float(np.median(secs)),
                }
            )
    return rows, summary
