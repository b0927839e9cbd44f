"""Dirichlet-process Gaussian mixture generative model and exact small-N oracles.

The generative process: a partition of N points is drawn from a Chinese
restaurant process with concentration ``alpha``; each cluster mean is drawn
from an isotropic Gaussian prior with standard deviation ``sigma_mu``; each
observation is Gaussian around its cluster mean with standard deviation
``sigma_x``.  Because the mean prior is conjugate, cluster means integrate
out in closed form, which makes the partition posterior computable exactly
by enumeration for small N.

Conventions used throughout:

* Assignments are always canonical: cluster labels are positive integers
  numbered in order of first appearance, so each set partition corresponds
  to exactly one label sequence.
* All probability arithmetic is carried out in log space; normalization
  uses a max-shifted log-sum-exp.
* Marginal likelihoods include all normalization constants, so
  ``joint_log_prob`` is a proper log density over (assignment, points) and
  importance weights built from it are interpretable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EnumerationLimitError

# Bell(12) = 4,213,597 canonical assignments; beyond this, enumeration is refused.
ENUMERATION_LIMIT = 12


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the generative process.

    Parameters
    ----------
    alpha : float
        Concentration of the Dirichlet process (> 0).
    sigma_mu : float
        Standard deviation of the Gaussian prior over cluster means (> 0).
    sigma_x : float
        Observation standard deviation around the cluster mean (> 0).
    dim_x : int
        Dimension of each observation.
    n_min, n_max : int
        Support of the uniform distribution over the number of points.
    """

    alpha: float
    sigma_mu: float
    sigma_x: float
    dim_x: int = 1
    n_min: int = 5
    n_max: int = 50

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.sigma_mu > 0:
            raise ConfigError(f"sigma_mu must be > 0, got {self.sigma_mu}")
        if not self.sigma_x > 0:
            raise ConfigError(f"sigma_x must be > 0, got {self.sigma_x}")
        if self.dim_x < 1:
            raise ConfigError(f"dim_x must be >= 1, got {self.dim_x}")
        if not (1 <= self.n_min <= self.n_max):
            raise ConfigError(f"need 1 <= n_min <= n_max, got [{self.n_min}, {self.n_max}]")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "sigma_mu": self.sigma_mu,
            "sigma_x": self.sigma_x,
            "dim_x": self.dim_x,
            "n_min": self.n_min,
            "n_max": self.n_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        try:
            return cls(
                alpha=float(d["alpha"]),
                sigma_mu=float(d["sigma_mu"]),
                sigma_x=float(d["sigma_x"]),
                dim_x=int(d["dim_x"]),
                n_min=int(d["n_min"]),
                n_max=int(d["n_max"]),
            )
        except KeyError as e:
            raise ConfigError(f"generative config is missing field {e.args[0]!r}") from e


def canonicalize_labels(labels) -> np.ndarray:
    """Renumber cluster labels in order of first appearance (1-based)."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigError("labels must be a nonempty 1-d sequence")
    out = np.empty(labels.size, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, raw in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(raw, len(mapping) + 1)
    return out


def is_canonical(labels) -> bool:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        return False
    seen_max = 0
    for v in labels.tolist():
        if v < 1 or v > seen_max + 1:
            return False
        seen_max = max(seen_max, v)
    return True


@dataclass(frozen=True)
class Assignment:
    """A canonical cluster-label sequence.

    ``labels`` holds c_1..c_N with labels numbered in first-appearance
    order; ``k_count`` is the number of distinct clusters.
    """

    labels: tuple[int, ...]
    k_count: int = field(init=False)

    def __post_init__(self):
        if not is_canonical(np.asarray(self.labels)):
            raise ConfigError(f"labels are not canonical: {self.labels}")
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        object.__setattr__(self, "k_count", max(self.labels))

    @classmethod
    def from_labels(cls, labels, canonicalize: bool = False) -> "Assignment":
        arr = np.asarray(labels)
        if canonicalize:
            arr = canonicalize_labels(arr)
        return cls(tuple(int(v) for v in arr))

    def __len__(self) -> int:
        return len(self.labels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.as_array(), minlength=self.k_count + 1)[1:]


@dataclass
class Dataset:
    """N observation vectors plus optional generative metadata."""

    points: np.ndarray
    true_assignment: Assignment | None = None
    true_means: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ConfigError(f"points must be (n, dim), got shape {self.points.shape}")
        if self.true_assignment is not None and len(self.true_assignment) != self.n:
            raise ConfigError(
                f"assignment length {len(self.true_assignment)} != point count {self.n}"
            )
        if self.true_means is not None:
            self.true_means = np.asarray(self.true_means, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class PartitionDistribution:
    """Exhaustive distribution over canonical assignments of a fixed N."""

    entries: list[tuple[Assignment, float]]
    total: float

    def prob_of(self, a: Assignment) -> float:
        for entry, p in self.entries:
            if entry.labels == a.labels:
                return p
        raise KeyError(f"assignment {a.labels} not found")

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {entry.labels: p for entry, p in self.entries}


# ---------------------------------------------------------------------------
# Prior over partitions


def sample_crp(alpha: float, n: int, rng: np.random.Generator) -> Assignment:
    """Draw a canonical assignment of ``n`` points from the Chinese restaurant process.

    Point i joins existing cluster k with probability n_k / (i - 1 + alpha)
    and opens a new cluster with probability alpha / (i - 1 + alpha).
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    labels = np.empty(n, dtype=np.int64)
    labels[0] = 1
    sizes = [1]
    for i in range(1, n):
        u = rng.random() * (i + alpha)
        acc = 0.0
        chosen = len(sizes)  # falls through to a new cluster
        for k, sz in enumerate(sizes):
            acc += sz
            if u < acc:
                chosen = k
                break
        if chosen == len(sizes):
            sizes.append(1)
        else:
            sizes[chosen] += 1
        labels[i] = chosen + 1
    return Assignment.from_labels(labels)


def crp_log_prob(a: Assignment, alpha: float) -> float:
    """Exact log prior probability of a canonical assignment under the CRP.

    Depends on the assignment only through its multiset of cluster sizes.
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    n = len(a)
    sizes = a.cluster_sizes()
    out = a.k_count * math.log(alpha)
    out += sum(math.lgamma(int(sz)) for sz in sizes)  # log (n_k - 1)!
    out -= sum(math.log(i + alpha) for i in range(n))
    return out


def expected_k(alpha: float, n: int) -> float:
    """Closed-form CRP expectation of the number of clusters among n points."""
    return float(np.sum(alpha / (alpha + np.arange(n))))


# ---------------------------------------------------------------------------
# Sampling datasets


def sample_dataset(cfg: GenConfig, rng: np.random.Generator) -> Dataset:
    """Draw (N, assignment, means, points) from the full generative process."""
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    a = sample_crp(cfg.alpha, n, rng)
    means = rng.normal(0.0, cfg.sigma_mu, size=(a.k_count, cfg.dim_x))
    noise = rng.normal(0.0, cfg.sigma_x, size=(n, cfg.dim_x))
    points = means[a.as_array() - 1] + noise
    return Dataset(points, true_assignment=a, true_means=means)


# ---------------------------------------------------------------------------
# Exact likelihood / joint


def _log_factorial_table(n: int) -> np.ndarray:
    # table[m] = log m!
    out = np.zeros(n + 1)
    if n >= 1:
        out[1:] = np.cumsum(np.log(np.arange(1, n + 1, dtype=np.float64)))
    return out


def joint_log_prob_rows(points: np.ndarray, labels: np.ndarray, cfg: GenConfig) -> np.ndarray:
    """Vectorized log p(c, x) for a matrix of canonical label rows.

    ``labels`` is (m, n) with labels in 1..K per row; ``points`` is (n, d).
    Means are integrated out per cluster and per dimension; all
    normalization constants are included.
    """
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[None, :]
    m, n = labels.shape
    x = np.asarray(points, dtype=np.float64)
    if x.shape[0] != n:
        raise ConfigError(f"labels cover {n} points but data has {x.shape[0]}")
    d = x.shape[1]
    kmax = int(labels.max())

    onehot = labels[:, :, None] == np.arange(1, kmax + 1)[None, None, :]  # (m, n, kmax)
    counts = onehot.sum(axis=1).astype(np.float64)  # (m, kmax)
    sums = np.einsum("ijk,jd->ikd", onehot, x)  # (m, kmax, d)
    sqsums = np.einsum("ijk,jd->ikd", onehot, x * x)  # (m, kmax, d)

    # CRP prior term.
    k_counts = labels.max(axis=1)
    logfact = _log_factorial_table(n)
    prior = k_counts * math.log(cfg.alpha)
    int_counts = np.minimum(counts.astype(np.int64), n)
    prior = prior + logfact[np.maximum(int_counts - 1, 0)].sum(axis=1)
    prior = prior - sum(math.log(i + cfg.alpha) for i in range(n))

    # Marginal likelihood term: empty clusters contribute exactly zero
    # (posterior variance equals the prior variance and the sums vanish).
    s2 = cfg.sigma_x**2
    l2 = cfg.sigma_mu**2
    post_var = 1.0 / (1.0 / l2 + counts / s2)  # (m, kmax)
    lik = d * (0.5 * np.log(post_var / l2) - 0.5 * counts * math.log(2.0 * math.pi * s2))
    lik = lik + (post_var[:, :, None] * sums**2 / (2.0 * s2 * s2) - sqsums / (2.0 * s2)).sum(axis=2)

    return prior + lik.sum(axis=1)


def marginal_log_lik(data: Dataset, a: Assignment, cfg: GenConfig) -> float:
    """log p(x | c) with cluster means integrated out, constants included."""
    if len(a) != data.n:
        raise ConfigError(f"assignment covers {len(a)} points but data has {data.n}")
    return joint_log_prob_rows(data.points, a.as_array(), cfg)[0] - crp_log_prob(a, cfg.alpha)


def joint_log_prob(data: Dataset, a: Assignment, cfg: GenConfig) -> float:
    """Proper joint log density log p(c, x) = log p(c) + log p(x | c)."""
    if len(a) != data.n:
        raise ConfigError(f"assignment covers {len(a)} points but data has {data.n}")
    return float(joint_log_prob_rows(data.points, a.as_array(), cfg)[0])


# ---------------------------------------------------------------------------
# Enumeration oracles


def label_matrix(n: int) -> np.ndarray:
    """All canonical label rows of length n, lexicographic, as an (m, n) int array."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"enumeration is limited to n <= {ENUMERATION_LIMIT}, got {n}"
        )
    rows = np.ones((1, 1), dtype=np.int8)
    kmax = np.ones(1, dtype=np.int8)
    for _ in range(1, n):
        branching = kmax.astype(np.int64) + 1
        row_idx = np.repeat(np.arange(rows.shape[0]), branching)
        total = int(branching.sum())
        starts = np.repeat(np.cumsum(branching) - branching, branching)
        new_col = (np.arange(total) - starts + 1).astype(np.int8)
        rows = np.concatenate([rows[row_idx], new_col[:, None]], axis=1)
        kmax = np.maximum(kmax[row_idx], new_col)
    return rows


def enumerate_assignments(n: int) -> list[Assignment]:
    """All canonical assignments of n points, each exactly once, lexicographic."""
    return [Assignment(tuple(int(v) for v in row)) for row in label_matrix(n)]


def complete_label_matrix(prefix: np.ndarray, n_total: int) -> np.ndarray:
    """All canonical completions of ``prefix`` out to ``n_total`` points."""
    prefix = np.asarray(prefix, dtype=np.int64)
    rows = prefix[None, :].astype(np.int16)
    kmax = np.array([prefix.max() if prefix.size else 0], dtype=np.int16)
    if prefix.size == 0:
        raise ConfigError("prefix must contain at least one point")
    for _ in range(prefix.size, n_total):
        branching = kmax.astype(np.int64) + 1
        row_idx = np.repeat(np.arange(rows.shape[0]), branching)
        total = int(branching.sum())
        starts = np.repeat(np.cumsum(branching) - branching, branching)
        new_col = (np.arange(total) - starts + 1).astype(np.int16)
        rows = np.concatenate([rows[row_idx], new_col[:, None]], axis=1)
        kmax = np.maximum(kmax[row_idx], new_col)
    return rows


def _logsumexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(values - m))))


def exact_posterior(data: Dataset, cfg: GenConfig) -> PartitionDistribution:
    """Exact posterior over partitions by full enumeration (data.n <= guard)."""
    if data.n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"exact posterior is limited to n <= {ENUMERATION_LIMIT}, got {data.n}"
        )
    rows = label_matrix(data.n)
    logp = joint_log_prob_rows(data.points, rows, cfg)
    norm = _logsumexp(logp)
    probs = np.exp(logp - norm)
    probs /= probs.sum()
    entries = [
        (Assignment(tuple(int(v) for v in row)), float(p)) for row, p in zip(rows, probs)
    ]
    return PartitionDistribution(entries=entries, total=float(probs.sum()))


def exact_conditional(
    data: Dataset, prefix: Assignment, n: int, cfg: GenConfig
) -> np.ndarray:
    """Exact p(c_n = k | c_{1:n-1}, x) for k = 1..K+1.

    For n == data.n (the last point) the sum over the remaining points is
    empty and the conditional reduces to K+1 joint evaluations, so any N is
    allowed; otherwise the completion enumeration is guarded at
    ``ENUMERATION_LIMIT`` points.
    """
    if n < 1 or n > data.n:
        raise ConfigError(f"position n={n} outside 1..{data.n}")
    if len(prefix) != n - 1:
        raise ConfigError(f"prefix covers {len(prefix)} points, expected {n - 1}")
    if n == 1:
        return np.array([1.0])
    k = prefix.k_count
    prefix_arr = prefix.as_array()
    if n == data.n:
        rows = np.concatenate(
            [np.tile(prefix_arr, (k + 1, 1)), np.arange(1, k + 2)[:, None]], axis=1
        )
        logw = joint_log_prob_rows(data.points, rows, cfg)
    else:
        if data.n > ENUMERATION_LIMIT:
            raise EnumerationLimitError(
                f"exact conditional at n < N is limited to N <= {ENUMERATION_LIMIT}, "
                f"got N = {data.n}"
            )
        rows = complete_label_matrix(prefix_arr, data.n)
        logp = joint_log_prob_rows(data.points, rows, cfg)
        choices = rows[:, n - 1]
        logw = np.array(
            [_logsumexp(logp[choices == c]) for c in range(1, k + 2)]
        )
    probs = np.exp(logw - _logsumexp(logw))
    probs /= probs.sum()
    return probs
