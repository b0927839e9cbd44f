"""Minimal dense network engine: MLPs with PReLU, exact reverse-mode gradients, ADAM.

Everything is float64.  A forward pass returns a cache that the matching
backward pass consumes; parameters are plain lists of numpy arrays so
optimizer state and finite-difference checks can walk them generically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one MLP: affine layers with PReLU between them.

    ``hidden`` lists the widths of the layers before the final affine map;
    the final layer has no activation.  Each non-final layer carries one
    learnable PReLU slope scalar.
    """

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1 or any(w < 1 for w in self.hidden):
            raise ConfigError(f"invalid MLP dims: {self}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": list(self.hidden), "out_dim": self.out_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(int(d["in_dim"]), tuple(int(w) for w in d["hidden"]), int(d["out_dim"]))


@dataclass
class MlpParams:
    """Weights, biases, and per-layer PReLU slopes for one MLP."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: list[np.ndarray]  # one () array per non-final layer

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.slopes]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [s.copy() for s in self.slopes],
        )

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            [np.zeros_like(s) for s in self.slopes],
        )

    def add_(self, other: "MlpParams") -> None:
        for a, b in zip(self.arrays(), other.arrays()):
            a += b


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """He-style fan-in scaled normal weights, zero biases, PReLU slope 0.25."""
    weights, biases, slopes = [], [], []
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        if i < spec.n_layers - 1:
            slopes.append(np.array(0.25))
    return MlpParams(weights, biases, slopes)


def mlp_forward(params: MlpParams, spec: MlpSpec, x: np.ndarray):
    """Batched forward pass; returns (output, cache) with cache feeding mlp_backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ConfigError(f"input shape {x.shape} does not match in_dim {spec.in_dim}")
    inputs = [x]
    preacts = []
    out = x
    n = spec.n_layers
    for i in range(n):
        z = out @ params.weights[i] + params.biases[i]
        if i < n - 1:
            preacts.append(z)
            slope = params.slopes[i]
            out = np.where(z > 0.0, z, slope * z)
            inputs.append(out)
        else:
            out = z
    return out, (inputs, preacts)


def mlp_backward(params: MlpParams, spec: MlpSpec, cache, upstream: np.ndarray):
    """Exact gradients for all parameters and the input.

    The PReLU derivative at exactly zero uses the positive branch (slope 1).
    Returns (grads: MlpParams, dx).
    """
    inputs, preacts = cache
    n = spec.n_layers
    upstream = np.asarray(upstream, dtype=np.float64)
    grads = params.zeros_like()
    d = upstream
    for i in range(n - 1, -1, -1):
        grads.weights[i] = inputs[i].T @ d
        grads.biases[i] = d.sum(axis=0)
        d = d @ params.weights[i].T
        if i > 0:
            z = preacts[i - 1]
            neg = z < 0.0
            grads.slopes[i - 1] = np.array(np.sum(d * z * neg))
            d = d * np.where(neg, params.slopes[i - 1], 1.0)
    return grads, d


@dataclass
class AdamState:
    """ADAM moments and step counter for one parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
        )


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant step size: ``breakpoints`` is ((last_step, lr), ...).

    A breakpoint with last_step=None covers everything after the previous
    one.  The shipped default is 1e-4 through step 1000 and 1e-5 after.
    """

    breakpoints: tuple[tuple[int | None, float], ...] = ((1000, 1e-4), (None, 1e-5))

    def __post_init__(self):
        if not self.breakpoints or self.breakpoints[-1][0] is not None:
            raise ConfigError("last LR breakpoint must have last_step=None")
        for last, lr in self.breakpoints:
            if lr <= 0:
                raise ConfigError(f"learning rates must be > 0, got {lr}")

    def lr_at(self, t: int) -> float:
        for last, lr in self.breakpoints:
            if last is None or t <= last:
                return lr
        raise AssertionError("unreachable")

    def to_list(self) -> list:
        return [[last, lr] for last, lr in self.breakpoints]

    @classmethod
    def from_list(cls, raw) -> "LrSchedule":
        return cls(tuple((None if a is None else int(a), float(b)) for a, b in raw))


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    state: AdamState,
    schedule: LrSchedule,
    clip_norm: float | None = None,
) -> None:
    """One in-place ADAM update with bias correction.

    Raises NumericError on non-finite gradients so training aborts loudly
    instead of silently corrupting parameters.
    """
    garrays = grads.arrays()
    for g in garrays:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient encountered")
    if clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in garrays))
        if total > clip_norm:
            scale = clip_norm / total
            garrays = [g * scale for g in garrays]
    state.t += 1
    lr = schedule.lr_at(state.t)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params.arrays(), garrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
