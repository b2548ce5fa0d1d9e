"""Gradient-noise analysis and the differential-privacy accountant.

Noise pipeline (five steps): compute the full-dataset mean gradient once;
for each of ``n_batches`` random mini batches compute the batch mean
gradient and subtract the full gradient; sample a random subset of the
difference vector's components; pool every sampled component across
batches; divide the pool by its standard deviation. The normalized pool is
what gets histogrammed and fed to the Laplace fit.

Accountant: modelling batch gradients as Laplace(full gradient, b), one
SGD step on an N-example set leaks

    eps_t = 2 * L_erm_t * I_t / (N * b)

and T steps compose to

    eps = sqrt(2 * ln(N / delta') * sum eps_t^2)
          + sum eps_t * (e^eps_t - 1) / (e^eps_t + 1),      delta = delta' / N.

The leading-term budget replaces the per-step series by its fourth-power
composites: eps = (2 * L_1T * I_1T / (N * b)) * sqrt(2 T ln(N / delta')),
dropping an O(1/N^2) remainder; the ERM baseline is the same with
intensity 1. Logs are natural throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import LabeledSet
from .rng import DOMAIN_NOISE, stream

HISTOGRAM_BINS = 201
HISTOGRAM_RANGE = (-10.0, 10.0)


class DegenerateNoiseError(ValueError):
    """Pooled noise has zero spread; nothing to normalize or fit."""


@dataclass(frozen=True)
class NoiseSample:
    """Normalized gradient-noise components plus collection metadata."""

    values: np.ndarray
    divisor: float           # the pooled standard deviation that was divided out
    model_tag: str = ""
    iteration: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if not np.isfinite(v).all():
            raise ValueError("non-finite noise value")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LaplaceFit:
    """Maximum-likelihood Laplace parameters: median location, MAD scale."""

    location: float
    scale: float
    count: int


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    provenance: str  # per_step | composed_thm4 | leading_thm5 | erm_corollary
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epsilon < 0 or not 0 <= self.delta <= 1:
            raise ValueError("budget outside the valid (eps >= 0, delta in [0,1]) region")


def collect_noise(net: nn.DenseNet, dataset: LabeledSet, tau: int, n_batches: int,
                  components_per_batch: int, seed: int,
                  loss_spec: nn.LossSpec = nn.LossSpec(), model_tag: str = "",
                  iteration: int | None = None) -> NoiseSample:
    """Run the five-step noise pipeline against clean-loss gradients.

    Batch indices are drawn without replacement and kept in ascending
    order, so a tau == N batch reproduces the full-gradient summation
    exactly and correctly trips the degenerate-spread error.
    """
    n = len(dataset)
    if not 1 <= tau <= n:
        raise ValueError(f"tau {tau} outside [1, {n}]")
    if n_batches < 1 or components_per_batch < 1:
        raise ValueError("n_batches and components_per_batch must be positive")
    full = nn.mean_grad(net, (dataset.features, dataset.labels), loss_spec)
    if components_per_batch > full.size:
        raise ValueError(f"components_per_batch {components_per_batch} exceeds "
                         f"parameter count {full.size}")
    pooled = np.empty(n_batches * components_per_batch)
    for j in range(n_batches):
        rng = stream(seed, DOMAIN_NOISE, j)
        idx = np.sort(rng.permutation(n)[:tau])
        batch = dataset.subset(idx)
        diff = nn.mean_grad(net, (batch.features, batch.labels), loss_spec) - full
        comp = rng.permutation(full.size)[:components_per_batch]
        pooled[j * components_per_batch:(j + 1) * components_per_batch] = diff[comp]
    sd = float(np.std(pooled))
    if sd <= 0.0:
        raise DegenerateNoiseError("pooled gradient noise has zero standard deviation")
    return NoiseSample(pooled / sd, divisor=sd, model_tag=model_tag, iteration=iteration)


def fit_laplace(sample: NoiseSample | np.ndarray) -> LaplaceFit:
    """Closed-form Laplace MLE: location is the (lower) median, scale the
    mean absolute deviation from it."""
    values = sample.values if isinstance(sample, NoiseSample) else np.asarray(sample, dtype=np.float64)
    if values.size < 2:
        raise ValueError("need at least two values")
    v = np.sort(values)
    if v[0] == v[-1]:
        raise DegenerateNoiseError("all noise values identical; scale would be zero")
    location = float(v[(len(v) - 1) // 2])
    scale = float(np.abs(v - location).mean())
    return LaplaceFit(location=location, scale=scale, count=int(v.size))


def noise_histogram(values: np.ndarray, bins: int = HISTOGRAM_BINS,
                    value_range: tuple[float, float] = HISTOGRAM_RANGE):
    """(edges, counts) over the fixed histogram window; out-of-window values drop."""
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64),
                                 bins=bins, range=value_range)
    return edges, counts


def per_step_epsilon(l_erm_t: float, i_t: float, n: int, b: float) -> float:
    """Single-step privacy loss 2 * L * I / (N * b)."""
    if n < 1:
        raise ValueError("N must be >= 1")
    if not b > 0:
        raise ValueError("Laplace scale b must be positive")
    if l_erm_t < 0 or i_t < 0:
        raise ValueError("gradient statistics must be nonnegative")
    return 2.0 * l_erm_t * i_t / (n * b)


def _check_delta_prime(delta_prime: float, n: int) -> None:
    if n < 1:
        raise ValueError("N must be >= 1")
    if not 0 < delta_prime < n:
        raise ValueError("delta_prime must lie in (0, N) so that ln(N/delta') > 0 "
                         "and delta <= 1")


def compose(eps_list, delta_prime: float, n: int) -> PrivacyBudget:
    """Exact composition of per-step budgets into a whole-run (eps, delta)."""
    _check_delta_prime(delta_prime, n)
    eps = np.asarray(list(eps_list), dtype=np.float64)
    if eps.size and eps.min() < 0:
        raise ValueError("per-step epsilons must be nonnegative")
    log_term = math.log(n / delta_prime)
    sq = math.sqrt(2.0 * log_term * float(np.sum(eps ** 2)))
    second = float(np.sum(eps * np.expm1(eps) / (np.exp(eps) + 1.0)))
    return PrivacyBudget(
        epsilon=sq + second,
        delta=delta_prime / n,
        provenance="composed_thm4",
        inputs={"n": n, "delta_prime": delta_prime, "steps": int(eps.size)},
    )


def leading_epsilon(l_erm_1t: float, i_1t: float, t: int, n: int, b: float,
                    delta_prime: float) -> PrivacyBudget:
    """Leading-term budget from the fourth-power composites (remainder dropped)."""
    _check_delta_prime(delta_prime, n)
    if t < 1:
        raise ValueError("T must be >= 1")
    if not b > 0:
        raise ValueError("Laplace scale b must be positive")
    if l_erm_1t < 0 or i_1t < 0:
        raise ValueError("composites must be nonnegative")
    eps = (2.0 * l_erm_1t * i_1t / (n * b)) * math.sqrt(2.0 * t * math.log(n / delta_prime))
    return PrivacyBudget(
        epsilon=eps,
        delta=delta_prime / n,
        provenance="leading_thm5",
        inputs={"l_erm_1t": l_erm_1t, "i_1t": i_1t, "t": t, "n": n, "b": b,
                "delta_prime": delta_prime},
    )


def erm_epsilon(l_erm_1t: float, t: int, n: int, b: float, delta_prime: float) -> PrivacyBudget:
    """ERM baseline: the leading-term budget at intensity exactly 1."""
    budget = leading_epsilon(l_erm_1t, 1.0, t, n, b, delta_prime)
    return PrivacyBudget(epsilon=budget.epsilon, delta=budget.delta,
                         provenance="erm_corollary", inputs=budget.inputs)
