"""Robustified-intensity computation.

The single-iteration intensity is the ratio of two batch statistics: the
max per-example gradient norm of the attacked loss at the adversarially
trained iterate, over the max per-example clean gradient norm at the ERM
iterate. A whole run is summarized by the fourth-power mean root of its
per-iteration intensities; the same aggregation is applied to the clean
max-norm series for the privacy accountant.

The consistency probe quantifies how fast the batch estimate approaches
the full-dataset value as the batch grows, holding both parameter vectors
fixed so only batch sampling varies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .adversarial import AttackSpec, pgd_batch
from .data import LabeledSet
from .rng import DOMAIN_PROBE, stream
from .training import IterationRecord

DEGENERATE_DENOMINATOR = 1e-30


class DegenerateDenominatorError(ValueError):
    """Clean max gradient norm is numerically zero (training converged)."""


def single_intensity(l_adv: float, l_erm: float) -> float:
    """Ratio l_adv / l_erm of max gradient norms for one iteration."""
    if l_adv < 0:
        raise ValueError("l_adv must be nonnegative")
    if l_erm <= DEGENERATE_DENOMINATOR:
        raise DegenerateDenominatorError(
            f"clean max gradient norm {l_erm!r} is degenerate; skip this record")
    return l_adv / l_erm


def composite_intensity(values) -> float:
    """Fourth-power mean root: (mean(v^4))^(1/4)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty series")
    if not (v > 0).all():
        raise ValueError("series entries must be positive")
    return float(np.mean(v ** 4) ** 0.25)


@dataclass(frozen=True)
class IntensitySeries:
    """Per-iteration intensities of one run plus their composites."""

    entries: tuple[tuple[int, float], ...]  # (t, intensity), degenerate records dropped
    intensity_1t: float
    l_erm_1t: float
    skipped: int = 0

    @staticmethod
    def from_records(records: list[IterationRecord]) -> "IntensitySeries":
        good = [r for r in records if not r.degenerate]
        if not good:
            raise DegenerateDenominatorError("every logged record was degenerate")
        return IntensitySeries(
            entries=tuple((r.t, r.intensity) for r in good),
            intensity_1t=composite_intensity([r.intensity for r in good]),
            l_erm_1t=composite_intensity([r.l_erm for r in good]),
            skipped=len(records) - len(good),
        )


@dataclass(frozen=True)
class ProbeRow:
    tau: int
    mean_estimate: float
    full_value: float


def consistency_probe(net_erm: nn.DenseNet, net_adv: nn.DenseNet, dataset: LabeledSet,
                      attack: AttackSpec, tau_grid, repeats: int, seed: int,
                      loss_spec: nn.LossSpec = nn.LossSpec()) -> list[ProbeRow]:
    """Batch-size sweep of the intensity estimate at a fixed parameter pair.

    Per-example gradient norms do not depend on which batch an example
    lands in, so they are computed once for the whole dataset and each
    batch estimate is a subset max over precomputed norms. The tau == N
    row is the full-dataset value itself, computed exactly once.
    """
    n = len(dataset)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for tau in tau_grid:
        if not 1 <= tau <= n:
            raise ValueError(f"tau {tau} outside [1, {n}]")
    clean_norms = nn.per_example_grad_norms(
        net_erm, (dataset.features, dataset.labels), loss_spec)
    x_adv = pgd_batch(net_adv, dataset.features, dataset.labels, attack, loss_spec)
    adv_norms = nn.per_example_grad_norms(net_adv, (x_adv, dataset.labels), loss_spec)
    full = single_intensity(float(adv_norms.max()), float(clean_norms.max()))

    rows = []
    for j, tau in enumerate(tau_grid):
        if tau == n:
            rows.append(ProbeRow(tau, full, full))
            continue
        estimates = np.empty(repeats)
        for r in range(repeats):
            rng = stream(seed, DOMAIN_PROBE, j * repeats + r)
            idx = rng.permutation(n)[:tau]
            estimates[r] = single_intensity(float(adv_norms[idx].max()),
                                            float(clean_norms[idx].max()))
        rows.append(ProbeRow(tau, float(estimates.mean()), full))
    return rows
