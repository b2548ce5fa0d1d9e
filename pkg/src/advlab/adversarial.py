"""PGD inner maximization on norm balls, and the resulting adversarial gradients.

The attack runs K steps of projected gradient ascent on the per-example
loss, starting from the clean input (no random restart). The L-infinity
update moves by ``alpha * sign(grad)`` and projects by componentwise
clamping; the L2 update moves by ``alpha * grad`` and projects by radial
scaling. The gradient of the inner max is taken as the parameter gradient
evaluated at the attack endpoint.

Feature-space box constraints are deliberately not applied: the lab works
in unbounded feature space, so adversarial points are constrained only by
the norm ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledSet

NORMS = ("linf", "l2")
DEFAULT_STEPS = 8


@dataclass(frozen=True)
class AttackSpec:
    """PGD configuration: ball norm, radius, step count, step size.

    ``step_size=None`` means the radius/4 default; with ``radius=0`` the
    attack is a no-op and the step size is irrelevant.
    """

    norm: str = "linf"
    radius: float = 0.0
    steps: int = DEFAULT_STEPS
    step_size: float | None = None

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive when given")

    @property
    def alpha(self) -> float:
        return self.radius / 4.0 if self.step_size is None else self.step_size


def project(center: np.ndarray, point: np.ndarray, norm: str, radius: float) -> np.ndarray:
    """Nearest point to ``point`` in the radius-ball around ``center``."""
    center = np.asarray(center, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    if center.shape != point.shape:
        raise ValueError("center and point must share a shape")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    d = point - center
    if norm == "linf":
        return center + np.clip(d, -radius, radius)
    if norm == "l2":
        dist = np.linalg.norm(d)
        if dist <= radius:
            return point
        return center + d * (radius / dist)
    raise ValueError(f"unknown norm {norm!r}")


def _project_rows(clean: np.ndarray, pts: np.ndarray, norm: str, radius: float) -> np.ndarray:
    d = pts - clean
    if norm == "linf":
        return clean + np.clip(d, -radius, radius)
    dist = np.linalg.norm(d, axis=1, keepdims=True)
    scale = np.where(dist > radius, radius / np.maximum(dist, 1e-300), 1.0)
    return clean + d * scale


def pgd_batch(net: nn.DenseNet, features: np.ndarray, labels: np.ndarray,
              attack: AttackSpec, loss_spec: nn.LossSpec = nn.LossSpec()) -> np.ndarray:
    """PGD endpoints for every row; rows are attacked independently.

    Row i of the result is exactly what a sequential single-example attack
    would produce, so batching is only a speed concern.
    """
    x0 = np.asarray(features, dtype=np.float64)
    if attack.radius == 0.0 or attack.steps == 0:
        return x0.copy()
    labels = np.asarray(labels)
    x = x0.copy()
    for _ in range(attack.steps):
        g = nn.grad_inputs(net, x, labels, loss_spec)
        if attack.norm == "linf":
            x = x + attack.alpha * np.sign(g)
        else:
            x = x + attack.alpha * g
        x = _project_rows(x0, x, attack.norm, attack.radius)
    return x


def pgd_attack(net: nn.DenseNet, features: np.ndarray, label: int,
               attack: AttackSpec, loss_spec: nn.LossSpec = nn.LossSpec()) -> np.ndarray:
    """Single-example PGD; returns the adversarial feature vector."""
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    return pgd_batch(net, x, np.array([label]), attack, loss_spec)[0]


def adv_grad(net: nn.DenseNet, batch: LabeledSet, attack: AttackSpec,
             loss_spec: nn.LossSpec = nn.LossSpec()):
    """Adversarial-loss gradients: per-example gradients at each PGD endpoint.

    Returns ``(mean_grad, per_example, per_example_adv_loss)``. With radius
    0 this collapses bitwise to :func:`advlab.nn.grad_params` plus the
    clean losses.
    """
    x_adv = pgd_batch(net, batch.features, batch.labels, attack, loss_spec)
    mean, per_example = nn.grad_params(net, (x_adv, batch.labels), loss_spec)
    _, losses = nn.loss_batch(net, (x_adv, batch.labels), loss_spec)
    return mean, per_example, losses
