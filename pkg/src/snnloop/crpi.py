"""Cross-step residual potential initialization (CRPI).

Instead of restarting every hidden membrane at its rest value each decision
step, CRPI starts step k from::

    dv   = max(v_{k-1}[T] - v_{k-1}[0], -sum_t x_{k-1}[t])
    v[0] = clip(rest + alpha * dv, 0, theta)

which pushes the unreleased charge of the previous step into the next one
and decorrelates the residual errors of consecutive decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ValidationError


@dataclass
class CrpiState:
    """Per-rollout CRPI memory.

    ``symmetric_clip`` clips to ``[-theta, theta]`` instead of ``[0, theta]``;
    it is an ablation for signed neurons and off by default.
    """

    alpha: float
    symmetric_clip: bool = False
    k: int = 0
    v0_prev: list = field(default_factory=list)
    vT_prev: list = field(default_factory=list)
    sumx_prev: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")


def begin_decision_step(net, crpi: CrpiState) -> None:
    """Set every hidden layer's initial membrane for the coming decision step."""
    if crpi.k == 0:
        net.reset_state()
        return
    for layer, v0, vT, sx in zip(net.layers, crpi.v0_prev, crpi.vT_prev, crpi.sumx_prev):
        dv = np.maximum(vT - v0, -sx)
        lo = -layer.theta if crpi.symmetric_clip else 0.0
        layer.reset(np.clip(layer.rest_potential() + crpi.alpha * dv, lo, layer.theta))


def end_decision_step(net, crpi: CrpiState) -> CrpiState:
    """Record v[0], v[T] and sum_t x[t] of the inference that just ran."""
    if not net.has_fresh_inference:
        raise ProtocolError("end_decision_step called without a new inference")
    crpi.v0_prev = [l.v0.copy() for l in net.layers]
    crpi.vT_prev = [l.v.copy() for l in net.layers]
    crpi.sumx_prev = [l.sum_x.copy() for l in net.layers]
    crpi.k += 1
    net.has_fresh_inference = False
    return crpi


def residual_error(v0, vT, T: int) -> np.ndarray:
    """Residual membrane error ``(vT - v0) / T``."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    return (np.asarray(vT, dtype=np.float64) - np.asarray(v0, dtype=np.float64)) / T
