"""Spiking neuron models used for conversion.

Four kinds are supported:

* ``if``  - integrate-and-fire with reset by subtraction.
* ``snm`` - signed neuron with memory; emits +-theta spikes, and negative
  spikes are only allowed while the cumulative output ``c`` can absorb them.
* ``mt``  - multi-threshold neuron with ``n`` positive thresholds
  ``theta / 2**(i-1)`` and their negatives; each step fires the threshold
  nearest to the membrane potential (on a log2 scale).
* ``dc``  - differential coding wrapper around an ``if`` or ``mt`` neuron.

Every step function updates a :class:`SpikingLayer` in place and returns the
postsynaptic output ``x`` for that simulation step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericFault, ValidationError

KINDS = ("if", "snm", "mt", "dc")


@dataclass(frozen=True)
class NeuronKind:
    name: str
    n: int = 4
    inner: Optional["NeuronKind"] = None
    snm_literal: bool = False

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValidationError(f"unknown neuron kind {self.name!r}; expected one of {KINDS}")
        if self.name in ("mt",) and self.n < 1:
            raise ValidationError(f"MT neuron needs n >= 1, got {self.n}")
        if self.name == "dc":
            inner = self.inner if self.inner is not None else NeuronKind("mt", self.n)
            if inner.name not in ("if", "mt"):
                raise ValidationError(f"DC can only wrap 'if' or 'mt', got {inner.name!r}")
            object.__setattr__(self, "inner", inner)
        elif self.inner is not None:
            raise ValidationError(f"only DC neurons take an inner kind (got {self.name})")

    @classmethod
    def parse(cls, spec: str) -> "NeuronKind":
        """Build a kind from strings like ``if``, ``snm``, ``mt:4``, ``dc``, ``dc:if``, ``dc:mt:2``."""
        parts = spec.lower().split(":")
        name = parts[0]
        if name == "dc":
            inner = cls.parse(":".join(parts[1:])) if len(parts) > 1 else None
            return cls("dc", inner.n if inner else 4, inner)
        if name == "mt" and len(parts) > 1:
            return cls("mt", int(parts[1]))
        if name == "snm" and len(parts) > 1 and parts[1] == "literal":
            return cls("snm", snm_literal=True)
        if len(parts) > 1:
            raise ValidationError(f"cannot parse neuron kind {spec!r}")
        return cls(name)

    def to_dict(self) -> dict:
        d = {"kind": self.name}
        if self.name == "mt":
            d["n"] = self.n
        if self.name == "snm" and self.snm_literal:
            d["literal"] = True
        if self.name == "dc":
            d["inner"] = self.inner.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NeuronKind":
        name = d["kind"]
        if name == "dc":
            inner = cls.from_dict(d["inner"]) if d.get("inner") else None
            return cls("dc", inner.n if inner else 4, inner)
        return cls(name, int(d.get("n", 4)), snm_literal=bool(d.get("literal", False)))

    @property
    def signed(self) -> bool:
        """True when the neuron can emit negative output."""
        core = self.inner if self.name == "dc" else self
        return core.name in ("snm", "mt")

    def __str__(self):
        if self.name == "mt":
            return f"mt:{self.n}"
        if self.name == "dc":
            return f"dc:{self.inner}"
        return self.name + (":literal" if self.snm_literal else "")


@dataclass
class SpikingLayer:
    """One spiking layer: affine input map plus per-channel neuron state.

    ``weights``/``bias`` produce the input current from the previous layer's
    output.  For DC layers ``bias`` is zero and the original bias lives in
    ``mr_init`` instead.
    """

    weights: np.ndarray
    bias: np.ndarray
    theta: np.ndarray
    kind: NeuronKind
    mr_init: Optional[np.ndarray] = None
    v: np.ndarray = field(init=False)
    v0: np.ndarray = field(init=False)
    c: np.ndarray = field(init=False)
    m_r: np.ndarray = field(init=False)
    sum_x: np.ndarray = field(init=False)
    t: int = field(init=False, default=0)
    spike_events: int = field(init=False, default=0)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.shape[0] != self.weights.shape[0]:
            raise ValidationError(
                f"theta has {self.theta.shape[0]} channels, layer has {self.weights.shape[0]}")
        if not (np.all(self.theta > 0) and np.isfinite(self.theta).all()):
            raise ValidationError("thresholds must be positive and finite")
        if self.mr_init is None:
            self.mr_init = np.zeros(self.size)
        self.reset(self.rest_potential())

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    def rest_potential(self) -> np.ndarray:
        """Fresh initial membrane: theta/2, or 0 for differential coding."""
        if self.kind.name == "dc":
            return np.zeros(self.size)
        return 0.5 * self.theta

    def reset(self, v_init: np.ndarray, batch: Optional[int] = None) -> None:
        """Start a new decision step from membrane ``v_init``.

        With ``batch`` every state array gets a leading axis of that length,
        so ``batch`` independent copies of the layer step together.
        """
        shape = (self.size,) if batch is None else (batch, self.size)
        self.v = np.array(np.broadcast_to(v_init, shape), dtype=np.float64)
        self.v0 = self.v.copy()
        self.c = np.zeros(shape)
        self.m_r = np.array(np.broadcast_to(self.mr_init, shape), dtype=np.float64)
        self.sum_x = np.zeros(shape)
        self.t = 0

    def step(self, current: np.ndarray) -> np.ndarray:
        return STEP[self.kind.name](self, current)


def _integrate(layer: SpikingLayer, current) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):  # reported just below
        m = layer.v + current
    if not np.isfinite(m).all():
        raise NumericFault("non-finite membrane potential")
    return m


def _emit(layer: SpikingLayer, m: np.ndarray, x: np.ndarray) -> np.ndarray:
    layer.v = m - x
    layer.sum_x += x
    layer.spike_events += int(np.count_nonzero(x))
    return x


def if_step(layer: SpikingLayer, current) -> np.ndarray:
    m = _integrate(layer, current)
    x = np.where(m >= layer.theta, layer.theta, 0.0)
    return _emit(layer, m, x)


def snm_step(layer: SpikingLayer, current) -> np.ndarray:
    m = _integrate(layer, current)
    th = layer.theta
    pos = m >= th
    if layer.kind.snm_literal:
        # H(m - th) - H(-m + th) * H(c + th), with H(0) = 1
        neg = (th - m >= 0) & (layer.c + th >= 0)
    else:
        neg = (m <= -th) & (layer.c >= th)
    x = th * (pos.astype(np.float64) - neg.astype(np.float64))
    layer.c = layer.c + x
    return _emit(layer, m, x)


def _log2_bucket(u: np.ndarray) -> np.ndarray:
    """Integer k with u in [3/4 * 2**k, 3/2 * 2**k) for u > 0.

    Equivalent to the exponent of ``4/3 * u`` but read off ``frexp(u)``
    directly, so no rounding of the 4/3 factor is involved.
    """
    mant, ex = np.frexp(u)
    return np.where(mant >= 0.75, ex, ex - 1)


def mt_output(m: np.ndarray, theta: np.ndarray, c: np.ndarray, n: int) -> np.ndarray:
    """Multi-threshold output for pre-reset membranes ``m`` (no state change).

    Positive: fire ``theta * 2**-j`` where ``j = -k`` of the log2 bucket of
    ``m/theta``; j < 0 saturates to the base threshold, j > n-1 is silent.
    Negative: same selection on ``|m|/theta``, then ``j`` is raised until the
    threshold no longer exceeds the cumulative output ``c``.
    """
    u = m / theta
    au = np.abs(u)
    with np.errstate(divide="ignore"):
        j = np.where(au > 0, -_log2_bucket(np.where(au > 0, au, 1.0)), n)
    j = np.maximum(j, 0)

    pos = (u > 0) & (j <= n - 1)
    x = np.where(pos, np.ldexp(theta, -np.minimum(j, n - 1)), 0.0)

    neg = (u < 0) & (j <= n - 1) & (c > 0)
    if np.any(neg):
        cu = np.where(c > 0, c / theta, 1.0)
        jc = np.maximum(-(np.frexp(cu)[1] - 1), 0)
        jn = np.maximum(j, jc)
        lam = np.ldexp(theta, -np.minimum(jn, 1023))
        # guard against c/theta rounding up past a power of two
        over = lam > c
        jn = np.where(over, jn + 1, jn)
        lam = np.where(over, lam * 0.5, lam)
        neg &= jn <= n - 1
        x = np.where(neg, -lam, x)
    return x


def mt_step(layer: SpikingLayer, current) -> np.ndarray:
    m = _integrate(layer, current)
    x = mt_output(m, layer.theta, layer.c, layer.kind.n)
    layer.c = layer.c + x
    return _emit(layer, m, x)


def dc_step(layer: SpikingLayer, x_prev) -> np.ndarray:
    """Differential-coding step: ``I = m_r + x_prev``; ``m_r += (x_prev - x) / t``.

    The decoded output is ``D = sum_t x[t] / t``.  The MT guard keeps ``c``
    equal to ``t * D`` so a negative spike is only allowed while the decoded
    output stays non-negative; with a raw ``sum_t x[t]`` an early positive
    spike could never be fully taken back.
    """
    layer.t += 1
    t = layer.t
    if t > 1:
        layer.c = layer.c * (t / (t - 1))
    current = layer.m_r + x_prev
    x = _INNER[layer.kind.inner.name](layer, current)
    layer.m_r = layer.m_r + x_prev / t - x / t
    return x


def _inner_mt(layer: SpikingLayer, current) -> np.ndarray:
    m = _integrate(layer, current)
    x = mt_output(m, layer.theta, layer.c, layer.kind.inner.n)
    layer.c = layer.c + x
    return _emit(layer, m, x)


STEP = {"if": if_step, "snm": snm_step, "mt": mt_step, "dc": dc_step}
_INNER = {"if": if_step, "mt": _inner_mt}
