"""ANN-to-SNN conversion and T-step spiking inference."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .neurons import NeuronKind, SpikingLayer
from .policy import (DenseLayer, MlpPolicy, _check_obs, forward_with_activations,
                     policy_from_dict, policy_to_dict, read_json)

THETA_FLOOR = 1e-6


def calibrate_thresholds(policy: MlpPolicy, states) -> list[np.ndarray]:
    """Per-channel firing thresholds: the max ReLU activation over ``states``.

    Channels that never activate get ``THETA_FLOOR``.
    """
    obs = np.asarray(states, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.shape[0] == 0:
        raise ValidationError("threshold calibration needs at least one state")
    acts = forward_with_activations(policy, obs)
    return [np.maximum(a.max(axis=0), THETA_FLOOR) for a in acts]


@dataclass
class SpikingNetwork:
    """Converted network: spiking hidden layers and a non-spiking output accumulator.

    ``source`` keeps the original ANN so the network can be serialized and
    re-converted exactly.
    """

    source: MlpPolicy
    kind: NeuronKind
    T: int
    layers: list[SpikingLayer]
    output: DenseLayer
    output_bias: np.ndarray
    input_events: int = 0
    # CRPI clips carried membranes to [-theta, theta] instead of [0, theta]
    symmetric_clip: bool = False
    has_fresh_inference: bool = field(default=False, repr=False)

    @property
    def action_scale(self) -> float:
        return self.source.action_scale

    @property
    def obs_dim(self) -> int:
        return self.source.obs_dim

    @property
    def act_dim(self) -> int:
        return self.source.act_dim

    @property
    def theta(self) -> list[np.ndarray]:
        return [l.theta for l in self.layers]

    def reset_state(self) -> None:
        """Fresh decision-step initialization for every hidden layer."""
        for l in self.layers:
            l.reset(l.rest_potential())

    def reset_counters(self) -> None:
        self.input_events = 0
        for l in self.layers:
            l.spike_events = 0

    def fan_outs(self) -> list[int]:
        nxt = [l.weights for l in self.layers[1:]] + [self.output.weights]
        return [w.shape[0] for w in nxt]

    def __call__(self, obs) -> np.ndarray:
        return infer(self, obs)


def convert(policy: MlpPolicy, kind: NeuronKind, T: int,
            theta: Optional[Sequence[np.ndarray]] = None,
            calibration_states=None) -> SpikingNetwork:
    """Copy ``policy`` weights into a spiking network with ``T`` steps per decision.

    Provide either calibrated ``theta`` (one vector per hidden layer) or
    ``calibration_states`` to calibrate on.  For differential coding every
    linear bias is removed and used as the initial ``m_r`` of the neuron
    layer it feeds; the output bias is added after decoding.
    """
    if isinstance(kind, str):
        kind = NeuronKind.parse(kind)
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValidationError(f"T must be an integer >= 1, got {T!r}")
    if theta is None:
        if calibration_states is None:
            raise ValidationError("convert needs theta or calibration_states")
        theta = calibrate_thresholds(policy, calibration_states)
    hidden = policy.hidden_layers
    if len(theta) != len(hidden):
        raise ValidationError(
            f"got {len(theta)} threshold vectors for {len(hidden)} hidden layers")

    dc = kind.name == "dc"
    layers = []
    for dense, th in zip(hidden, theta):
        th = np.asarray(th, dtype=np.float64)
        if th.shape != (dense.out_dim,):
            raise ValidationError(
                f"threshold shape {th.shape} does not match layer width {dense.out_dim}")
        if dc:
            layers.append(SpikingLayer(dense.weights, np.zeros(dense.out_dim), th, kind,
                                       mr_init=dense.bias.copy()))
        else:
            layers.append(SpikingLayer(dense.weights, dense.bias, th, kind))
    return SpikingNetwork(policy, kind, int(T), layers, policy.layers[-1],
                          policy.layers[-1].bias.copy())


def infer(net: SpikingNetwork, obs, crpi=None) -> np.ndarray:
    """Run ``net.T`` simulation steps on one observation and return the action.

    Without ``crpi`` every hidden membrane starts from its fresh value.
    With a :class:`~snnloop.crpi.CrpiState` the membranes are initialized from
    the previous decision step's residual and the new residual is recorded.

    Rate-coded kinds receive the observation as a constant input current at
    every step and the output accumulator averages its input over ``T``.
    Differential coding receives the observation once (at t=1) and the
    accumulator decodes the running estimate ``sum_t x[t] / t``.
    """
    from .crpi import begin_decision_step, end_decision_step

    x0 = _check_obs(net.source, obs)
    if x0.ndim != 1:
        raise ValidationError("infer takes a single observation")
    if crpi is None:
        net.reset_state()
    else:
        begin_decision_step(net, crpi)

    out_w = net.output.weights
    acc = np.zeros(net.act_dim)
    if net.kind.name == "dc":
        first = net.layers[0].weights @ x0
        zero = np.zeros_like(first)
        for t in range(1, net.T + 1):
            cur = first if t == 1 else zero
            for i, layer in enumerate(net.layers):
                x = layer.step(cur)
                if i + 1 < len(net.layers):
                    cur = net.layers[i + 1].weights @ x
            acc += (out_w @ x) / t
        net.input_events += net.obs_dim
        pre = acc + net.output_bias
    else:
        first = net.layers[0].weights @ x0 + net.layers[0].bias
        for _ in range(net.T):
            cur = first
            for i, layer in enumerate(net.layers):
                x = layer.step(cur)
                if i + 1 < len(net.layers):
                    nxt = net.layers[i + 1]
                    cur = nxt.weights @ x + nxt.bias
            acc += out_w @ x
        net.input_events += net.obs_dim * net.T
        pre = acc / net.T + net.output_bias

    net.has_fresh_inference = True
    if crpi is not None:
        end_decision_step(net, crpi)
    return net.action_scale * np.tanh(pre)


def infer_batch(net: SpikingNetwork, obs) -> np.ndarray:
    """Fresh-start inference for a batch of observations, one row each.

    Runs the same dynamics as :func:`infer` without CRPI, with all rows
    stepped together.  Results agree with row-by-row :func:`infer` up to
    matrix-product rounding.
    """
    X = _check_obs(net.source, obs)
    if X.ndim != 2:
        raise ValidationError("infer_batch takes a 2-D batch of observations")
    B = X.shape[0]
    for layer in net.layers:
        layer.reset(layer.rest_potential(), batch=B)

    out_w = net.output.weights
    acc = np.zeros((B, net.act_dim))
    dc = net.kind.name == "dc"
    first = X @ net.layers[0].weights.T
    if not dc:
        first = first + net.layers[0].bias
    zero = np.zeros_like(first)
    for t in range(1, net.T + 1):
        cur = zero if dc and t > 1 else first
        for i, layer in enumerate(net.layers):
            x = layer.step(cur)
            if i + 1 < len(net.layers):
                nxt = net.layers[i + 1]
                cur = x @ nxt.weights.T + nxt.bias
        acc += (x @ out_w.T) / t if dc else x @ out_w.T
    if dc:
        net.input_events += B * net.obs_dim
        pre = acc + net.output_bias
    else:
        net.input_events += B * net.obs_dim * net.T
        pre = acc / net.T + net.output_bias
    net.has_fresh_inference = False
    return net.action_scale * np.tanh(pre)


def count_sops(net: SpikingNetwork) -> int:
    """Synaptic operations since the last counter reset.

    Each spike (any sign or threshold) costs the fan-out of its neuron; every
    injected input channel costs one operation per step it is injected.
    """
    spikes = sum(l.spike_events * f for l, f in zip(net.layers, net.fan_outs()))
    return int(spikes + net.input_events)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def network_to_dict(net: SpikingNetwork) -> dict:
    doc = policy_to_dict(net.source)
    doc["neuron"] = net.kind.to_dict()
    doc["theta"] = [th.tolist() for th in net.theta]
    doc["T"] = net.T
    if net.symmetric_clip:
        doc["crpi_symmetric_clip"] = True
    return doc


def network_from_dict(doc: dict) -> SpikingNetwork:
    from .errors import PolicyFileError

    for key in ("neuron", "theta", "T"):
        if key not in doc:
            raise PolicyFileError(f"missing field {key!r} in converted-network document")
    policy = policy_from_dict(doc)
    kind = NeuronKind.from_dict(doc["neuron"])
    theta = [np.array(th, dtype=np.float64) for th in doc["theta"]]
    net = convert(policy, kind, int(doc["T"]), theta)
    net.symmetric_clip = bool(doc.get("crpi_symmetric_clip", False))
    return net


def save_network(net: SpikingNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)))


def load_network(path) -> SpikingNetwork:
    return network_from_dict(read_json(path))
