"""Dense ReLU actor networks: inference, behavior cloning, persistence, FLOPs.

An :class:`MlpPolicy` is a stack of affine layers with ReLU on every hidden
layer and ``action_scale * tanh`` on the output.  It is the source network
that gets converted to a spiking network.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PolicyFileError, TrainingDivergedError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenseLayer:
    """Affine map ``y = weights @ x + bias`` with ``weights`` of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ValidationError(f"weights must be 2-D, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ValidationError(
                f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if w.shape[0] == 0 or w.shape[1] == 0:
            raise ValidationError(f"empty layer of shape {w.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValidationError("layer contains non-finite values")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MlpPolicy:
    layers: tuple[DenseLayer, ...]
    action_scale: float = 1.0

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("policy needs at least one layer")
        for l, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValidationError(
                    f"layer {l} outputs {a.out_dim} but layer {l + 1} expects {b.in_dim}")
        if not (np.isfinite(self.action_scale) and self.action_scale > 0):
            raise ValidationError(f"action_scale must be positive, got {self.action_scale}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "action_scale", float(self.action_scale))

    @property
    def obs_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def act_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_layers(self) -> tuple[DenseLayer, ...]:
        return self.layers[:-1]

    def __call__(self, obs) -> np.ndarray:
        return forward(self, obs)


def _check_obs(policy: MlpPolicy, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != policy.obs_dim:
        raise ValidationError(
            f"observation shape {x.shape} incompatible with obs_dim={policy.obs_dim}")
    if not np.isfinite(x).all():
        raise ValidationError("observation contains non-finite values")
    return x


def _forward_all(policy: MlpPolicy, x: np.ndarray):
    """Return (hidden post-ReLU activations, output pre-activation)."""
    acts = []
    h = x
    for layer in policy.hidden_layers:
        h = np.maximum(h @ layer.weights.T + layer.bias, 0.0)
        acts.append(h)
    out = policy.layers[-1]
    return acts, h @ out.weights.T + out.bias


def forward(policy: MlpPolicy, obs) -> np.ndarray:
    """Action for one observation (1-D) or a batch (2-D, one row per observation)."""
    x = _check_obs(policy, obs)
    _, z = _forward_all(policy, x)
    return policy.action_scale * np.tanh(z)


def forward_with_activations(policy: MlpPolicy, obs) -> list[np.ndarray]:
    """Post-ReLU activation vector of every hidden layer, in order."""
    x = _check_obs(policy, obs)
    acts, _ = _forward_all(policy, x)
    return acts


def count_flops(policy: MlpPolicy) -> int:
    """FLOPs for one ANN forward pass.

    A multiply-accumulate counts 2, a bias add 1, and the output tanh 1 per
    action dimension.
    """
    total = sum(2 * l.in_dim * l.out_dim + l.out_dim for l in policy.layers)
    return total + policy.act_dim


# ---------------------------------------------------------------------------
# Behavior cloning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BcConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            # lr == 0 is allowed as a no-update control
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")


def init_policy(arch: Sequence[int], action_scale: float = 1.0, seed: int = 0) -> MlpPolicy:
    """Fresh policy with weights uniform in +-sqrt(6/(in+out)) and zero biases."""
    arch = [int(a) for a in arch]
    if len(arch) < 2 or min(arch) < 1:
        raise ValidationError(f"architecture needs >= 2 positive widths, got {arch}")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(arch, arch[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        layers.append(DenseLayer(rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out)))
    return MlpPolicy(tuple(layers), action_scale)


def mse_and_grads(policy: MlpPolicy, obs: np.ndarray, target: np.ndarray):
    """Mean squared error over all batch entries and its parameter gradients.

    Returns ``(loss, grads)`` where ``grads`` is a list of ``(dW, db)`` per layer.
    """
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    y = np.atleast_2d(np.asarray(target, dtype=np.float64))
    acts, z = _forward_all(policy, x)
    th = np.tanh(z)
    err = policy.action_scale * th - y
    loss = float(np.mean(err ** 2))

    delta = (2.0 / err.size) * err * policy.action_scale * (1.0 - th ** 2)
    inputs = [x] + acts
    grads = []
    for l in range(len(policy.layers) - 1, -1, -1):
        layer = policy.layers[l]
        grads.append((delta.T @ inputs[l], delta.sum(axis=0)))
        if l > 0:
            delta = (delta @ layer.weights) * (acts[l - 1] > 0)
    grads.reverse()
    return loss, grads


def training_mse(policy: MlpPolicy, obs, actions) -> float:
    return float(np.mean((forward(policy, obs) - np.asarray(actions, dtype=np.float64)) ** 2))


def _as_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        obs, act = dataset
    else:
        pairs = list(dataset)
        if not pairs:
            raise ValidationError("dataset is empty")
        obs = np.array([p[0] for p in pairs], dtype=np.float64)
        act = np.array([p[1] for p in pairs], dtype=np.float64)
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    act = np.asarray(act, dtype=np.float64)
    if act.ndim == 1:
        act = act[:, None]
    if len(obs) == 0 or len(obs) != len(act):
        raise ValidationError(f"dataset sizes disagree or are empty ({len(obs)} obs, {len(act)} actions)")
    return obs, act


def bc_train(dataset, arch: Sequence[int], config: BcConfig = BcConfig(),
             action_scale: float = 1.0) -> MlpPolicy:
    """Fit a policy to (obs, action) pairs by minibatch SGD with momentum on MSE.

    ``dataset`` is either a sequence of ``(obs, action)`` pairs or a tuple of
    two arrays ``(obs[N, d], actions[N, m])``.  The result is a deterministic
    function of the data, ``arch`` and ``config.seed``.
    """
    obs, act = _as_arrays(dataset)
    arch = list(arch)
    if arch[0] != obs.shape[1] or arch[-1] != act.shape[1]:
        raise ValidationError(
            f"architecture {arch} does not match data dims ({obs.shape[1]}, {act.shape[1]})")
    if np.any(np.abs(act) > action_scale):
        raise ValidationError("dataset actions exceed action_scale")

    policy = init_policy(arch, action_scale, config.seed)
    params = [(l.weights.copy(), l.bias.copy()) for l in policy.layers]
    vel = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    rng = np.random.default_rng([config.seed, 1])
    n = len(obs)

    def build():
        return MlpPolicy(tuple(DenseLayer(w, b) for w, b in params), action_scale)

    loss = training_mse(policy, obs, act)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss_b, grads = mse_and_grads(_ParamView(params, action_scale), obs[idx], act[idx])
            if not np.isfinite(loss_b):
                raise TrainingDivergedError(epoch, loss_b)
            for (w, b), (vw, vb), (gw, gb) in zip(params, vel, grads):
                vw *= config.momentum
                vw -= config.learning_rate * gw
                vb *= config.momentum
                vb -= config.learning_rate * gb
                w += vw
                b += vb
        if not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in params):
            raise TrainingDivergedError(epoch, float("nan"))
        loss = float(np.mean((_ParamView(params, action_scale)(obs) - act) ** 2))
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        log.debug("epoch %d mse %.3e", epoch, loss)

    log.info("bc_train finished: %d epochs, final mse %.3e", config.epochs, loss)
    return build()


class _ParamView:
    """Lightweight policy view over mutable parameter arrays used inside training."""

    def __init__(self, params, action_scale):
        self.layers = [_RawLayer(w, b) for w, b in params]
        self.hidden_layers = self.layers[:-1]
        self.action_scale = action_scale

    def __call__(self, obs):
        _, z = _forward_all(self, obs)
        return self.action_scale * np.tanh(z)


@dataclass
class _RawLayer:
    weights: np.ndarray
    bias: np.ndarray


def _flat(policy: MlpPolicy) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in policy.layers])


def _unflat(template: MlpPolicy, theta: np.ndarray) -> MlpPolicy:
    layers, i = [], 0
    for l in template.layers:
        nw = l.weights.size
        w = theta[i:i + nw].reshape(l.weights.shape)
        b = theta[i + nw:i + nw + l.out_dim]
        i += nw + l.out_dim
        layers.append(DenseLayer(w, b))
    return MlpPolicy(tuple(layers), template.action_scale)


def gradient_check(policy: MlpPolicy, obs, target, h: float = 1e-5) -> float:
    """Max relative discrepancy between backprop and central-difference gradients.

    The relative error of each parameter is ``|g - g_fd| / max(1, |g_fd|)``.
    """
    _, grads = mse_and_grads(policy, obs, target)
    analytic = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    theta = _flat(policy)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp, _ = mse_and_grads(_unflat(policy, tp), obs, target)
        lm, _ = mse_and_grads(_unflat(policy, tm), obs, target)
        fd[i] = (lp - lm) / (2 * h)
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def policy_to_dict(policy: MlpPolicy) -> dict:
    return {
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "action_scale": policy.action_scale,
        "layers": [{"w": l.weights.tolist(), "b": l.bias.tolist()} for l in policy.layers],
    }


def _require(doc: dict, key: str, where: str = "document"):
    if not isinstance(doc, dict) or key not in doc:
        raise PolicyFileError(f"missing field {key!r} in {where}")
    return doc[key]


def policy_from_dict(doc: dict) -> MlpPolicy:
    raw_layers = _require(doc, "layers")
    if not isinstance(raw_layers, list):
        raise PolicyFileError("field 'layers' must be a list")
    layers = []
    for i, raw in enumerate(raw_layers):
        w = _require(raw, "w", f"layers[{i}]")
        b = _require(raw, "b", f"layers[{i}]")
        try:
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise PolicyFileError(f"layers[{i}] holds non-numeric or ragged data: {exc}") from None
        if w.ndim != 2:
            raise ValidationError(f"layers[{i}].w must be a matrix, got shape {w.shape}")
        layers.append(DenseLayer(w, b))
    policy = MlpPolicy(tuple(layers), float(_require(doc, "action_scale")))
    obs_dim, act_dim = _require(doc, "obs_dim"), _require(doc, "act_dim")
    if (obs_dim, act_dim) != (policy.obs_dim, policy.act_dim):
        raise ValidationError(
            f"declared dims ({obs_dim}, {act_dim}) disagree with layers "
            f"({policy.obs_dim}, {policy.act_dim})")
    return policy


def read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def save_policy(policy: MlpPolicy, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(policy_to_dict(policy)))


def load_policy(path) -> MlpPolicy:
    return policy_from_dict(read_json(path))
