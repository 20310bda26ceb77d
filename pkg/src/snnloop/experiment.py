"""Experiment configuration and the standard pipeline stages.

A single flat JSON document fully determines an experiment; command-line
flags may override individual keys.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .envs import Env, EnvState, expert_rollout, make_env, ENVS
from .errors import ValidationError
from .neurons import NeuronKind
from .policy import BcConfig, MlpPolicy, bc_train, forward
from .spiking import SpikingNetwork, convert

DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))
SEED_ENV_VAR = "SNNLOOP_SEED"


@dataclass
class ExperimentConfig:
    env: str = "double_integrator"
    neuron: str = "if"
    T: int = 8
    alpha: Optional[float] = None
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    episodes: int = 20
    horizon: int = 200
    seed: int = 0
    calib_episodes: int = 20
    hidden: list = field(default_factory=lambda: [64, 64])
    expert_episodes: int = 200
    uniform_states: int = 20000
    bc_lr: float = 1e-3
    bc_momentum: float = 0.9
    bc_batch_size: int = 256
    bc_epochs: int = 50
    smooth_window: int = 1
    init_low: Optional[list] = None
    init_high: Optional[list] = None
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENVS:
            raise ValidationError(f"env: unknown environment {self.env!r}; expected one of {sorted(ENVS)}")
        NeuronKind.parse(self.neuron)
        if not isinstance(self.T, int) or self.T < 1:
            raise ValidationError(f"T must be an integer >= 1, got {self.T!r}")
        for name in ("episodes", "horizon", "calib_episodes", "bc_batch_size", "smooth_window"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        for name in ("expert_episodes", "uniform_states", "bc_epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        bad = [a for a in self.alphas if not 0.0 <= a <= 1.0]
        if not self.alphas or bad:
            raise ValidationError(f"alphas must be a non-empty list in [0, 1], got {self.alphas}")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ValidationError(f"hidden widths must be positive, got {self.hidden}")
        if not self.bc_lr >= 0:
            raise ValidationError(f"bc_lr must be >= 0, got {self.bc_lr}")
        if not 0.0 <= self.bc_momentum < 1.0:
            raise ValidationError(f"bc_momentum must lie in [0, 1), got {self.bc_momentum}")

    @property
    def kind(self) -> NeuronKind:
        return NeuronKind.parse(self.neuron)

    @property
    def bc(self) -> BcConfig:
        return BcConfig(self.bc_lr, self.bc_momentum, self.bc_batch_size, self.bc_epochs, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**_coerce(d, known))

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "ExperimentConfig":
        from .policy import read_json
        d = read_json(path) if path else {}
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)


_INTS = {"T", "episodes", "horizon", "seed", "calib_episodes", "expert_episodes",
         "uniform_states", "bc_batch_size", "bc_epochs", "smooth_window"}
_FLOATS = {"bc_lr", "bc_momentum"}


def _coerce(d: dict, known) -> dict:
    out = {}
    for k, v in d.items():
        if k in _INTS:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise ValidationError(f"{k} must be an integer, got {v!r}")
            v = int(v)
        elif k in _FLOATS or (k == "alpha" and v is not None):
            v = float(v)
        elif k == "alphas":
            v = [float(a) for a in v]
        elif k == "hidden":
            v = [int(h) for h in v]
        elif k in ("init_low", "init_high") and v is not None:
            v = [float(x) for x in v]
        out[k] = v
    return out


def master_seed(config_seed: int) -> int:
    """``SNNLOOP_SEED`` wins over the configured seed when set."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return config_seed
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def env_from_config(cfg: ExperimentConfig) -> Env:
    return make_env(cfg.env, cfg.horizon, cfg.init_low, cfg.init_high)


def uniform_state_box(env: Env):
    """Wide box for off-trajectory BC samples so the imitator can recover from drift."""
    if env.name == "pendulum":
        return np.array([-np.pi, -env.max_speed]), np.array([np.pi, env.max_speed])
    return 1.5 * np.array(env.spec.init_low), 1.5 * np.array(env.spec.init_high)


def bc_dataset(env: Env, expert_episodes: int, uniform_states: int, seed: int):
    """Expert-visited states plus uniformly drawn states, each labelled by the expert."""
    obs, acts = [], []
    for i in range(expert_episodes):
        states, actions, _ = expert_rollout(env, (seed, 1, i))
        obs.extend(env.observe(s) for s in states[:-1])
        acts.extend(actions)
    lo, hi = uniform_state_box(env)
    rng = np.random.default_rng([seed, 2])
    for x in rng.uniform(lo, hi, size=(uniform_states, len(lo))):
        s = EnvState(tuple(float(v) for v in x))
        obs.append(env.observe(s))
        acts.append(env.expert_action(s))
    if not obs:
        raise ValidationError("BC dataset is empty; need expert_episodes or uniform_states > 0")
    return np.array(obs), np.array(acts).reshape(len(obs), -1)


def train_expert_policy(env: Env, cfg: ExperimentConfig) -> MlpPolicy:
    data = bc_dataset(env, cfg.expert_episodes, cfg.uniform_states, cfg.seed)
    arch = [env.spec.obs_dim, *cfg.hidden, env.spec.act_dim]
    return bc_train(data, arch, cfg.bc, env.spec.action_scale)


def calibration_states(env: Env, policy: MlpPolicy, episodes: int, seed: int) -> np.ndarray:
    """Observations visited by the ANN in closed loop; seeds are disjoint from evaluation seeds."""
    obs = []
    for i in range(episodes):
        s = env.reset((seed, 3, i))
        for _ in range(env.spec.horizon):
            o = env.observe(s)
            obs.append(o)
            s, _ = env.step(s, forward(policy, o))
    return np.array(obs)


def convert_policy(env: Env, policy: MlpPolicy, kind, T: int, calib_episodes: int,
                   seed: int) -> SpikingNetwork:
    states = calibration_states(env, policy, calib_episodes, seed)
    return convert(policy, kind, T, calibration_states=states)
