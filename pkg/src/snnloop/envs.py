"""Deterministic continuous-control environments and their expert controllers.

States are immutable values, and ``step`` is a pure function of
``(state, action)``.  A snapshot is therefore just the state object itself,
and counterfactual branches can be taken from any visited state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import SolverError, ValidationError


@dataclass(frozen=True)
class EnvState:
    x: tuple
    k: int = 0

    @property
    def array(self) -> np.ndarray:
        return np.array(self.x, dtype=np.float64)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_scale: float
    dt: float
    horizon: int
    init_low: tuple
    init_high: tuple

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")


def wrap_angle(phi: float) -> float:
    """Wrap into (-pi, pi]."""
    w = np.pi - np.mod(np.pi - phi, 2 * np.pi)
    return float(w)


def episode_rng(seed) -> np.random.Generator:
    """Generator for one episode; ``seed`` may be an int or a (master, index) pair."""
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(int(seed))


def _as_system(A, B, Q, R):
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (A, B, Q, R))
    if B.shape[0] != A.shape[0]:
        B = B.T
    return A, B, Q, R


def riccati_solution(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA``, iterated from ``P = Q``.

    Stops once the max-abs change drops below ``tol``.
    """
    A, B, Q, R = _as_system(A, B, Q, R)
    P = Q.copy()
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            P_new = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_new = 0.5 * (P_new + P_new.T)
        if not np.isfinite(P_new).all():
            raise SolverError("Riccati iteration diverged")
        if np.max(np.abs(P_new - P)) < tol:
            return P_new
        P = P_new
    raise SolverError(f"Riccati iteration did not converge in {max_iter} iterations")


def lqr_solve(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain ``K`` (control law ``u = -K x``)."""
    P = riccati_solution(A, B, Q, R, tol, max_iter)
    A, B, Q, R = _as_system(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


class Env:
    spec: EnvSpec

    @property
    def name(self) -> str:
        return self.spec.name

    def reset(self, seed) -> EnvState:
        rng = episode_rng(seed)
        x = rng.uniform(self.spec.init_low, self.spec.init_high)
        return EnvState(tuple(float(v) for v in x), 0)

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        if not np.isfinite(a).all():
            raise ValidationError(f"non-finite action {a}")
        return np.clip(a, -self.spec.action_scale, self.spec.action_scale)

    def step(self, state: EnvState, action) -> tuple[EnvState, float]:
        a = self.clip_action(action)
        return self._dynamics(state, a), self.reward(state, a)

    def observe(self, state: EnvState) -> np.ndarray:
        return state.array

    def _dynamics(self, state: EnvState, a: np.ndarray) -> EnvState:
        raise NotImplementedError

    def reward(self, state: EnvState, action) -> float:
        raise NotImplementedError

    def expert_action(self, state: EnvState) -> np.ndarray:
        raise NotImplementedError


class DoubleIntegrator(Env):
    """Point mass on a line: p' = p + dt v, v' = v + dt a."""

    def __init__(self, dt: float = 0.05, horizon: int = 200,
                 init_low=(-1.0, -0.5), init_high=(1.0, 0.5)):
        self.spec = EnvSpec("double_integrator", 2, 1, 1.0, dt, horizon,
                            tuple(init_low), tuple(init_high))
        self.A = np.array([[1.0, dt], [0.0, 1.0]])
        self.B = np.array([[0.0], [dt]])
        self.Q = np.diag([1.0, 0.1])
        self.R = np.array([[0.01]])
        self.K = lqr_solve(self.A, self.B, self.Q, self.R)

    def _dynamics(self, state, a):
        p, v = state.x
        dt = self.spec.dt
        return EnvState((p + dt * v, v + dt * float(a[0])), state.k + 1)

    def reward(self, state, action) -> float:
        p, v = state.x
        a = float(np.asarray(action).reshape(-1)[0])
        return -(p * p + 0.1 * v * v + 0.01 * a * a)

    def expert_action(self, state):
        u = -self.K @ state.array
        return np.clip(u, -1.0, 1.0)


@dataclass(frozen=True)
class PendulumExpertGains:
    k_energy: float = 2.0
    k_p: float = 12.0
    k_d: float = 4.0
    switch_radius: float = 0.3


class Pendulum(Env):
    """Torque-limited rod pendulum; phi = 0 is upright, angle stored unwrapped."""

    g = 10.0
    m = 1.0
    l = 1.0
    max_speed = 8.0

    def __init__(self, dt: float = 0.05, horizon: int = 200,
                 init_low=(-np.pi, -1.0), init_high=(np.pi, 1.0),
                 gains: PendulumExpertGains = PendulumExpertGains()):
        self.spec = EnvSpec("pendulum", 3, 1, 2.0, dt, horizon,
                            tuple(init_low), tuple(init_high))
        self.gains = gains

    def reset(self, seed) -> EnvState:
        s = super().reset(seed)
        phi, omega = s.x
        # uniform draws live in [-pi, pi); map onto (-pi, pi]
        return replace(s, x=(wrap_angle(phi), omega))

    def _dynamics(self, state, a):
        phi, omega = state.x
        g, m, l, dt = self.g, self.m, self.l, self.spec.dt
        acc = 3 * g / (2 * l) * np.sin(phi) + 3.0 / (m * l * l) * float(a[0])
        omega = float(np.clip(omega + dt * acc, -self.max_speed, self.max_speed))
        return EnvState((phi + dt * omega, omega), state.k + 1)

    def reward(self, state, action) -> float:
        phi, omega = state.x
        a = float(np.asarray(action).reshape(-1)[0])
        th = wrap_angle(phi)
        return -(th * th + 0.1 * omega * omega + 0.001 * a * a)

    def observe(self, state):
        phi, omega = state.x
        return np.array([np.cos(phi), np.sin(phi), omega])

    def energy(self, state) -> float:
        phi, omega = state.x
        inertia = self.m * self.l ** 2 / 3.0
        return 0.5 * inertia * omega ** 2 + self.m * self.g * self.l / 2.0 * np.cos(phi)

    def expert_action(self, state):
        phi, omega = state.x
        th = wrap_angle(phi)
        gn = self.gains
        if abs(th) >= gn.switch_radius:
            target = self.m * self.g * self.l / 2.0
            u = gn.k_energy * omega * (target - self.energy(state))
        else:
            u = -gn.k_p * th - gn.k_d * omega
        return np.clip(np.array([u]), -self.spec.action_scale, self.spec.action_scale)


ENVS = {"double_integrator": DoubleIntegrator, "pendulum": Pendulum}


def make_env(name: str, horizon: Optional[int] = None, init_low=None, init_high=None) -> Env:
    if name not in ENVS:
        raise ValidationError(f"unknown environment {name!r}; expected one of {sorted(ENVS)}")
    kwargs = {}
    if horizon is not None:
        kwargs["horizon"] = int(horizon)
    if init_low is not None:
        kwargs["init_low"] = tuple(init_low)
    if init_high is not None:
        kwargs["init_high"] = tuple(init_high)
    return ENVS[name](**kwargs)


def expert_rollout(env: Env, seed, horizon: Optional[int] = None):
    """States and rewards of the expert controller; returns (states, actions, rewards)."""
    K = env.spec.horizon if horizon is None else horizon
    s = env.reset(seed)
    states, actions, rewards = [], [], []
    for _ in range(K):
        a = env.expert_action(s)
        states.append(s)
        actions.append(a)
        s, r = env.step(s, a)
        rewards.append(r)
    states.append(s)
    return states, np.array(actions), np.array(rewards)
