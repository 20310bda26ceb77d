"""Closed-loop rollouts and the error-amplification diagnostics built on them.

Every comparative report runs all of its arms on the same list of episode
seeds ``(master_seed, i)``, so differences between arms never come from
different initial states.
"""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .crpi import CrpiState, residual_error
from .envs import Env, EnvState
from .errors import DegenerateDataError, EmptyReportError, NumericFault, ValidationError
from .policy import MlpPolicy, count_flops, forward
from .spiking import SpikingNetwork, count_sops, infer

FLOP_JOULES = 12.5e-12
SOP_JOULES = 77e-15


# ---------------------------------------------------------------------------
# Agents and rollouts
# ---------------------------------------------------------------------------

class Agent:
    """Uniform stateful interface over ANN and SNN policies."""

    tag = "ANN"

    def reset(self) -> None:
        pass

    def act(self, obs) -> np.ndarray:
        raise NotImplementedError

    def residuals(self) -> list:
        return []


class AnnAgent(Agent):
    def __init__(self, policy: MlpPolicy):
        self.policy = policy

    def act(self, obs):
        return forward(self.policy, obs)


class SnnAgent(Agent):
    """Spiking policy; ``alpha=None`` re-initializes every decision step, otherwise CRPI."""

    tag = "SNN"

    def __init__(self, net: SpikingNetwork, alpha: Optional[float] = None):
        self.net = net
        self.alpha = alpha
        self.crpi = None
        self.reset()

    def reset(self):
        self.crpi = (None if self.alpha is None
                     else CrpiState(self.alpha, symmetric_clip=self.net.symmetric_clip))
        self.net.reset_state()
        self.net.has_fresh_inference = False

    def act(self, obs):
        return infer(self.net, obs, self.crpi)

    def residuals(self) -> list[np.ndarray]:
        """Residual error of every hidden layer for the last inference."""
        return [residual_error(l.v0, l.v, self.net.T) for l in self.net.layers]


def as_agent(policy, alpha: Optional[float] = None) -> Agent:
    if isinstance(policy, Agent):
        return policy
    if isinstance(policy, SpikingNetwork):
        return SnnAgent(policy, alpha)
    if isinstance(policy, MlpPolicy):
        # an ANN has no membrane to carry, so alpha is vacuous (identity stand-ins rely on this)
        return AnnAgent(policy)
    raise ValidationError(f"unsupported policy type {type(policy).__name__}")


@dataclass
class Trajectory:
    """One closed-loop episode; ``states[k]`` is s_k, ``final_state`` is s_K."""

    states: list
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: tuple
    tag: str
    final_state: Optional[EnvState] = None
    residuals: list = field(default_factory=list)

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))

    def __len__(self):
        return len(self.rewards)


def episode_seeds(master_seed: int, episodes: int) -> list[tuple]:
    if episodes < 1:
        raise ValidationError(f"episodes must be >= 1, got {episodes}")
    return [(int(master_seed), i) for i in range(episodes)]


def rollout(env: Env, policy, K: Optional[int] = None, seed=0, alpha: Optional[float] = None,
            record_residuals: bool = False) -> Trajectory:
    """Run ``policy`` in closed loop for ``K`` decision steps from ``env.reset(seed)``."""
    agent = as_agent(policy, alpha)
    agent.reset()
    K = env.spec.horizon if K is None else int(K)
    s = env.reset(seed)
    states, obs_l, acts, rews, res = [], [], [], [], []
    for k in range(K):
        o = env.observe(s)
        try:
            a = agent.act(o)
        except NumericFault as exc:
            raise NumericFault(f"step {k}: {exc}") from None
        states.append(s)
        obs_l.append(o)
        acts.append(a)
        if record_residuals:
            res.append(agent.residuals())
        s, r = env.step(s, a)
        rews.append(r)
    return Trajectory(states, np.array(obs_l), np.array(acts), np.array(rews),
                      tuple(seed) if isinstance(seed, (tuple, list)) else (seed,),
                      agent.tag, s, res)


def _map(fn, items, jobs: int = 1):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _rollout_return(seed, env, policy, K, alpha):
    return rollout(env, copy.deepcopy(policy), K, seed, alpha).ret


def rollout_returns(env: Env, policy, seeds: Sequence, K: Optional[int] = None,
                    alpha: Optional[float] = None, jobs: int = 1) -> np.ndarray:
    fn = partial(_rollout_return, env=env, policy=policy, K=K, alpha=alpha)
    return np.array(_map(fn, list(seeds), jobs))


def half_std(x) -> float:
    return 0.5 * float(np.std(np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Reward decomposition
# ---------------------------------------------------------------------------

@dataclass
class DecompositionReport:
    """Mean return and half standard deviation of the four policy/state pairings."""

    R_ann: tuple
    R_snn: tuple
    R_snn_given_ann: tuple
    R_ann_given_snn: tuple
    episodes: int
    per_episode: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        keys = ("R_ann", "R_snn", "R_snn_given_ann", "R_ann_given_snn")
        d = {k: {"mean": getattr(self, k)[0], "half_std": getattr(self, k)[1]} for k in keys}
        d["episodes"] = self.episodes
        d["per_episode"] = {k: list(map(float, v)) for k, v in self.per_episode.items()}
        return d


def _paired_pass(seed, env, driver, probe, K):
    """Drive with ``driver``; also score ``probe``'s action at every visited state."""
    driver, probe = as_agent(copy.deepcopy(driver[0]), driver[1]), as_agent(copy.deepcopy(probe[0]), probe[1])
    driver.reset()
    probe.reset()
    s = env.reset(seed)
    r_drive, r_probe = [], []
    for _ in range(K):
        o = env.observe(s)
        a = driver.act(o)
        b = probe.act(o)
        r_probe.append(env.reward(s, env.clip_action(b)))
        s, r = env.step(s, a)
        r_drive.append(r)
    # same summation as Trajectory.ret, so the driven arm equals a plain rollout bit for bit
    return float(np.sum(r_drive)), float(np.sum(r_probe))


def reward_decomposition(env: Env, ann: MlpPolicy, snn: SpikingNetwork, episodes: int,
                         seed: int, alpha: Optional[float] = None, K: Optional[int] = None,
                         jobs: int = 1) -> DecompositionReport:
    """Split the ANN/SNN return gap into action-only and state-distribution effects.

    ``R_snn_given_ann`` scores SNN actions on ANN-visited states (the SNN sees
    those states in order, so its internal state evolves along them);
    ``R_ann_given_snn`` scores ANN actions on SNN-visited states.
    """
    K = env.spec.horizon if K is None else int(K)
    seeds = episode_seeds(seed, episodes)
    snn_arm = (snn, alpha)
    ann_arm = (ann, None)
    by_ann = np.array(_map(partial(_paired_pass, env=env, driver=ann_arm, probe=snn_arm, K=K), seeds, jobs))
    by_snn = np.array(_map(partial(_paired_pass, env=env, driver=snn_arm, probe=ann_arm, K=K), seeds, jobs))
    cols = {
        "R_ann": by_ann[:, 0], "R_snn_given_ann": by_ann[:, 1],
        "R_snn": by_snn[:, 0], "R_ann_given_snn": by_snn[:, 1],
    }
    stats = {k: (float(np.mean(v)), half_std(v)) for k, v in cols.items()}
    return DecompositionReport(episodes=episodes, per_episode=cols, **stats)


# ---------------------------------------------------------------------------
# Cross-step correlations
# ---------------------------------------------------------------------------

def cosine(u, v) -> float:
    """Cosine similarity; 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def layer_mean_cosine(prev: Sequence[np.ndarray], cur: Sequence[np.ndarray]) -> Optional[float]:
    """Per-layer cosine between residual vectors, averaged over layers with nonzero vectors."""
    vals = [cosine(a, b) for a, b in zip(prev, cur)
            if np.any(a != 0) and np.any(b != 0)]
    return float(np.mean(vals)) if vals else None


@dataclass
class CorrelationReport:
    ann_correction: float
    snn_consistency: float
    snn_drift: float
    n_pairs: int
    residual_cosine: Optional[float] = None
    n_residual_pairs: int = 0

    def to_rows(self) -> list[tuple]:
        rows = [("ann_correction", self.ann_correction, self.n_pairs),
                ("snn_consistency", self.snn_consistency, self.n_pairs),
                ("snn_drift", self.snn_drift, self.n_pairs)]
        if self.residual_cosine is not None:
            rows.append(("residual_cosine", self.residual_cosine, self.n_residual_pairs))
        return rows


MIN_ACTION_ERROR = 1e-9


def _correlation_episode(seed, env, ann, snn, alpha, K):
    """Raw cosine samples of one SNN-driven episode with one-step ANN branches."""
    agent = as_agent(copy.deepcopy(snn), alpha)
    agent.reset()
    s = env.reset(seed)
    corr, cons, drift, resid = [], [], [], []
    pending = None
    prev_res = None
    for _ in range(K):
        o = env.observe(s)
        a_snn = agent.act(o)
        a_ann = forward(ann, o)
        res = agent.residuals()
        if prev_res is not None:
            c = layer_mean_cosine(prev_res, res)
            if c is not None:
                resid.append(c)
        prev_res = res
        if pending is not None:
            da, a_ann_next, a_cf = pending
            corr.append(cosine(da, a_cf - a_ann_next))
            cons.append(cosine(da, a_snn - a_cf))
            drift.append(cosine(da, a_snn - a_ann_next))
        da = a_snn - a_ann
        s_ann, _ = env.step(s, a_ann)
        s_next, _ = env.step(s, a_snn)
        if np.linalg.norm(da) >= MIN_ACTION_ERROR:
            pending = (da, forward(ann, env.observe(s_ann)), forward(ann, env.observe(s_next)))
        else:
            pending = None
        s = s_next
    return corr, cons, drift, resid


def cross_step_correlations(env: Env, ann: MlpPolicy, snn: SpikingNetwork, episodes: int,
                            seed: int, alpha: Optional[float] = None, K: Optional[int] = None,
                            jobs: int = 1) -> CorrelationReport:
    """ANN Correction, SNN Consistency and SNN Drift pooled over step pairs.

    The carrier trajectory is SNN-driven.  At each state s_k the ANN and SNN
    actions are both applied to one-step branches; with ``da = a_snn - a_ann``:

    * ANN Correction  = cos(da, ann(s_snn') - ann(s_ann'))
    * SNN Consistency = cos(da, snn(s_snn') - ann(s_snn'))
    * SNN Drift       = cos(da, snn(s_snn') - ann(s_ann'))

    Pairs whose ``|da|`` is below 1e-9 are skipped.  The residual-membrane
    cosine between consecutive decision steps is reported alongside.
    """
    K = env.spec.horizon if K is None else int(K)
    seeds = episode_seeds(seed, episodes)
    parts = _map(partial(_correlation_episode, env=env, ann=ann, snn=snn, alpha=alpha, K=K),
                 seeds, jobs)
    corr = [c for p in parts for c in p[0]]
    cons = [c for p in parts for c in p[1]]
    drift = [c for p in parts for c in p[2]]
    resid = [c for p in parts for c in p[3]]
    if not corr:
        raise EmptyReportError("no step pairs with nonzero action error")
    return CorrelationReport(float(np.mean(corr)), float(np.mean(cons)), float(np.mean(drift)),
                             len(corr), float(np.mean(resid)) if resid else None, len(resid))


# ---------------------------------------------------------------------------
# Alpha sweeps
# ---------------------------------------------------------------------------

def _check_alphas(alphas) -> list[float]:
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValidationError("alpha grid is empty")
    bad = [a for a in alphas if not 0.0 <= a <= 1.0]
    if bad:
        raise ValidationError(f"alpha values outside [0, 1]: {bad}")
    return alphas


def residual_correlation_sweep(env: Env, snn: SpikingNetwork, alphas, episodes: int,
                               seed: int, K: Optional[int] = None, jobs: int = 1) -> list[dict]:
    """Residual-membrane and action-error correlations for each alpha, on matched seeds."""
    rows = []
    for alpha in _check_alphas(alphas):
        rep = cross_step_correlations(env, snn.source, snn, episodes, seed, alpha, K, jobs)
        rows.append({"alpha": alpha, "residual_cosine": rep.residual_cosine,
                     "snn_consistency": rep.snn_consistency, "snn_drift": rep.snn_drift,
                     "ann_correction": rep.ann_correction, "n_pairs": rep.n_pairs})
    return rows


def return_ratio(r_snn: float, r_ann: float, r_worst: Optional[float] = None) -> float:
    """SNN/ANN performance ratio.

    With ``r_worst`` given, uses the regret form
    ``(r_snn - r_worst) / (r_ann - r_worst)``, which stays meaningful for
    all-negative returns.
    """
    if r_worst is None:
        return r_snn / r_ann
    den = r_ann - r_worst
    num = r_snn - r_worst
    if den == 0:
        return 1.0 if num == 0 else float("inf")
    return num / den


@dataclass
class AlphaSweep:
    rows: list
    ann_mean: float
    ann_half_std: float
    ratio_form: str
    r_worst: Optional[float]

    def best(self) -> dict:
        return max(self.rows, key=lambda r: r["mean_return"])

    def row(self, alpha: float) -> dict:
        return next(r for r in self.rows if r["alpha"] == alpha)


def alpha_performance_sweep(env: Env, ann: MlpPolicy, snn: SpikingNetwork, alphas,
                            episodes: int, seed: int, K: Optional[int] = None,
                            jobs: int = 1) -> AlphaSweep:
    """Mean return per alpha with the ratio to the ANN return on the same seeds.

    When every return in the sweep is positive the ratio is the plain
    quotient; otherwise it is the regret form against the lowest episode
    return observed anywhere in the sweep.
    """
    alphas = _check_alphas(alphas)
    seeds = episode_seeds(seed, episodes)
    ann_r = rollout_returns(env, ann, seeds, K, jobs=jobs)
    arms = {a: rollout_returns(env, snn, seeds, K, alpha=a, jobs=jobs) for a in alphas}
    everything = np.concatenate([ann_r] + list(arms.values()))
    if np.all(everything > 0):
        form, worst = "plain", None
    else:
        form, worst = "regret", float(np.min(everything))
    ann_mean = float(np.mean(ann_r))
    rows = []
    for a in alphas:
        m = float(np.mean(arms[a]))
        rows.append({"alpha": a, "mean_return": m, "half_std": half_std(arms[a]),
                     "ratio": return_ratio(m, ann_mean, worst),
                     "returns": arms[a].tolist()})
    return AlphaSweep(rows, ann_mean, half_std(ann_r), form, worst)


# ---------------------------------------------------------------------------
# Per-step rewards and PCA projection
# ---------------------------------------------------------------------------

@dataclass
class PerStepRewards:
    k: np.ndarray
    mean: np.ndarray
    half_std: np.ndarray
    smoothed: np.ndarray


def moving_average(x, window: int) -> np.ndarray:
    """Trailing moving average (shorter window at the start); window 1 returns the input."""
    x = np.asarray(x, dtype=np.float64)
    if window <= 1:
        return x.copy()
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def per_step_rewards(trajectories: Sequence[Trajectory], window: int = 1) -> PerStepRewards:
    """Pointwise mean and half-std of r_k across episodes (truncated to the shortest)."""
    if not trajectories:
        raise ValidationError("per_step_rewards needs at least one trajectory")
    n = min(len(t) for t in trajectories)
    R = np.array([t.rewards[:n] for t in trajectories])
    mean = R.mean(axis=0)
    return PerStepRewards(np.arange(n), mean, 0.5 * R.std(axis=0), moving_average(mean, window))


def power_iteration(C: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[float, np.ndarray]:
    """Leading eigenpair of a symmetric PSD matrix, sign fixed so the first nonzero entry is positive."""
    n = C.shape[0]
    v = np.ones(n) / np.sqrt(n)
    # a deterministic start that is not orthogonal to the top eigenvector in practice
    v = v + np.linspace(0.0, 0.1, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = C @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w /= nw
        lam = float(w @ C @ w)
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return lam, v


def _state_matrix(item) -> np.ndarray:
    if isinstance(item, Trajectory):
        return np.asarray(item.observations, dtype=np.float64)
    return np.atleast_2d(np.asarray(item, dtype=np.float64))


def pca_project(trajectories, tol: float = 1e-10, max_iter: int = 10_000):
    """Project every trajectory onto the first principal component of all their states.

    Accepts :class:`Trajectory` objects (their observations are used) or raw
    ``(n, d)`` arrays.  Returns ``(projections, component, mean)``.
    """
    mats = [_state_matrix(t) for t in trajectories]
    X = np.vstack(mats)
    if X.shape[0] < 2:
        raise DegenerateDataError("PCA needs at least two states")
    mu = X.mean(axis=0)
    C = (X - mu).T @ (X - mu) / X.shape[0]
    if not np.any(np.abs(C) > 0):
        raise DegenerateDataError("all states are identical")
    _, comp = power_iteration(C, tol, max_iter)
    return [(m - mu) @ comp for m in mats], comp, mu


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    flops: int
    sops: int
    energy_joules: float

    @property
    def energy_uj(self) -> float:
        return self.energy_joules * 1e6


def energy_estimate(flops, sops) -> EnergyReport:
    """Energy at 12.5 pJ per FLOP and 77 fJ per SOP."""
    if flops < 0 or sops < 0:
        raise ValidationError("operation counts must be non-negative")
    return EnergyReport(flops, sops, flops * FLOP_JOULES + sops * SOP_JOULES)


def ann_energy(policy: MlpPolicy) -> EnergyReport:
    """Energy of one ANN inference."""
    return energy_estimate(count_flops(policy), 0)


def snn_energy(env: Env, snn: SpikingNetwork, episodes: int, seed: int,
               alpha: Optional[float] = None, K: Optional[int] = None) -> EnergyReport:
    """Average per-inference SOP count and energy over closed-loop SNN rollouts."""
    net = copy.deepcopy(snn)
    net.reset_counters()
    steps = 0
    for s in episode_seeds(seed, episodes):
        steps += len(rollout(env, net, K, s, alpha))
    sops = int(round(count_sops(net) / steps))
    return energy_estimate(0, sops)
