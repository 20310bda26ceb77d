import functools

import numpy as np
import pytest

from snnloop.experiment import (ExperimentConfig, calibration_states, env_from_config,
                                train_expert_policy)
from snnloop.policy import DenseLayer, MlpPolicy, init_policy


@functools.lru_cache(maxsize=None)
def trained(env_name: str):
    """(env, BC policy, calibration states) under the default experiment config."""
    cfg = ExperimentConfig(env=env_name)
    env = env_from_config(cfg)
    policy = train_expert_policy(env, cfg)
    states = calibration_states(env, policy, cfg.calib_episodes, cfg.seed)
    return env, policy, states


@pytest.fixture(scope="session")
def di_setup():
    return trained("double_integrator")


@pytest.fixture(scope="session")
def pendulum_setup():
    return trained("pendulum")


def identity_net(scale=1.0):
    """1 -> 1 -> 1 network with unit weights and zero biases."""
    return MlpPolicy((DenseLayer([[1.0]], [0.0]), DenseLayer([[1.0]], [0.0])), scale)


def random_policy(arch, seed, scale=1.0, bias_scale=0.1):
    p = init_policy(arch, scale, seed)
    rng = np.random.default_rng([seed, 7])
    return MlpPolicy(tuple(DenseLayer(l.weights, rng.uniform(-bias_scale, bias_scale, l.out_dim))
                           for l in p.layers), scale)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    lines = mod.summary_lines() if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
