"""Closed-loop ANN-to-SNN conversion toolkit.

Convert ReLU actor networks into spiking networks (IF, SNM, MT and DC
neurons), run them in deterministic control environments, carry residual
membrane potential across decision steps (CRPI), and measure how conversion
error compounds in closed loop.
"""

from .analysis import (AlphaSweep, CorrelationReport, DecompositionReport, EnergyReport,
                       PerStepRewards, Trajectory, alpha_performance_sweep, ann_energy,
                       cross_step_correlations, energy_estimate, pca_project, per_step_rewards,
                       residual_correlation_sweep, reward_decomposition, rollout, snn_energy)
from .crpi import CrpiState, begin_decision_step, end_decision_step, residual_error
from .envs import DoubleIntegrator, EnvSpec, EnvState, Pendulum, lqr_solve, make_env
from .errors import (DegenerateDataError, EmptyReportError, NumericFault, PolicyFileError,
                     ProtocolError, SnnloopError, SolverError, TrainingDivergedError,
                     ValidationError)
from .experiment import ExperimentConfig
from .neurons import NeuronKind, SpikingLayer, dc_step, if_step, mt_step, snm_step
from .policy import (BcConfig, DenseLayer, MlpPolicy, bc_train, count_flops, forward,
                     forward_with_activations, gradient_check, load_policy, save_policy)
from .spiking import (SpikingNetwork, calibrate_thresholds, convert, count_sops, infer,
                      infer_batch, load_network, save_network)

__version__ = "0.1.0"
