"""Why small per-step errors matter in closed loop, and what CRPI does about it.

On the double integrator with an IF network (T=8 for returns, T=16 for
correlations) this prints the reward decomposition, the cross-step action
error cosines and a short alpha sweep.

    python demos/closed_loop_drift.py
"""

from snnloop.analysis import (alpha_performance_sweep, cross_step_correlations,
                              residual_correlation_sweep, reward_decomposition)
from snnloop.experiment import ExperimentConfig, convert_policy, env_from_config, train_expert_policy

EPISODES, SEED = 20, 1


def main():
    cfg = ExperimentConfig(env="double_integrator")
    env = env_from_config(cfg)
    print("training the behavior-cloned actor ...")
    ann = train_expert_policy(env, cfg)
    snn8 = convert_policy(env, ann, "if", 8, cfg.calib_episodes, cfg.seed)
    snn16 = convert_policy(env, ann, "if", 16, cfg.calib_episodes, cfg.seed)

    rep = reward_decomposition(env, ann, snn8, EPISODES, SEED)
    print("\nreward decomposition (mean return +- half std)")
    for name in ("R_ann", "R_snn_given_ann", "R_ann_given_snn", "R_snn"):
        m, h = getattr(rep, name)
        print(f"  {name:16s} {m:9.4f} +- {h:.4f}")

    corr = cross_step_correlations(env, ann, snn16, EPISODES, SEED)
    print("\naction error correlation between consecutive steps (T=16)")
    for name, value, n in corr.to_rows():
        print(f"  {name:16s} {value:+.3f}  (n={n})")
    print("  the ANN pushes back against a previous error; the SNN tends to repeat it")

    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    res = residual_correlation_sweep(env, snn16, alphas, EPISODES, SEED)
    sweep = alpha_performance_sweep(env, ann, snn8, alphas, EPISODES, SEED)
    print(f"\nCRPI sweep (ANN return {sweep.ann_mean:.4f}, ratio form: {sweep.ratio_form})")
    print(f"  {'alpha':>5s} {'resid cos':>10s} {'consist.':>9s} {'return':>9s} {'ratio':>7s}")
    for r, s in zip(res, sweep.rows):
        print(f"  {r['alpha']:5.2f} {r['residual_cosine']:10.4f} {r['snn_consistency']:+9.3f} "
              f"{s['mean_return']:9.4f} {s['ratio']:7.4f}")


if __name__ == "__main__":
    main()
