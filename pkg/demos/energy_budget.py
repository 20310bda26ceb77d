"""Energy per inference for the ANN and for spiking conversions of it.

    python demos/energy_budget.py
"""

from snnloop.analysis import ann_energy, snn_energy
from snnloop.experiment import ExperimentConfig, convert_policy, env_from_config, train_expert_policy


def main():
    cfg = ExperimentConfig(env="pendulum")
    env = env_from_config(cfg)
    print("training the behavior-cloned actor ...")
    ann = train_expert_policy(env, cfg)
    e = ann_energy(ann)
    print(f"\n{'policy':10s} {'FLOPs':>8s} {'SOPs':>8s} {'uJ':>10s}")
    print(f"{'ANN':10s} {e.flops:8d} {e.sops:8d} {e.energy_uj:10.5f}")
    for kind, T in (("if", 8), ("if", 32), ("snm", 8), ("mt:4", 4), ("dc", 4)):
        net = convert_policy(env, ann, kind, T, cfg.calib_episodes, cfg.seed)
        rep = snn_energy(env, net, 5, 1)
        print(f"{kind + ' T=' + str(T):10s} {rep.flops:8d} {rep.sops:8d} {rep.energy_uj:10.5f}")


if __name__ == "__main__":
    main()
