"""Command-line experiment runner.

Subcommands::

    train-expert   behavior-clone the analytic expert  -> policy.json
    convert        ANN -> spiking network              -> network.json
    eval           ANN and SNN returns, per-step rewards and PCA projection
    decompose      reward decomposition                -> decomposition.json
    correlate      cross-step cosine metrics           -> correlations.json
    sweep-alpha    residual correlation and return per alpha -> alpha_sweep.csv
    energy         FLOP / SOP energy estimate          -> energy.json

Exit codes: 0 success, 1 parse or validation error, 2 numeric fault.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .errors import SnnloopError, ValidationError
from .experiment import (ExperimentConfig, convert_policy, env_from_config, master_seed,
                         train_expert_policy)
from .policy import load_policy, policy_to_dict, training_mse
from .reporting import make_meta, write_csv, write_json
from .spiking import load_network, network_to_dict

log = logging.getLogger("snnloop")

POLICY_FILE = "policy.json"
NETWORK_FILE = "network.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse alpha list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snnloop", description="Closed-loop ANN-to-SNN conversion experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--env")
    common.add_argument("--neuron", help="if | snm | snm:literal | mt:N | dc | dc:if | dc:mt:N")
    common.add_argument("--snm-literal", action="store_true",
                        help="use the verbatim negative-spike condition for SNM")
    common.add_argument("-T", "--T", dest="T", type=int)
    common.add_argument("--alpha", type=float, help="CRPI alpha (omit for fresh init)")
    common.add_argument("--alphas", type=_floats, help="comma-separated alpha grid")
    common.add_argument("--episodes", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--calib-episodes", dest="calib_episodes", type=int)
    common.add_argument("--smooth-window", dest="smooth_window", type=int)
    common.add_argument("--bc-epochs", dest="bc_epochs", type=int)
    common.add_argument("--policy", help="policy file (default OUT/policy.json)")
    common.add_argument("--network", help="converted network file (default OUT/network.json)")
    common.add_argument("--symmetric-clip", action="store_true",
                        help="CRPI clips carried membranes to [-theta, theta]")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for episodes")
    common.add_argument("-v", "--verbose", action="store_true")

    for name, fn, doc in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=doc)
        sp.set_defaults(func=fn)
    return p


def _config(args) -> ExperimentConfig:
    keys = ("out", "env", "neuron", "T", "alpha", "alphas", "episodes", "horizon", "seed",
            "calib_episodes", "smooth_window", "bc_epochs")
    overrides = {k: getattr(args, k) for k in keys}
    if args.snm_literal:
        overrides["neuron"] = "snm:literal"
    cfg = ExperimentConfig.load(args.config, overrides)
    cfg.seed = master_seed(cfg.seed)
    cfg.validate()
    return cfg


class Run:
    """Resolved config plus lazily loaded artifacts for one invocation."""

    def __init__(self, args):
        self.args = args
        self.cfg = _config(args)
        self.out = Path(self.cfg.out)
        self.env = env_from_config(self.cfg)
        self.meta = make_meta(self.cfg.to_json(), self.cfg.hash(), self.cfg.seed)
        self.jobs = max(1, int(args.jobs))

    @property
    def policy_path(self) -> Path:
        return Path(self.args.policy) if self.args.policy else self.out / POLICY_FILE

    def policy(self):
        path = self.policy_path
        if not path.exists():
            raise ValidationError(f"policy file {path} not found; run train-expert first")
        return load_policy(path)

    def network(self):
        path = Path(self.args.network) if self.args.network else self.out / NETWORK_FILE
        if path.exists():
            net = load_network(path)
            if self.args.T is not None and self.args.T != net.T:
                raise ValidationError(f"--T {self.args.T} disagrees with network file T={net.T}")
        else:
            log.info("no network file at %s; converting %s", path, self.policy_path)
            net = convert_policy(self.env, self.policy(), self.cfg.kind, self.cfg.T,
                                 self.cfg.calib_episodes, self.cfg.seed)
        if self.args.symmetric_clip:
            net.symmetric_clip = True
        return net

    def path(self, name: str) -> Path:
        return self.out / name


def cmd_train_expert(run: Run) -> None:
    from .experiment import bc_dataset
    cfg = run.cfg
    policy = train_expert_policy(run.env, cfg)
    obs, acts = bc_dataset(run.env, cfg.expert_episodes, cfg.uniform_states, cfg.seed)
    doc = policy_to_dict(policy)
    doc["meta"] = dict(run.meta, train_mse=training_mse(policy, obs, acts))
    write_json(run.policy_path, doc)
    print(f"wrote {run.policy_path} (train MSE {doc['meta']['train_mse']:.3e})")


def cmd_convert(run: Run) -> None:
    cfg = run.cfg
    net = convert_policy(run.env, run.policy(), cfg.kind, cfg.T, cfg.calib_episodes, cfg.seed)
    net.symmetric_clip = run.args.symmetric_clip
    doc = network_to_dict(net)
    doc["meta"] = run.meta
    path = Path(run.args.network) if run.args.network else run.path(NETWORK_FILE)
    write_json(path, doc)
    print(f"wrote {path} ({net.kind}, T={net.T})")


def cmd_eval(run: Run) -> None:
    cfg, env = run.cfg, run.env
    ann, snn = run.policy(), run.network()
    seeds = an.episode_seeds(cfg.seed, cfg.episodes)
    ann_tr = [an.rollout(env, ann, None, s) for s in seeds]
    snn_tr = [an.rollout(env, snn, None, s, cfg.alpha) for s in seeds]
    rows = [("ANN", i, t.ret) for i, t in enumerate(ann_tr)] + \
           [("SNN", i, t.ret) for i, t in enumerate(snn_tr)]
    write_csv(run.path("returns.csv"), ["policy", "episode", "return"], rows, run.meta)

    # raw series always; the smoothed copy is for display only
    raw, smooth = [], []
    for tag, trs in (("ANN", ann_tr), ("SNN", snn_tr)):
        ps = an.per_step_rewards(trs, cfg.smooth_window)
        raw += [(int(k), float(m), float(h), tag) for k, m, h in zip(ps.k, ps.mean, ps.half_std)]
        smooth += [(int(k), float(m), float(h), tag) for k, m, h in zip(ps.k, ps.smoothed, ps.half_std)]
    cols = ["k", "mean_reward", "half_std", "policy"]
    write_csv(run.path("per_step_rewards.csv"), cols, raw, run.meta)
    if cfg.smooth_window > 1:
        write_csv(run.path("per_step_rewards_smoothed.csv"), cols, smooth,
                  dict(run.meta, smooth_window=cfg.smooth_window))

    proj, _, _ = an.pca_project([ann_tr[0], snn_tr[0]])
    pca_rows = [(k, tag, float(v)) for tag, series in zip(("ANN", "SNN"), proj)
                for k, v in enumerate(series)]
    write_csv(run.path("pca_projection.csv"), ["k", "policy", "pc1"], pca_rows, run.meta)

    ra = np.array([t.ret for t in ann_tr])
    rs = np.array([t.ret for t in snn_tr])
    print(f"ANN return {ra.mean():.4f} +- {an.half_std(ra):.4f}")
    print(f"SNN return {rs.mean():.4f} +- {an.half_std(rs):.4f}  ({snn.kind}, T={snn.T}, alpha={cfg.alpha})")


def cmd_decompose(run: Run) -> None:
    cfg = run.cfg
    rep = an.reward_decomposition(run.env, run.policy(), run.network(), cfg.episodes, cfg.seed,
                                  cfg.alpha, jobs=run.jobs)
    write_json(run.path("decomposition.json"), rep.to_dict(), run.meta)
    for k in ("R_ann", "R_snn_given_ann", "R_ann_given_snn", "R_snn"):
        m, h = getattr(rep, k)
        print(f"{k:16s} {m:12.4f} +- {h:.4f}")


def cmd_correlate(run: Run) -> None:
    cfg = run.cfg
    snn = run.network()
    rep = an.cross_step_correlations(run.env, snn.source, snn, cfg.episodes, cfg.seed, cfg.alpha,
                                     jobs=run.jobs)
    payload = {"ann_correction": rep.ann_correction, "snn_consistency": rep.snn_consistency,
               "snn_drift": rep.snn_drift, "n_pairs": rep.n_pairs,
               "residual_cosine": rep.residual_cosine, "n_residual_pairs": rep.n_residual_pairs}
    write_json(run.path("correlations.json"), payload, run.meta)
    write_csv(run.path("correlations.csv"), ["metric", "value", "n_pairs"], rep.to_rows(), run.meta)

    tr = an.rollout(run.env, snn, None, an.episode_seeds(cfg.seed, 1)[0], cfg.alpha,
                    record_residuals=True)
    rows, prev = [], None
    for k, eps in enumerate(tr.residuals):
        for l, e in enumerate(eps):
            c = an.cosine(prev[l], e) if prev is not None else ""
            rows.append((k, l, float(np.mean(e)), c))
        prev = eps
    write_csv(run.path("residual_trace.csv"), ["k", "layer", "mean_eps", "cos_prev"], rows, run.meta)
    for name, value, n in rep.to_rows():
        print(f"{name:16s} {value:+.4f}  (n={n})")


def cmd_sweep_alpha(run: Run) -> None:
    cfg = run.cfg
    ann, snn = run.policy(), run.network()
    res = an.residual_correlation_sweep(run.env, snn, cfg.alphas, cfg.episodes, cfg.seed, jobs=run.jobs)
    write_csv(run.path("residual_correlation.csv"),
              ["alpha", "residual_cosine", "snn_consistency", "snn_drift"],
              [(r["alpha"], r["residual_cosine"], r["snn_consistency"], r["snn_drift"]) for r in res],
              run.meta)
    sweep = an.alpha_performance_sweep(run.env, ann, snn, cfg.alphas, cfg.episodes, cfg.seed,
                                       jobs=run.jobs)
    meta = dict(run.meta, ratio_form=sweep.ratio_form, r_worst=sweep.r_worst, ann_mean=sweep.ann_mean)
    write_csv(run.path("alpha_sweep.csv"), ["alpha", "mean_return", "half_std", "ratio"],
              [(r["alpha"], r["mean_return"], r["half_std"], r["ratio"]) for r in sweep.rows], meta)
    print(f"ANN return {sweep.ann_mean:.4f}; ratio form: {sweep.ratio_form}")
    for r, c in zip(sweep.rows, res):
        print(f"alpha={r['alpha']:.2f} return {r['mean_return']:10.4f} +- {r['half_std']:.4f} "
              f"ratio {r['ratio']:.4f} resid_cos {c['residual_cosine']:+.4f} "
              f"consistency {c['snn_consistency']:+.4f}")


def cmd_energy(run: Run) -> None:
    cfg = run.cfg
    ann, snn = run.policy(), run.network()
    e_ann = an.ann_energy(ann)
    e_snn = an.snn_energy(run.env, snn, cfg.episodes, cfg.seed, cfg.alpha)
    payload = {name: {"flops": e.flops, "sops": e.sops, "energy_joules": e.energy_joules}
               for name, e in (("ann", e_ann), ("snn", e_snn))}
    write_json(run.path("energy.json"), payload, run.meta)
    print(f"ANN  {e_ann.flops} FLOPs  {e_ann.energy_uj:.6f} uJ per inference")
    print(f"SNN  {e_snn.sops} SOPs   {e_snn.energy_uj:.6f} uJ per inference")


COMMANDS = [
    ("train-expert", cmd_train_expert, "behavior-clone the expert controller"),
    ("convert", cmd_convert, "convert the ANN to a spiking network"),
    ("eval", cmd_eval, "closed-loop returns, per-step rewards and PCA projection"),
    ("decompose", cmd_decompose, "reward decomposition"),
    ("correlate", cmd_correlate, "cross-step action-error correlations"),
    ("sweep-alpha", cmd_sweep_alpha, "residual correlation and return across alpha"),
    ("energy", cmd_energy, "energy per inference"),
]


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(Run(args))
    except ArithmeticError as exc:  # NumericFault, TrainingDivergedError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SnnloopError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
