"""Command-line entry points.

Subcommands: ``simulate``, ``quantize``, ``solve``, ``run-policy``,
``baseline``, ``bench``, ``bounds``.  Every subcommand reads the same INI
configuration (see :mod:`pdmp_detect.config`); ``--seed`` overrides the
configured seed, ``--out`` picks the output location.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .baselines import KalmanDetector, MaConfig, MaDetector, kalman_detect, ma_detect, ma_mode_choice
from .bench import build_pipeline, format_table, run_benchmark
from .config import load_config
from .dp import backward_solve, belief_distortion_profile, bound_constants, theorem_bounds
from .filtering import BarChainSampler
from .kernel import strategy_cost
from .model import observe, simulate_trajectory
from .policy import QuantPolicyDetector
from .quantize import CLVQSchedule, clvq_train, distortion_profile, estimate_transitions


def _add_common(p):
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes (best effort)")
    p.add_argument("--out", default=None, help="output file or directory")


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    out_dir = Path(args.out) if args.out else None
    runs = args.runs
    for r in range(runs):
        traj = simulate_trajectory(cfg.model, rng)
        obs = observe(traj, cfg.model, rng)
        modes = traj.modes_at_epochs()
        xs = traj.positions_at_epochs()
        if out_dir is None:
            target = sys.stdout
            print(f"# run {r}: jump_time={traj.jump_time:.6f} post_mode={traj.post_mode}")
            for t, y in zip(obs.times, obs.y):
                print(f"{t:.6f},{y!r}")
        else:
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / (f"obs_{r:04d}.csv" if runs > 1 else "obs.csv")
            serialize.write_observations_csv(path, obs.times, obs.y, modes if not args.no_truth else None, xs)
            print(path)
    return 0


def cmd_quantize(args) -> int:
    cfg = _load(args)
    out = Path(args.out or "quantize_out")
    out.mkdir(parents=True, exist_ok=True)
    schedule = CLVQSchedule(n_samples=cfg.quantize.train_samples)
    sizes = [cfg.quantize.ell] * (cfg.model.horizon_steps + 1)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
    grids = clvq_train(cfg.model, sizes, schedule, rng)
    mats = estimate_transitions(
        cfg.model, grids, cfg.quantize.transition_samples, np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    )
    serialize.save_grids(out / "grids.bin", grids)
    serialize.save_transitions(out / "transitions.bin", mats)
    serialize.grids_to_csv(out / "grids.csv", grids)
    sizes_str = ",".join(str(g.ell) for g in grids)
    print(f"trained {len(grids)} grids (sizes {sizes_str}) -> {out}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load(args)
    if cfg.costs is None:
        raise SystemExit("config needs a [costs] section")
    grids_dir = Path(args.grids)
    grids = serialize.load_grids(grids_dir / "grids.bin")
    mats = serialize.load_transitions(grids_dir / "transitions.bin")
    sampler = BarChainSampler(cfg.model, grids, mats)
    schedule = CLVQSchedule(n_samples=cfg.quantize.train_samples)
    bgrids = build_belief_grids(
        sampler,
        [cfg.quantize.nk] * (cfg.model.horizon_steps + 1),
        schedule,
        np.random.default_rng(np.random.SeedSequence((cfg.seed, 3))),
        n_chains=cfg.quantize.chain_samples,
    )
    solution = backward_solve(bgrids, grids, cfg.costs)
    out = Path(args.out or "solution_out")
    out.mkdir(parents=True, exist_ok=True)
    serialize.save_solution(out / "solution.bin", solution, bgrids)
    serialize.save_belief_grids(out / "belief_grids.bin", bgrids)
    serialize.save_grids(out / "grids.bin", grids)
    serialize.save_transitions(out / "transitions.bin", mats)
    serialize.solution_to_csv(out / "solution.csv", solution, bgrids)
    print(f"solved {len(bgrids)} steps, v0={solution.values[0][0]!r} -> {out}")
    return 0


def cmd_run_policy(args) -> int:
    cfg = load_config(args.model)
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.costs is None:
        raise SystemExit("config needs a [costs] section")
    sol_dir = Path(args.solution)
    if sol_dir.is_file():
        sol_dir = sol_dir.parent
    grids = serialize.load_grids(sol_dir / "grids.bin")
    mats = serialize.load_transitions(sol_dir / "transitions.bin")
    bgrids, solution = serialize.load_solution(sol_dir / "solution.bin", cfg.costs)
    det = QuantPolicyDetector(cfg.model, grids, mats, bgrids, solution)
    _, y, modes, _ = serialize.read_observations_csv(args.obs)
    tau, action, degenerate = det.detect(y)
    cost = ""
    if modes is not None:
        cost = repr(strategy_cost(cfg.costs, modes, tau, action))
    print(f"tau={'none' if tau is None else tau} action={action} cost={cost} degenerate={degenerate}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load(args)
    _, y, modes, _ = serialize.read_observations_csv(args.obs)
    if args.kind == "ma":
        det = MaDetector(cfg.model, MaConfig(args.window, args.threshold, args.direction))
        taus, actions, _ = det.detect_batch(y[None, :])
        tau = None if taus[0] > cfg.model.horizon_steps else int(taus[0])
        action = int(actions[0])
    else:
        rule = ("calibrated", cfg.costs) if args.rule == "cal" else ("fixed", float(args.rule))
        if rule[0] == "calibrated" and cfg.costs is None:
            raise SystemExit("calibrated rule needs a [costs] section")
        det = KalmanDetector(cfg.model, rule)
        taus, actions, _ = det.detect_batch(y[None, :])
        tau = None if taus[0] > cfg.model.horizon_steps else int(taus[0])
        action = int(actions[0])
    cost = ""
    if modes is not None and cfg.costs is not None:
        cost = repr(strategy_cost(cfg.costs, modes, tau, action if tau is not None else 0))
    print(f"tau={'none' if tau is None else tau} action={action} cost={cost}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    if cfg.bench is None:
        raise SystemExit("config needs a [bench] section")
    if args.runs is not None:
        cfg.bench.runs = args.runs
    out = Path(args.out or "bench_out")
    table = run_benchmark(cfg.model_params, cfg.bench, cfg.quantize, cfg.seed, out, no_train=args.no_train)
    print(format_table(table, "markdown"))
    print(f"wrote {out}/results.csv, results.md, manifest.json")
    return 0


def cmd_bounds(args) -> int:
    cfg = _load(args)
    if cfg.costs is None:
        raise SystemExit("config needs a [costs] section")
    bc = bound_constants(cfg.model, cfg.costs)
    for name in ("phi", "g_bar", "b_bar", "f_upper", "f_lower", "b_f", "l_f", "ff_bar", "ff_tilde", "ff_plus"):
        print(f"{name} = {getattr(bc, name)!r}")
    if args.grids:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 9)))
        grids = serialize.load_grids(Path(args.grids) / "grids.bin")
        mats = serialize.load_transitions(Path(args.grids) / "transitions.bin")
        l1, _ = distortion_profile(cfg.model, grids, args.samples, rng)
        belief = np.zeros(cfg.model.horizon_steps + 1)
        if args.solution:
            sol_dir = Path(args.solution)
            bgrids = serialize.load_belief_grids(sol_dir / "belief_grids.bin")
            sampler = BarChainSampler(cfg.model, grids, mats)
            belief = belief_distortion_profile(sampler, bgrids, min(args.samples, 20000), rng)
        first, second = theorem_bounds(bc, l1[: cfg.model.horizon_steps], belief)
        print(f"state_quantization_bound = {first!r}")
        print(f"belief_quantization_bound = {second!r}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdmp-detect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate trajectories and observations")
    _add_common(p)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--no-truth", action="store_true", help="omit the hidden mode/position columns")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("quantize", help="train state grids and transition matrices")
    _add_common(p)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("solve", help="build belief grids and solve the dynamic program")
    _add_common(p)
    p.add_argument("--grids", required=True, help="directory produced by `quantize`")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("run-policy", help="run the solved stopping rule on one observation stream")
    p.add_argument("--model", required=True, help="INI configuration file")
    p.add_argument("--solution", required=True, help="directory produced by `solve`")
    p.add_argument("--obs", required=True, help="observation CSV")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_run_policy)

    p = sub.add_parser("baseline", help="run a baseline detector on one observation stream")
    p.add_argument("kind", choices=["ma", "kalman"])
    _add_common(p)
    p.add_argument("--obs", required=True)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--direction", choices=["above", "below"], default="above")
    p.add_argument("--rule", default="cal", help="posterior threshold or 'cal'")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("bench", help="run the benchmark sweep")
    _add_common(p)
    p.add_argument("--runs", type=int, default=None, help="override the configured run count")
    p.add_argument("--no-train", action="store_true", help="fail instead of training missing artifacts")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("bounds", help="print regularity constants and error bounds")
    _add_common(p)
    p.add_argument("--grids", default=None, help="directory produced by `quantize`")
    p.add_argument("--solution", default=None, help="directory produced by `solve`")
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(fn=cmd_bounds)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
