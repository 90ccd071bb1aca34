"""End-to-end benchmark harness: build, solve, evaluate, tabulate.

A benchmark sweep is a product of noise levels, cost parameters and methods.
Expensive artifacts (state grids, transition matrices, belief grids) depend
only on the model, grid sizes and training seed, never on the costs, so they
are built once per (noise level, belief-grid size) and cached on disk keyed
by a content hash of their inputs.  Within a parameter cell every method is
evaluated with the same seed and therefore sees identical trajectories and
observation noise.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .baselines import KalmanDetector, MaConfig, MaDetector
from .config import BenchSweep, QuantizeConfig, model_from_params
from .dp import backward_solve, build_belief_grids
from .filtering import BarChainSampler
from .kernel import make_cost_params
from .model import PdmpModel
from .policy import EvalSummary, QuantPolicyDetector, evaluate_strategy
from .quantize import CLVQSchedule, clvq_train, estimate_transitions
from . import serialize

__all__ = ["ResultTable", "build_pipeline", "run_benchmark", "format_table", "parse_csv_table"]

log = logging.getLogger(__name__)

COLUMNS = [
    "method",
    "sigma2",
    "alpha",
    "beta",
    "gamma",
    "window",
    "threshold",
    "rule",
    "nk",
    "runs",
    "mean_cost",
    "sd_cost",
    "ci95",
    "mean_delay",
    "sd_delay",
    "mean_obs_after_jump",
    "early",
    "wrong_mode",
    "no_stop",
    "degenerate",
]

_TAG_OMEGA, _TAG_TRANS, _TAG_GAMMA, _TAG_EVAL = 1, 2, 3, 4


def _float_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def _rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(tag)) + tuple(int(e) for e in extra)))


@dataclass
class ResultTable:
    rows: List[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **kwargs):
        self.rows.append({c: kwargs.get(c, "") for c in COLUMNS})

    def sorted_rows(self) -> List[dict]:
        return self.rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(table: ResultTable, style: str = "csv") -> str:
    if style == "csv":
        lines = [",".join(COLUMNS)]
        for row in table.sorted_rows():
            lines.append(",".join(_fmt(row[c]) for c in COLUMNS))
        return "\n".join(lines) + "\n"
    if style != "markdown":
        raise ValueError("style must be 'csv' or 'markdown'")
    rows = table.sorted_rows()
    groups = {}
    for i, row in enumerate(rows):
        key = (row["sigma2"], row["alpha"], row["beta"], row["gamma"])
        groups.setdefault(key, []).append(i)
    best = set()
    for idx in groups.values():
        vals = [(rows[i]["mean_cost"], i) for i in idx if rows[i]["mean_cost"] != ""]
        if vals:
            lo = min(v for v, _ in vals)
            best |= {i for v, i in vals if v == lo}
    out = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for i, row in enumerate(rows):
        cells = []
        for c in COLUMNS:
            cell = _fmt(row[c])
            if c == "mean_cost" and i in best and cell:
                cell = f"**{cell}**"
            cells.append(cell)
        out.append("| " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def parse_csv_table(text: str) -> ResultTable:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    if header != COLUMNS:
        raise ValueError("unexpected header")
    table = ResultTable()
    int_cols = {"window", "nk", "runs", "early", "wrong_mode", "no_stop", "degenerate"}
    for ln in lines[1:]:
        row = {}
        for c, tok in zip(COLUMNS, ln.split(",")):
            if tok == "":
                row[c] = ""
            elif c == "method" or c == "rule":
                row[c] = tok
            elif c in int_cols:
                row[c] = int(tok)
            else:
                row[c] = float(tok)
        table.rows.append(row)
    return table


def _cache_key(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_pipeline(
    model_params: dict,
    sigma2: float,
    quantize: QuantizeConfig,
    nk: int,
    seed: int,
    cache_dir: Optional[Path] = None,
    schedule: Optional[CLVQSchedule] = None,
    no_train: bool = False,
):
    """Train (or load) state grids, transitions and belief grids for one cell."""
    model = model_from_params(model_params, sigma2)
    schedule = schedule or CLVQSchedule(n_samples=quantize.train_samples)
    base_key = _cache_key(
        {
            "model": {k: model_params.get(k) for k in sorted(model_params)},
            "sigma2": sigma2,
            "ell": quantize.ell,
            "schedule": asdict(schedule),
            "transition_samples": quantize.transition_samples,
            "seed": seed,
        }
    )
    gamma_key = _cache_key({"base": base_key, "nk": nk, "chains": quantize.chain_samples})
    paths = {}
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "grids": cache_dir / f"{base_key}-omega.bin",
            "trans": cache_dir / f"{base_key}-trans.bin",
            "bgrids": cache_dir / f"{gamma_key}-gamma.bin",
        }
    if paths and all(p.exists() for p in paths.values()):
        grids = serialize.load_grids(paths["grids"])
        transitions = serialize.load_transitions(paths["trans"])
        bgrids = serialize.load_belief_grids(paths["bgrids"])
        return model, grids, transitions, bgrids
    if no_train:
        missing = [str(p) for p in paths.values() if not p.exists()] or ["<no cache dir>"]
        raise FileNotFoundError("missing cached artifacts (rerun without --no-train): " + ", ".join(missing))

    sizes = [quantize.ell] * (model.horizon_steps + 1)
    t0 = time.time()
    if paths and paths["grids"].exists() and paths["trans"].exists():
        grids = serialize.load_grids(paths["grids"])
        transitions = serialize.load_transitions(paths["trans"])
    else:
        grids = clvq_train(model, sizes, schedule, _rng(seed, _TAG_OMEGA, _float_bits(sigma2)))
        transitions = estimate_transitions(
            model, grids, quantize.transition_samples, _rng(seed, _TAG_TRANS, _float_bits(sigma2))
        )
        if paths:
            serialize.save_grids(paths["grids"], grids)
            serialize.save_transitions(paths["trans"], transitions)
    sampler = BarChainSampler(model, grids, transitions)
    bgrids = build_belief_grids(
        sampler,
        [nk] * (model.horizon_steps + 1),
        schedule,
        _rng(seed, _TAG_GAMMA, _float_bits(sigma2), nk),
        n_chains=quantize.chain_samples,
    )
    if paths:
        serialize.save_belief_grids(paths["bgrids"], bgrids)
    log.info("pipeline sigma2=%s nk=%d trained in %.1fs", sigma2, nk, time.time() - t0)
    return model, grids, transitions, bgrids


def _summary_row(table: ResultTable, method: str, summary: EvalSummary, **params):
    table.add(method=method, **params, **summary.row())


def run_benchmark(
    model_params: dict,
    sweep: BenchSweep,
    quantize: QuantizeConfig,
    seed: int,
    out_dir: Optional[Path] = None,
    no_train: bool = False,
) -> ResultTable:
    """Run the full sweep; returns the result table and writes artifacts if out_dir is set."""
    t_start = time.time()
    table = ResultTable()
    cache_dir = Path(out_dir) / "cache" if out_dir is not None else None
    needs_policy = "policy" in sweep.methods
    for sigma2 in sweep.sigma2s:
        model = model_from_params(model_params, sigma2)
        eval_seed = int(
            np.random.SeedSequence((seed, _TAG_EVAL, _float_bits(sigma2))).generate_state(1)[0]
        )
        pipelines = {}
        if needs_policy:
            for nk in sweep.nks:
                pipelines[nk] = build_pipeline(
                    model_params, sigma2, quantize, nk, seed, cache_dir, no_train=no_train
                )
        for alpha in sweep.alphas:
            for beta in sweep.betas:
                for gamma in sweep.gammas:
                    costs = make_cost_params(alpha, beta, gamma, model.delta, model.horizon_steps, model.d)
                    cell = dict(sigma2=sigma2, alpha=alpha, beta=beta, gamma=gamma, runs=sweep.runs)
                    if "ma" in sweep.methods:
                        for window in sweep.ma_windows:
                            for thr in sweep.ma_thresholds:
                                det = MaDetector(model, MaConfig(int(window), float(thr), sweep.ma_direction))
                                s = evaluate_strategy(model, det, costs, sweep.runs, eval_seed)
                                _summary_row(table, "ma", s, window=int(window), threshold=float(thr), **cell)
                    if "kalman" in sweep.methods:
                        for rule in sweep.kf_rules:
                            if rule == "cal":
                                det = KalmanDetector(model, ("calibrated", costs))
                                label = "cal"
                            else:
                                det = KalmanDetector(model, ("fixed", float(rule)))
                                label = repr(float(rule))
                            s = evaluate_strategy(model, det, costs, sweep.runs, eval_seed)
                            _summary_row(table, "kalman", s, rule=label, **cell)
                    if needs_policy:
                        for nk in sweep.nks:
                            m, grids, transitions, bgrids = pipelines[nk]
                            solution = backward_solve(bgrids, grids, costs)
                            det = QuantPolicyDetector(m, grids, transitions, bgrids, solution)
                            s = evaluate_strategy(m, det, costs, sweep.runs, eval_seed)
                            _summary_row(table, "policy", s, nk=int(nk), **cell)
    table.meta = {
        "seed": seed,
        "model": {k: model_params.get(k) for k in sorted(model_params)},
        "sweep": asdict(sweep),
        "quantize": asdict(quantize),
        "duration_s": round(time.time() - t_start, 3),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_text = format_table(table, "csv")
        (out_dir / "results.csv").write_text(csv_text)
        (out_dir / "results.md").write_text(format_table(table, "markdown"))
        manifest = dict(table.meta)
        manifest["results_sha256"] = hashlib.sha256(csv_text.encode()).hexdigest()
        artifacts = {}
        if cache_dir is not None and cache_dir.exists():
            for p in sorted(cache_dir.glob("*.bin")):
                artifacts[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest["artifacts"] = artifacts
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return table
