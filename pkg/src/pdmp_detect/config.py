"""INI configuration schema for models, costs, quantization and benchmarks.

A config file has up to four sections.  Keys and defaults:

``[model]``
    example       one of 1a | 1b | 2a | 2b            (required)
    d             number of post-jump regimes          (required)
    speeds        comma list v_1..v_d                  (required)
    v0            pre-jump frequency (examples 2a/2b)  (default 0)
    x0            start position                       (default: 1 for ex 1, 0 for ex 2)
    sigma2        observation noise variance           (required)
    s             noise truncation half-width, or "auto" = 3 sigma
    link          identity | inverse                   (default identity)
    delta         observation step; fractions like 1/6 are accepted
    N             number of steps to the horizon       (required)
    kmin, kmax    optional clip of the derived state bounds

``[costs]``
    alpha, beta, gamma  scalar penalties (gamma expands to a constant
                        off-diagonal matrix)

``[quantize]``
    ell                 state grid size per epoch       (default 21)
    nk                  belief grid size per epoch      (default 50)
    train_samples       CLVQ stream length              (default 1_000_000)
    transition_samples  chains for transition counts    (default 1_000_000)
    chain_samples       surrogate chains for the belief grids (default 100_000)

``[bench]``
    alphas, betas, gammas, sigma2s, nks   comma lists of sweep values
    runs, methods (ma,kalman,policy), ma_windows, ma_thresholds,
    kf_rules (floats and/or "cal")

``seed`` may appear in [model] or [bench]; the command line overrides it.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .kernel import CostParams, make_cost_params
from .model import NoiseSpec, PdmpModel

__all__ = ["QuantizeConfig", "BenchSweep", "AppConfig", "load_config", "model_from_params"]


def _num(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def _num_list(text: str) -> list:
    return [_num(tok) for tok in text.split(",") if tok.strip()]


@dataclass(frozen=True)
class QuantizeConfig:
    ell: int = 21
    nk: int = 50
    train_samples: int = 1_000_000
    transition_samples: int = 1_000_000
    chain_samples: int = 100_000


@dataclass
class BenchSweep:
    alphas: list
    betas: list
    gammas: list
    sigma2s: list
    nks: list
    runs: int = 1000
    methods: tuple = ("ma", "kalman", "policy")
    ma_windows: tuple = (2, 3, 4, 5)
    ma_thresholds: tuple = (2.0,)
    ma_direction: str = "above"
    kf_rules: tuple = (0.5, 0.75, 0.9, "cal")


@dataclass
class AppConfig:
    model_params: dict
    model: PdmpModel
    costs: Optional[CostParams]
    quantize: QuantizeConfig
    bench: Optional[BenchSweep]
    seed: int


def model_from_params(params: dict, sigma2: Optional[float] = None) -> PdmpModel:
    """Build a model, optionally overriding the noise variance (bench sweeps)."""
    p = dict(params)
    if sigma2 is not None:
        p["sigma2"] = sigma2
    sig2 = float(p["sigma2"])
    s = p.get("s", "auto")
    trunc = 3.0 * float(np.sqrt(sig2)) if (s in (None, "auto")) else float(s)
    if sig2 == 0.0 and s in (None, "auto"):
        trunc = 1.0
    example = str(p["example"])
    x0_default = 1.0 if example in ("1a", "1b") else 0.0
    model = PdmpModel(
        example=example,
        d=int(p["d"]),
        speeds=tuple(float(v) for v in p["speeds"]),
        noise=NoiseSpec(sig2, trunc),
        delta=float(p["delta"]),
        horizon_steps=int(p["N"]),
        x0=float(p.get("x0", x0_default)),
        base_speed=float(p.get("v0", 0.0)),
        link=str(p.get("link", "identity")),
        state_bounds=p.get("state_bounds"),
    )
    kmin, kmax = p.get("kmin"), p.get("kmax")
    if kmin is not None or kmax is not None:
        lo, hi = model.state_bounds
        lo = max(lo, float(kmin)) if kmin is not None else lo
        hi = min(hi, float(kmax)) if kmax is not None else hi
        model = PdmpModel(
            example=model.example,
            d=model.d,
            speeds=model.speeds,
            noise=model.noise,
            delta=model.delta,
            horizon_steps=model.horizon_steps,
            x0=model.x0,
            base_speed=model.base_speed,
            link=model.link,
            state_bounds=(lo, hi),
        )
    return model


def load_config(path) -> AppConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(Path(path))
    if not read:
        raise FileNotFoundError(path)
    if "model" not in cp:
        raise ValueError("config needs a [model] section")
    m = cp["model"]
    params = {
        "example": m.get("example"),
        "d": m.getint("d"),
        "speeds": _num_list(m.get("speeds")),
        "v0": _num(m.get("v0", "0")),
        "sigma2": _num(m.get("sigma2")),
        "s": m.get("s", "auto"),
        "link": m.get("link", "identity"),
        "delta": _num(m.get("delta")),
        "N": m.getint("N"),
    }
    if m.get("x0") is not None:
        params["x0"] = _num(m.get("x0"))
    for key in ("kmin", "kmax"):
        if m.get(key) is not None:
            params[key] = _num(m.get(key))
    model = model_from_params(params)

    costs = None
    if "costs" in cp:
        c = cp["costs"]
        costs = make_cost_params(
            alpha=_num(c.get("alpha")),
            beta=_num(c.get("beta")),
            gamma=_num(c.get("gamma", "0")),
            delta=model.delta,
            horizon_steps=model.horizon_steps,
            d=model.d,
        )

    q = cp["quantize"] if "quantize" in cp else {}
    quantize = QuantizeConfig(
        ell=int(q.get("ell", 21)),
        nk=int(q.get("nk", 50)),
        train_samples=int(q.get("train_samples", 1_000_000)),
        transition_samples=int(q.get("transition_samples", 1_000_000)),
        chain_samples=int(q.get("chain_samples", 100_000)),
    )

    bench = None
    if "bench" in cp:
        b = cp["bench"]
        rules = []
        for tok in b.get("kf_rules", "0.5,0.75,0.9,cal").split(","):
            tok = tok.strip()
            rules.append("cal" if tok == "cal" else float(tok))
        bench = BenchSweep(
            alphas=_num_list(b.get("alphas", str(costs.alpha if costs else 4))),
            betas=_num_list(b.get("betas", str(costs.beta if costs else 1))),
            gammas=_num_list(b.get("gammas", "1.5")),
            sigma2s=_num_list(b.get("sigma2s", str(params["sigma2"]))),
            nks=[int(v) for v in _num_list(b.get("nks", str(quantize.nk)))],
            runs=int(b.get("runs", 1000)),
            methods=tuple(t.strip() for t in b.get("methods", "ma,kalman,policy").split(",") if t.strip()),
            ma_windows=tuple(int(v) for v in _num_list(b.get("ma_windows", "2,3,4,5"))),
            ma_thresholds=tuple(_num_list(b.get("ma_thresholds", "2"))),
            ma_direction=b.get("ma_direction", "above"),
            kf_rules=tuple(rules),
        )

    seed = 0
    for section in ("bench", "model"):
        if section in cp and cp[section].get("seed") is not None:
            seed = cp[section].getint("seed")
            break
    return AppConfig(params, model, costs, quantize, bench, seed)
