"""Simulation studies: data generators, model presets and report-writing runners."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import condmodels as cm
from .chains import ChainConfig, ChainState, TraceSet, draw_imputations, init_state, iterative_sweep, run_chain
from .combine import AnalysisModel, per_dataset_fits, rubin_combine, stacked_mle
from .data import BINARY, CONTINUOUS, BivariatePattern, DataMatrix, bivariate_pattern, mcar_mask
from .diagnostics import binned_tv, ks_two_sample, monitored_betas, qq_points, write_qq_csv
from .errors import ImputeError, InvalidArgument
from .jointgauss import bivariate_gibbs_sweep, da_sweep
from .randkit import RngStream

log = logging.getLogger(__name__)

EXP3_TRUTH = np.array([0.5, 0.25, 0.125, 0.125, 0.125, 0.125])
EXP2_TRUTH = np.array([-2.0, 1, 1, 1, 1, -1, -1, -1])


# ---------------------------------------------------------------- generators

def gen_exp1(n_a: int = 200, n_b: int = 80, n_c: int = 80, rng=None, masked: bool = True) -> DataMatrix:
    """Independent standard normal (x, y) with the three-block bivariate pattern."""
    if min(n_a, n_b, n_c) < 0 or n_a + n_b + n_c == 0:
        raise InvalidArgument("block sizes must be non-negative with a positive total")
    rng = rng or RngStream()
    pattern = BivariatePattern(n_a, n_b, n_c)
    xy = rng.gen.standard_normal((pattern.n_rows, 2))
    dm = DataMatrix(xy, np.ones_like(xy, dtype=bool), ("x", "y"), (CONTINUOUS, CONTINUOUS))
    return bivariate_pattern(pattern, dm) if masked else dm


def _equicorrelated(p: int, rho: float) -> np.ndarray:
    return np.full((p, p), rho) + (1 - rho) * np.eye(p)


def gen_exp2(n: int = 1000, rng=None, rate: float = 0.3) -> DataMatrix:
    """y and x1..x7 with x ~ N(0, equicorrelated 0.4) and a linear y; MCAR at ``rate``.

    Values are drawn before the mask, so ``rate=0`` with the same stream
    returns the pre-mask data.
    """
    if n <= 50:
        raise InvalidArgument("gen_exp2 needs n > 50")
    rng = rng or RngStream()
    gen = rng.gen
    x = gen.standard_normal((n, 7)) @ np.linalg.cholesky(_equicorrelated(7, 0.4)).T
    y = -2 + x[:, :4].sum(axis=1) - x[:, 4:].sum(axis=1) + gen.standard_normal(n)
    names = ("y",) + tuple(f"x{j}" for j in range(1, 8))
    values = np.column_stack([y, x])
    dm = DataMatrix(values, np.ones_like(values, dtype=bool), names, (CONTINUOUS,) * 8)
    return mcar_mask(dm, rate, rng.child("mask"), reject_empty_rows=True)


def gen_exp3(n: int = 2000, rng=None, rate: float = 0.3) -> DataMatrix:
    """Binary y1 ~ B(0.45), y2 ~ B(0.65) and x1..x5 | y ~ N(y1 + 0.5 y2, equicorrelated 0.2)."""
    if n <= 100:
        raise InvalidArgument("gen_exp3 needs n > 100")
    rng = rng or RngStream()
    gen = rng.gen
    y1 = (gen.random(n) < 0.45).astype(float)
    y2 = (gen.random(n) < 0.65).astype(float)
    mean = np.outer(y1, np.ones(5)) + np.outer(y2, np.full(5, 0.5))
    x = mean + gen.standard_normal((n, 5)) @ np.linalg.cholesky(_equicorrelated(5, 0.2)).T
    names = ("y1", "y2") + tuple(f"x{j}" for j in range(1, 6))
    values = np.column_stack([y1, y2, x])
    dm = DataMatrix(values, np.ones_like(values, dtype=bool), names, (BINARY, BINARY) + (CONTINUOUS,) * 5)
    return mcar_mask(dm, rate, rng.child("mask"), reject_empty_rows=True)


# ------------------------------------------------------------- model presets

def exp1_specs(prior: str = cm.JEFFREYS) -> list[cm.ConditionalModelSpec]:
    """Through-origin regressions x | y then y | x."""
    return [
        cm.ConditionalModelSpec(0, cm.LINEAR, (cm.TermSpec.main(1),), prior),
        cm.ConditionalModelSpec(1, cm.LINEAR, (cm.TermSpec.main(0),), prior),
    ]


def exp2_specs(p: int = 8) -> list[cm.ConditionalModelSpec]:
    return [cm.main_effects_spec(j, p) for j in range(p)]


def exp3_specs() -> list[cm.ConditionalModelSpec]:
    """Logistic models with two interactions for y1, y2; main-effect linear models for x1..x5."""
    y1, y2, x1, x2 = 0, 1, 2, 3
    xs = list(range(2, 7))
    T = cm.TermSpec
    specs = [
        cm.ConditionalModelSpec(y1, cm.LOGISTIC, (T.intercept(), T.main(y2), *map(T.main, xs),
                                                  T.interaction(x1, y2), T.interaction(x2, y2))),
        cm.ConditionalModelSpec(y2, cm.LOGISTIC, (T.intercept(), T.main(y1), *map(T.main, xs),
                                                  T.interaction(x1, y1), T.interaction(x2, y1))),
    ]
    specs += [cm.main_effects_spec(j, 7) for j in xs]
    return specs


EXP3_ANALYSIS = AnalysisModel("linear", target=2, covariates=(0, 1, 3, 4, 5, 6))


class IterativeSweep:
    """Picklable ``sweep(state, rng)`` wrapper around :func:`iterative_sweep`."""

    def __init__(self, specs):
        self.specs = tuple(specs)

    def __call__(self, state, rng):
        return iterative_sweep(state, self.specs, rng)


class BivariateGibbsSweep:
    def __init__(self, pattern: BivariatePattern):
        self.pattern = pattern

    def __call__(self, state, rng):
        return bivariate_gibbs_sweep(state, self.pattern, rng)


class _PerIterationCache:
    """Remembers one computed value for (state object, iteration, key).

    Holds a reference to the state, so a state freed and replaced by a new
    object cannot be mistaken for the cached one.
    """

    def __init__(self):
        self._entry = (None, -1, None, None)

    def get(self, state: ChainState, key, compute):
        s, it, k, val = self._entry
        if s is not state or it != state.iter or k != key:
            val = compute()
            self._entry = (state, state.iter, key, val)
        return val


_monitor_cache = _PerIterationCache()


class BetaMonitor:
    """One of the two monitored slopes; both are computed once per iteration."""

    def __init__(self, pattern: BivariatePattern, which: int):
        self.pattern, self.which = pattern, which

    def __call__(self, state: ChainState) -> float:
        betas = _monitor_cache.get(state, self.pattern,
                                   lambda: monitored_betas(state.values, self.pattern))
        return betas[self.which]


class RegressionMonitor:
    """One least-squares coefficient of ``target`` on ``covariates``; the fit
    is shared by sibling monitors within an iteration."""

    def __init__(self, model: AnalysisModel, index: int):
        self.model, self.index = model, index

    def __call__(self, state: ChainState) -> float:
        coef = _monitor_cache.get(state, self.model,
                                  lambda: cm.least_squares(*self.model.design(state.values))[0])
        return float(coef[self.index])


# ------------------------------------------------------------------- configs

DEFAULTS = {
    1: dict(n_a=200, n_b=80, n_c=80, n_draws=200_000, burn_in=1000, thin=1, identity_sweeps=1000,
            qq_points=200, tv_bins=50),
    2: dict(n=1000, rate=0.3, n_draws=10_000, burn_in=1000, thin=5, n_chains=4, qq_points=200,
            tv_bins=50),
    3: dict(n=2000, rate=0.3, n_rep=200, m=20, burn_in=100, thin=5),
}


@dataclass
class ExperimentConfig:
    experiment: int
    seed: int = 20240101
    out_dir: str = "results"
    workers: int = 0
    params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.experiment = int(self.experiment)
        if self.experiment not in DEFAULTS:
            raise InvalidArgument(f"experiment must be 1, 2 or 3, got {self.experiment}")
        unknown = set(self.params) - set(DEFAULTS[self.experiment])
        if unknown:
            raise InvalidArgument(f"unknown parameters for exp{self.experiment}: {sorted(unknown)}")
        merged = dict(DEFAULTS[self.experiment])
        merged.update(self.params)
        for key, val in merged.items():
            if key != "rate" and val is not None and val <= 0 and key != "burn_in":
                raise InvalidArgument(f"{key} must be positive")
        self.params = merged

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "out_dir": self.out_dir,
                "workers": self.workers, "params": self.params}

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> "ExperimentConfig":
        obj = {**obj, **{k: v for k, v in overrides.items() if v is not None}}
        return cls(obj["experiment"], obj.get("seed", 20240101), obj.get("out_dir", "results"),
                   obj.get("workers", 0), dict(obj.get("params", {})))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ runners

def kernel_identity_check(dm: DataMatrix, pattern: BivariatePattern, n_sweeps: int, rng: RngStream) -> bool:
    """Run the flat-prior chained sweep and the bivariate Gibbs sweep from the
    same start on identical streams; True iff every sweep matches bitwise."""
    start = init_state(dm, rng.child("init"))
    a, b = start.copy(), start.copy()
    ra, rb = rng.child("sweeps"), rng.child("sweeps")
    it_sweep, gibbs = IterativeSweep(exp1_specs(cm.FLAT)), BivariateGibbsSweep(pattern)
    for _ in range(n_sweeps):
        it_sweep(a, ra)
        gibbs(b, rb)
        if not np.array_equal(a.values, b.values):
            return False
    return True


def run_exp1(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    rng = RngStream(cfg.seed)
    pattern = BivariatePattern(p["n_a"], p["n_b"], p["n_c"])
    dm = gen_exp1(p["n_a"], p["n_b"], p["n_c"], rng.child("data"))
    chain_cfg = ChainConfig(n_iter=p["burn_in"] + p["n_draws"] * p["thin"], burn_in=p["burn_in"],
                            thin=p["thin"], n_chains=1, seed=cfg.seed)
    monitors = {"beta_x": BetaMonitor(pattern, 0), "beta_y": BetaMonitor(pattern, 1)}
    engines = {"iterative": IterativeSweep(exp1_specs(cm.JEFFREYS)), "joint": BivariateGibbsSweep(pattern)}
    traces = {}
    for name, sweep in engines.items():
        sub = rng.child(name)
        state = init_state(dm, sub.child("init"))
        traces[name] = run_chain(state, sweep, chain_cfg, monitors, sub.child("sweeps"), chain_id=name)
    identical = kernel_identity_check(dm, pattern, p["identity_sweeps"], rng.child("identity"))
    return _compare_engines(cfg, traces, {"kernel_identity": {"sweeps": p["identity_sweeps"],
                                                              "identical": identical}})


def _exp2_chain(c: int, cfg: ExperimentConfig, engine: str) -> TraceSet:
    p = cfg.params
    rng = RngStream(cfg.seed)
    dm = gen_exp2(p["n"], rng.child("data"), p["rate"])
    per_chain = -(-p["n_draws"] // p["n_chains"])
    chain_cfg = ChainConfig(n_iter=p["burn_in"] + per_chain * p["thin"], burn_in=p["burn_in"],
                            thin=p["thin"], n_chains=1, seed=cfg.seed)
    model = AnalysisModel("linear", target=0, covariates=tuple(range(1, 8)))
    names = ["intercept"] + [f"x{j}" for j in range(1, 8)]
    monitors = {f"coef_{nm}": RegressionMonitor(model, k) for k, nm in enumerate(names)}
    sweep = IterativeSweep(exp2_specs()) if engine == "iterative" else da_sweep
    sub = rng.child(engine, "chain", c)
    state = init_state(dm, sub.child("init"))
    return run_chain(state, sweep, chain_cfg, monitors, sub.child("sweeps"), chain_id=f"{engine}-{c}")


def run_exp2(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    jobs = [(c, e) for e in ("iterative", "joint") for c in range(p["n_chains"])]
    if cfg.n_workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool:
            results = list(pool.map(_exp2_chain, [c for c, _ in jobs], [cfg] * len(jobs), [e for _, e in jobs]))
    else:
        results = [_exp2_chain(c, cfg, e) for c, e in jobs]
    traces = {}
    for (c, engine), tr in zip(jobs, results):
        traces[engine] = tr if engine not in traces else traces[engine].merge(tr)
    return _compare_engines(cfg, traces, {})


def _compare_engines(cfg: ExperimentConfig, traces: dict[str, TraceSet], extra: dict) -> dict:
    out = Path(cfg.out_dir) / f"exp{cfg.experiment}"
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.params
    merged = traces["iterative"].merge(traces["joint"])
    merged.to_csv(out / "traces.csv")
    stats = {}
    for name in traces["iterative"].statistics:
        a, b = traces["iterative"].pooled(name), traces["joint"].pooled(name)
        write_qq_csv(qq_points(a, b, min(p["qq_points"], a.size, b.size)), out / f"qq_{name}.csv")
        stats[name] = {
            "ks": ks_two_sample(a, b).statistic,
            "tv": binned_tv(a, b, p["tv_bins"]).value,
            "mean_iterative": float(a.mean()),
            "mean_joint": float(b.mean()),
            "sd_iterative": float(a.std(ddof=1)),
            "sd_joint": float(b.std(ddof=1)),
            "n_iterative": int(a.size),
            "n_joint": int(b.size),
        }
    summary = {"experiment": cfg.experiment, "config": cfg.to_json(), "statistics": stats, **extra}
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "summary.json", summary)
    return summary


def exp3_replicate(r: int, cfg: ExperimentConfig) -> dict:
    """Generate, impute m times and combine one replicate; failures become records."""
    p = cfg.params
    rng = RngStream(cfg.seed).child("rep", r)
    try:
        dm = gen_exp3(p["n"], rng.child("data"), p["rate"])
        state = init_state(dm, rng.child("init"))
        imputed = draw_imputations(state, IterativeSweep(exp3_specs()), p["m"], p["burn_in"], p["thin"],
                                   rng.child("sweeps"))
        est, var = per_dataset_fits(imputed, EXP3_ANALYSIS)
        combined = rubin_combine(est, var)
        stacked = stacked_mle(imputed, EXP3_ANALYSIS)
    except ImputeError as exc:
        return {"replicate": r, "error": f"{type(exc).__name__}: {exc}"}
    return {
        "replicate": r,
        "mean": combined.point[1:].tolist(),
        "stacked": stacked[1:].tolist(),
        "total_var": combined.total_var[1:].tolist(),
    }


def summarize_exp3(records: list[dict]) -> dict:
    ok = [r for r in records if "error" not in r]
    names = ["y1", "y2", "x2", "x3", "x4", "x5"]
    out = {"n_ok": len(ok), "n_failed": len(records) - len(ok),
           "failures": [r for r in records if "error" in r], "coefficients": {}}
    if len(ok) < 2:
        return out
    for key in ("mean", "stacked"):
        est = np.array([r[key] for r in ok])
        mc_se = est.std(axis=0, ddof=1) / np.sqrt(len(ok))
        q_lo, q_hi = np.quantile(est, [0.025, 0.975], axis=0)
        center = est.mean(axis=0)
        out["coefficients"][key] = {
            nm: {
                "truth": float(EXP3_TRUTH[k]),
                "mean": float(center[k]),
                "mc_se": float(mc_se[k]),
                "z": float((center[k] - EXP3_TRUTH[k]) / mc_se[k]),
                "q025": float(q_lo[k]),
                "q975": float(q_hi[k]),
                "within_3se": bool(abs(center[k] - EXP3_TRUTH[k]) <= 3 * mc_se[k]),
                "covers": bool(q_lo[k] <= EXP3_TRUTH[k] <= q_hi[k]),
            }
            for k, nm in enumerate(names)
        }
    return out


def run_exp3(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    reps = range(p["n_rep"])
    if cfg.n_workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool:
            records = list(pool.map(exp3_replicate, reps, [cfg] * len(reps), chunksize=4))
    else:
        records = [exp3_replicate(r, cfg) for r in reps]
    out = Path(cfg.out_dir) / "exp3"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replicates.csv", "w") as fh:
        names = ["y1", "y2", "x2", "x3", "x4", "x5"]
        fh.write("replicate,estimator," + ",".join(names) + "\n")
        for rec in records:
            for key in ("mean", "stacked"):
                if key in rec:
                    fh.write(f"{rec['replicate']},{key}," + ",".join(repr(v) for v in rec[key]) + "\n")
    summary = {"experiment": 3, "config": cfg.to_json(), **summarize_exp3(records)}
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "summary.json", summary)
    return summary


RUNNERS = {1: run_exp1, 2: run_exp2, 3: run_exp3}


def run_experiment(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.experiment](cfg)
    log.info("exp%d finished in %.1fs", cfg.experiment, time.perf_counter() - t0)
    return summary
