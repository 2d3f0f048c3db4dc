"""Command-line entry point: ``chainimpute {generate,impute,diagnose,experiment}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import condmodels as cm
from .chains import ChainConfig, TraceSet, check_specs, init_state, run_chain
from .data import BINARY, DataMatrix, load_csv, write_csv
from .diagnostics import binned_tv, ks_two_sample, qq_points, rhat, write_qq_csv
from .errors import ImputeError, InvalidArgument
from .experiments import (ExperimentConfig, IterativeSweep, gen_exp1, gen_exp2, gen_exp3,
                          run_experiment)
from .jointgauss import da_sweep
from .randkit import DEFAULT_SEED, RngStream

log = logging.getLogger("chainimpute")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    rng = RngStream(args.seed).child("generate", args.experiment)
    if args.experiment == 1:
        dm = gen_exp1(args.n_a, args.n_b, args.n_c, rng)
    elif args.experiment == 2:
        dm = gen_exp2(args.n or 1000, rng, args.rate)
    else:
        dm = gen_exp3(args.n or 2000, rng, args.rate)
    write_csv(dm, args.out)
    log.info("wrote %d x %d matrix to %s", dm.n_rows, dm.n_cols, args.out)
    return 0


def default_specs(col_names, col_kinds, present) -> list[cm.ConditionalModelSpec]:
    """Main-effects models with intercept for every column that has missing cells."""
    p = len(col_names)
    fam = {BINARY: cm.LOGISTIC}
    return [cm.main_effects_spec(j, p, fam.get(col_kinds[j], cm.LINEAR))
            for j in range(p) if not present[:, j].all()]


def _mean_monitor(j):
    return lambda state: float(state.values[:, j].mean())


def cmd_impute(args) -> int:
    dm = load_csv(args.data)
    rng = RngStream(args.seed)
    iters = args.iters if args.iters is not None else args.burn + args.m * args.thin
    cfg = ChainConfig(n_iter=iters, burn_in=args.burn, thin=args.thin, n_chains=1, seed=args.seed)
    if cfg.n_recorded < args.m:
        raise InvalidArgument(
            f"{iters} sweeps with burn-in {args.burn} and thin {args.thin} record only "
            f"{cfg.n_recorded} states; need at least m={args.m}")
    state = init_state(dm, rng.child("init"))
    if args.method == "iterative":
        specs = (cm.load_specs(args.spec, dm.col_names) if args.spec
                 else default_specs(dm.col_names, dm.col_kinds, dm.present))
        check_specs(specs, state)
        sweep = IterativeSweep(specs)
        spec_json = [s.to_json(dm.col_names) for s in specs]
    else:
        if any(k == BINARY for k in dm.col_kinds):
            raise InvalidArgument("the joint Gaussian engine needs all columns continuous")
        sweep, spec_json = da_sweep, None

    incomplete = [j for j in range(dm.n_cols) if not dm.present[:, j].all()]
    monitors = {f"mean_{dm.col_names[j]}": _mean_monitor(j) for j in incomplete}
    recorded: list[np.ndarray] = []
    trace = run_chain(state, sweep, cfg, monitors, rng.child("sweeps"), chain_id="0",
                      on_record=lambda s: recorded.append(s.values.copy()))
    # m evenly spaced states out of the recorded ones, ending at the last
    picks = np.unique(np.round(np.linspace(0, len(recorded) - 1, args.m)).astype(int))
    if picks.size < args.m:
        picks = np.arange(len(recorded) - args.m, len(recorded))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, idx in enumerate(picks, start=1):
        done = DataMatrix(recorded[idx], np.ones_like(dm.present), dm.col_names, dm.col_kinds)
        write_csv(done, out / f"imputed_{k:03d}.csv")
    trace.to_csv(out / "traces.csv")
    _write_json(out / "config.json", {
        "data": str(args.data), "method": args.method, "m": args.m, "iters": iters,
        "burn": args.burn, "thin": args.thin, "seed": args.seed, "specs": spec_json,
        "imputed_iterations": [int(trace.iters["0"][i]) for i in picks],
    })
    log.info("wrote %d imputed datasets to %s", len(picks), out)
    return 0


def diagnose(paths, stat: str, n_bins: int = 50) -> dict:
    """KS and binned TV between the first and last trace file (pooled over
    chains), and R-hat over every chain in every file, truncated to the
    shortest chain's length."""
    sets = [TraceSet.from_csv(p) for p in paths]
    result = {"statistic": stat, "ks": None, "tv": None, "rhat": None}
    if len(sets) > 1:
        a, b = sets[0].pooled(stat), sets[-1].pooled(stat)
        result["ks"] = ks_two_sample(a, b).statistic
        result["tv"] = binned_tv(a, b, n_bins).value
    rows = [row for s in sets for row in s.matrix(stat)]
    k = min(len(r) for r in rows)
    try:
        r = rhat(np.vstack([row[len(row) - k:] for row in rows]))
        result["rhat"] = None if r.degenerate else r.value
    except InvalidArgument as exc:
        log.warning("R-hat not computed: %s", exc)
    return result


def cmd_diagnose(args) -> int:
    result = diagnose(args.traces, args.stat, args.bins)
    if args.qq_out:
        sets = [TraceSet.from_csv(p).pooled(args.stat) for p in args.traces]
        if len(sets) < 2:
            raise InvalidArgument("Q-Q output needs two trace files")
        write_qq_csv(qq_points(sets[0], sets[-1], min(args.qq, sets[0].size, sets[-1].size)), args.qq_out)
    print(json.dumps(result))
    return 0


def cmd_experiment(args) -> int:
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.id is None and "experiment" not in obj:
        raise InvalidArgument("give --id or an experiment field in the config")
    cfg = ExperimentConfig.from_json(obj, experiment=args.id, out_dir=args.out, workers=args.workers,
                                     seed=args.seed)
    summary = run_experiment(cfg)
    print(json.dumps({k: summary[k] for k in summary if k != "config"}, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainimpute", description="Chained-equation and joint Gaussian imputation")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate one of the study datasets")
    g.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--n", type=int, default=None, help="rows (experiments 2 and 3)")
    g.add_argument("--n-a", type=int, default=200)
    g.add_argument("--n-b", type=int, default=80)
    g.add_argument("--n-c", type=int, default=80)
    g.add_argument("--rate", type=float, default=0.3, help="MCAR rate (experiments 2 and 3)")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    im = sub.add_parser("impute", help="multiply impute a CSV file")
    im.add_argument("--data", required=True)
    im.add_argument("--spec", default=None, help="JSON list of conditional models (iterative only)")
    im.add_argument("--method", choices=("iterative", "joint"), default="iterative")
    im.add_argument("--m", type=int, default=5)
    im.add_argument("--iters", type=int, default=None, help="total sweeps; default burn + m*thin")
    im.add_argument("--burn", type=int, default=1000)
    im.add_argument("--thin", type=int, default=10)
    im.add_argument("--seed", type=int, default=DEFAULT_SEED)
    im.add_argument("--out", required=True)
    im.set_defaults(func=cmd_impute)

    d = sub.add_parser("diagnose", help="compare monitored statistics between trace files")
    d.add_argument("--traces", nargs="+", required=True)
    d.add_argument("--stat", required=True)
    d.add_argument("--bins", type=int, default=50)
    d.add_argument("--qq", type=int, default=200)
    d.add_argument("--qq-out", default=None)
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("experiment", help="run a simulation study and write its reports")
    e.add_argument("--id", type=int, choices=(1, 2, 3), default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
