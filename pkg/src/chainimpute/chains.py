"""Chain drivers: initialization, the chained-equation sweep, runs and traces."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import condmodels as cm
from .data import DataMatrix
from .errors import ChainError, ImputeError, InitializationError, InvalidArgument
from .randkit import RngStream


@dataclass
class ChainState:
    """Completed data for one chain plus its latest parameter draws.

    ``values`` is a private copy; cells where ``present`` is true are never
    written after construction.
    """

    values: np.ndarray
    present: np.ndarray
    col_names: tuple[str, ...]
    col_kinds: tuple[str, ...]
    draws: dict = field(default_factory=dict)
    iter: int = 0
    cache: dict = field(default_factory=dict, repr=False)

    def completed(self) -> DataMatrix:
        return DataMatrix(self.values.copy(), np.ones_like(self.present), self.col_names, self.col_kinds)

    def copy(self) -> "ChainState":
        return ChainState(self.values.copy(), self.present, self.col_names, self.col_kinds,
                          dict(self.draws), self.iter)


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 11000
    burn_in: int = 1000
    thin: int = 10
    n_chains: int = 4
    seed: int = 20240101

    def __post_init__(self):
        if self.thin < 1 or self.n_chains < 1 or self.n_iter < 1 or self.burn_in < 0:
            raise InvalidArgument("n_iter, thin and n_chains must be >= 1 and burn_in >= 0")
        if not self.burn_in < self.n_iter:
            raise InvalidArgument("burn_in must be smaller than n_iter")

    @property
    def n_recorded(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


class TraceSet:
    """Monitored statistics per chain, recorded at the same iterations in every chain."""

    def __init__(self, chains: Mapping[str, Mapping[str, Sequence[float]]] | None = None,
                 iters: Mapping[str, Sequence[int]] | None = None):
        self.chains: dict[str, dict[str, np.ndarray]] = {}
        self.iters: dict[str, np.ndarray] = {}
        for cid, stats in (chains or {}).items():
            self.chains[str(cid)] = {k: np.asarray(v, dtype=float) for k, v in stats.items()}
            it = (iters or {}).get(cid)
            n = len(next(iter(stats.values()))) if stats else 0
            self.iters[str(cid)] = np.asarray(it if it is not None else np.arange(1, n + 1), dtype=int)
        self._check()

    def _check(self):
        lengths = {len(v) for stats in self.chains.values() for v in stats.values()}
        if len(lengths) > 1:
            raise InvalidArgument(f"chains have unequal recorded lengths {sorted(lengths)}")

    @property
    def chain_ids(self) -> list[str]:
        return list(self.chains)

    @property
    def statistics(self) -> list[str]:
        names: list[str] = []
        for stats in self.chains.values():
            names += [k for k in stats if k not in names]
        return names

    def matrix(self, statistic: str) -> np.ndarray:
        """(n_chains, n_points) array for one statistic."""
        try:
            return np.vstack([self.chains[c][statistic] for c in self.chains])
        except KeyError:
            raise InvalidArgument(f"no statistic {statistic!r} in trace") from None

    def pooled(self, statistic: str) -> np.ndarray:
        return self.matrix(statistic).ravel()

    def merge(self, other: "TraceSet", prefix: str = "") -> "TraceSet":
        chains = {**self.chains, **{prefix + c: s for c, s in other.chains.items()}}
        iters = {**self.iters, **{prefix + c: i for c, i in other.iters.items()}}
        return TraceSet(chains, iters)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter", "statistic", "value"])
            for cid, stats in self.chains.items():
                for name, vals in stats.items():
                    for it, v in zip(self.iters[cid], vals):
                        w.writerow([cid, int(it), name, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "TraceSet":
        chains: dict = defaultdict(lambda: defaultdict(list))
        iters: dict = defaultdict(dict)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                cid, name = row["chain"], row["statistic"]
                chains[cid][name].append(float(row["value"]))
                iters[cid].setdefault(name, []).append(int(row["iter"]))
        first_iters = {cid: next(iter(d.values())) for cid, d in iters.items()}
        return cls({c: dict(s) for c, s in chains.items()}, first_iters)

    def __eq__(self, other):
        if not isinstance(other, TraceSet) or self.chains.keys() != other.chains.keys():
            return False
        for cid in self.chains:
            a, b = self.chains[cid], other.chains[cid]
            if a.keys() != b.keys() or not np.array_equal(self.iters[cid], other.iters[cid]):
                return False
            if any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


def init_state(dm: DataMatrix, rng: RngStream) -> ChainState:
    """Fill each missing cell with a uniform draw from its column's observed values."""
    values = np.array(dm.values, dtype=float)
    present = dm.present
    gen = rng.gen
    for j in range(dm.n_cols):
        obs = values[present[:, j], j]
        miss = np.flatnonzero(~present[:, j])
        if miss.size == 0:
            continue
        if obs.size < 2:
            raise InitializationError(
                f"column {dm.col_names[j]!r} has {obs.size} observed value(s); need at least 2"
            )
        values[miss, j] = obs[gen.integers(0, obs.size, miss.size)]
    return ChainState(values, present, dm.col_names, dm.col_kinds)


def check_specs(specs: Sequence[cm.ConditionalModelSpec], state: ChainState) -> None:
    targets = [s.target for s in specs]
    for s in specs:
        s.validate_for(state.col_names, state.col_kinds)
    needed = set(np.flatnonzero(~state.present.all(axis=0)).tolist())
    uncovered = needed - set(targets)
    if uncovered:
        names = [state.col_names[j] for j in sorted(uncovered)]
        raise InvalidArgument(f"no conditional model for columns with missing cells: {names}")


def iterative_sweep(state: ChainState, specs: Sequence[cm.ConditionalModelSpec], rng: RngStream) -> ChainState:
    """One pass of chained-equation imputation over ``specs`` in the given order.

    Step j draws the model's parameters from their posterior given the rows
    where the target is observed (covariates taken from the current completed
    data), then redraws the target's missing cells from the predictive.
    Updates ``state`` in place and returns it.
    """
    v = state.values
    for spec in specs:
        j = spec.target
        obs = state.present[:, j]
        try:
            X_all, y_all = cm.build_design(v, spec)
            draw = cm.posterior_draw(spec, X_all[obs], y_all[obs], rng)
            mis = ~obs
            if mis.any():
                v[mis, j] = cm.impute(spec, X_all[mis], draw, rng)
        except ImputeError as exc:
            raise ChainError(
                f"fit of {state.col_names[j]!r} failed at iteration {state.iter + 1}: {exc}",
                iteration=state.iter + 1,
                variable=state.col_names[j],
            ) from exc
        state.draws[j] = draw
    state.iter += 1
    return state


Sweep = Callable[[ChainState, RngStream], ChainState]
Monitor = Callable[[ChainState], float]


def run_chain(state: ChainState, sweep: Sweep, cfg: ChainConfig, monitors: Mapping[str, Monitor],
              rng: RngStream, chain_id: str = "0", trace_path=None,
              on_record: Callable[[ChainState], None] | None = None) -> TraceSet:
    """Apply ``sweep`` ``cfg.n_iter`` times, recording monitors every ``thin``-th
    iteration after burn-in. ``state`` and ``rng`` are advanced in place so a
    later call resumes exactly where this one stopped.

    If a sweep raises, the trace so far is written to ``trace_path`` (when
    given) and a :class:`ChainError` carrying the iteration is raised.
    """
    record: dict[str, list[float]] = {name: [] for name in monitors}
    iters: list[int] = []
    for t in range(1, cfg.n_iter + 1):
        try:
            state = sweep(state, rng)
        except Exception as exc:
            partial_trace = TraceSet({chain_id: record}, {chain_id: iters})
            if trace_path is not None:
                partial_trace.to_csv(trace_path)
            it = getattr(exc, "iteration", None) or state.iter + 1
            raise ChainError(f"chain {chain_id} failed at iteration {it}: {exc}",
                             iteration=it, chain=chain_id) from exc
        if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            for name, fn in monitors.items():
                record[name].append(float(fn(state)))
            iters.append(state.iter)
            if on_record is not None:
                on_record(state)
    trace = TraceSet({chain_id: record}, {chain_id: iters})
    if trace_path is not None:
        trace.to_csv(trace_path)
    return trace


def save_checkpoint(path, state: ChainState, rng: RngStream) -> None:
    obj = {
        "iter": state.iter,
        "col_names": list(state.col_names),
        "col_kinds": list(state.col_kinds),
        "values": [[repr(float(x)) for x in row] for row in state.values],
        "present": state.present.astype(int).tolist(),
        "rng": rng.get_state(),
    }
    Path(path).write_text(json.dumps(obj))


def load_checkpoint(path) -> tuple[ChainState, RngStream]:
    obj = json.loads(Path(path).read_text())
    values = np.array([[float(x) for x in row] for row in obj["values"]])
    present = np.array(obj["present"], dtype=bool)
    state = ChainState(values, present, tuple(obj["col_names"]), tuple(obj["col_kinds"]), iter=obj["iter"])
    return state, RngStream.from_state(obj["rng"])


def _one_chain(c: int, dm: DataMatrix, sweep: Sweep, cfg: ChainConfig, monitors, rng: RngStream):
    sub = rng.child("chain", c)
    try:
        state = init_state(dm, sub.child("init"))
        return run_chain(state, sweep, cfg, monitors, sub.child("sweeps"), chain_id=str(c))
    except ChainError as exc:
        exc.chain = str(c)
        raise
    except ImputeError as exc:
        raise ChainError(f"chain {c}: {exc}", chain=str(c)) from exc


def run_parallel_chains(dm: DataMatrix, sweep: Sweep, cfg: ChainConfig, monitors: Mapping[str, Monitor],
                        rng: RngStream | None = None, workers: int = 1) -> TraceSet:
    """``cfg.n_chains`` independent chains, each initialized and run on its own substream.

    With ``workers > 1`` chains run in separate processes, so ``sweep`` and
    the monitors must be picklable (module-level functions or partials).
    """
    rng = rng if rng is not None else RngStream(cfg.seed)
    job = partial(_one_chain, dm=dm, sweep=sweep, cfg=cfg, monitors=monitors, rng=rng)
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_chains)) as pool:
            traces = list(pool.map(job, range(cfg.n_chains)))
    else:
        traces = [job(c) for c in range(cfg.n_chains)]
    out = traces[0]
    for t in traces[1:]:
        out = out.merge(t)
    return out


def draw_imputations(state: ChainState, sweep: Sweep, m: int, burn_in: int, thin: int,
                     rng: RngStream) -> list[np.ndarray]:
    """``m`` completed datasets taken every ``thin`` sweeps after ``burn_in`` sweeps."""
    out: list[np.ndarray] = []
    cfg = ChainConfig(n_iter=burn_in + m * thin, burn_in=burn_in, thin=thin, n_chains=1)
    run_chain(state, sweep, cfg, {}, rng, on_record=lambda s: out.append(s.values.copy()))
    return out
