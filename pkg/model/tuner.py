""" Bayesian optimisation of knob values.

A Gaussian-process surrogate over the unit cube, expected improvement for
minimisation, and a Latin-hypercube start. Integer knobs are optimised in
the continuous relaxation and rounded; fully integer spaces small enough to
list are searched over their unevaluated grid points. Every few steps the
surrogate instead picks among the unevaluated grid neighbours of the best
point so far, which settles ties the expected improvement cannot resolve.
"""
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
import json
import logging
import warnings

import numpy as np
import pandas as pd
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

from __init__ import config
from model.errors import EmptySpace, EvaluatorFailure, IoFailure
from model.metrics import objective

logger = logging.getLogger(__name__)

FAILURE_OBJECTIVE = 2.0
MAX_INIT = 10
GRID_LIMIT = 10000
RANDOM_CANDIDATES = 2000
LOCAL_CANDIDATES = 500
XI = 0.01
LOCAL_EVERY = 3  # every third model-guided step refines around the incumbent


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str
    lo: float
    hi: float

    @property
    def integer(self):
        return self.kind == "Integer"

    def from_unit(self, u):
        value = self.lo + float(u) * (self.hi - self.lo)
        if self.integer:
            return int(min(self.hi, max(self.lo, round(value))))
        return float(min(self.hi, max(self.lo, value)))

    def to_unit(self, value):
        if self.hi == self.lo:
            return 0.5
        return (value - self.lo) / (self.hi - self.lo)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    @property
    def names(self):
        return [d.name for d in self.dims]

    def grid_size(self):
        '''Number of points when every dim is Integer, else None'''
        if not all(d.integer for d in self.dims):
            return None
        return int(np.prod([int(d.hi) - int(d.lo) + 1 for d in self.dims]))

    def grid(self):
        for point in product(*[range(int(d.lo), int(d.hi) + 1) for d in self.dims]):
            yield dict(zip(self.names, point))

    def from_unit(self, row):
        return {d.name: d.from_unit(u) for d, u in zip(self.dims, row)}

    def to_unit(self, values):
        return np.array([d.to_unit(values[d.name]) for d in self.dims], dtype=float)

    def read(self):
        return {"dims": [{"name": d.name, "kind": d.kind, "range": [d.lo, d.hi]} for d in self.dims]}


def build_space(knobs, safe):
    """Intersects each knob's declared range with its safe interval, names are function.knob"""
    dims = []
    for knob in knobs:
        qualified = f"{knob.declared_in}.{knob.name}"
        interval = safe.get(qualified, safe.get(knob.name))
        if interval is None:
            raise EmptySpace(qualified)
        bounds = getattr(interval, "interval", interval)
        lo = max(knob.lo, bounds[0])
        hi = min(knob.hi, bounds[1])
        if lo > hi:
            raise EmptySpace(qualified)
        dims.append(Dim(qualified, knob.increment_kind, lo, hi))
    return SearchSpace(tuple(dims))


@dataclass(frozen=True)
class TuneRecord:
    iteration: int
    values: dict
    e_m: float
    c_r: float
    objective: float
    capped: bool
    failed: bool = field(default=False, compare=False)

    def read(self):
        return {"iteration": self.iteration, "values": dict(self.values), "e_m": self.e_m,
                "c_r": self.c_r, "objective": self.objective, "capped": self.capped, "failed": self.failed}


@dataclass(frozen=True)
class TuneResult:
    best: TuneRecord
    history: tuple
    budget_used: int
    seed: int
    knob_names: tuple = field(default_factory=tuple)

    def read(self):
        return {"best": self.best.read() if self.best else None, "budget_used": self.budget_used,
                "seed": self.seed, "knob_names": list(self.knob_names)}

    def __str__(self):
        return json.dumps(self.read())


def _key(values, names):
    return tuple(values[n] for n in names)


def _evaluate(evaluator, values, iteration, e_b):
    try:
        e_m, c_r = evaluator(values)
    except EvaluatorFailure as e:
        logger.warning("Iteration %d: %s", iteration, e.message)
        return TuneRecord(iteration, dict(values), 1.0, 1.0, FAILURE_OBJECTIVE, True, failed=True)
    value, capped = objective(float(e_m), float(c_r), e_b)
    return TuneRecord(iteration, dict(values), float(e_m), float(c_r), value, capped)


def _surrogate(dimensions, seed):
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(length_scale=np.full(dimensions, 0.2),
                                                      length_scale_bounds=(1e-3, 1e3), nu=2.5)
    return GaussianProcessRegressor(kernel=kernel, alpha=1e-6, normalize_y=True,
                                    n_restarts_optimizer=2, random_state=seed)


def expected_improvement(mu, sigma, best, xi=XI):
    '''EI for minimisation, zero where the surrogate is certain'''
    sigma = np.asarray(sigma, dtype=float)
    improvement = best - np.asarray(mu, dtype=float) - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improvement / sigma, 0.0)
        ei = improvement * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(sigma > 0, ei, 0.0)


def _candidates(space, seen, best_unit, rng):
    names = space.names
    size = space.grid_size()
    if size is not None and size <= GRID_LIMIT:
        return [v for v in space.grid() if _key(v, names) not in seen]

    d = len(space.dims)
    units = [rng.random((RANDOM_CANDIDATES, d))]
    if best_unit is not None:
        units.append(np.clip(best_unit + rng.normal(0.0, 0.05, (LOCAL_CANDIDATES, d)), 0.0, 1.0))
    found = {}
    for row in np.vstack(units):
        values = space.from_unit(row)
        key = _key(values, names)
        if key not in seen and key not in found:
            found[key] = values
    return list(found.values())


def _neighbours(space, values, seen):
    '''Unevaluated points one step away from values along a single Integer dim'''
    names = space.names
    found = []
    for dim in space.dims:
        if not dim.integer:
            continue
        for step in (-1, 1):
            moved = values[dim.name] + step
            if dim.lo <= moved <= dim.hi:
                point = {**values, dim.name: int(moved)}
                if _key(point, names) not in seen:
                    found.append(point)
    return found


def _initial_design(space, n_init, seed, rng):
    names = space.names
    sample = qmc.LatinHypercube(d=len(space.dims), seed=seed).random(n_init)
    points, seen = [], set()
    for row in sample:
        values = space.from_unit(row)
        tries = 0
        # small integer ranges collapse LHS rows onto the same point
        while _key(values, names) in seen and tries < 50:
            values = space.from_unit(rng.random(len(space.dims)))
            tries += 1
        if _key(values, names) not in seen:
            seen.add(_key(values, names))
            points.append(values)
    return points


def tune(evaluator, space, budget=None, e_b=None, seed=None):
    """
    Minimises the capped objective of evaluator(values) -> (e_m, c_r).

    Evaluator failures score FAILURE_OBJECTIVE and the search goes on. Stops
    early once every point of a listable integer space has been evaluated.
    """
    budget = config['TUNE_ITERATIONS'] if budget is None else budget
    e_b = config['ERROR_BOUND'] if e_b is None else e_b
    seed = config['SEED'] if seed is None else seed
    if budget < 1:
        raise EmptySpace("budget")
    if not space.dims:
        raise EmptySpace("space")

    rng = np.random.default_rng(seed)
    names = space.names
    n_init = max(1, min(MAX_INIT, budget // 5))
    history = []
    seen = set()

    for values in _initial_design(space, n_init, seed, rng):
        record = _evaluate(evaluator, values, len(history), e_b)
        history.append(record)
        seen.add(_key(values, names))

    guided = 0
    while len(history) < budget:
        X = np.array([space.to_unit(r.values) for r in history])
        y = np.array([r.objective for r in history])
        incumbent = int(np.argmin(y))
        candidates = _candidates(space, seen, X[incumbent], rng)
        if not candidates:
            logger.info("Search space exhausted after %d evaluations", len(history))
            break

        local = []
        if guided % LOCAL_EVERY == LOCAL_EVERY - 1:
            local = _neighbours(space, history[incumbent].values, seen)
        pool = local or candidates
        guided += 1

        if np.ptp(y) == 0:
            choice = pool[int(rng.integers(len(pool)))]
        else:
            gp = _surrogate(len(space.dims), seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                warnings.simplefilter("ignore", UserWarning)
                gp.fit(X, y)
                mu, sigma = gp.predict(np.array([space.to_unit(c) for c in pool]), return_std=True)
            if local:
                choice = pool[int(np.argmin(mu))]
            else:
                choice = pool[int(np.argmax(expected_improvement(mu, sigma, y.min())))]

        record = _evaluate(evaluator, choice, len(history), e_b)
        history.append(record)
        seen.add(_key(choice, names))
        logger.debug("Iteration %d: %s -> %.4f", record.iteration, record.values, record.objective)

    best = min(history, key=lambda r: r.objective)
    logger.info("Best objective %.4f at %s after %d evaluations", best.objective, best.values, len(history))
    return TuneResult(best=best, history=tuple(history), budget_used=len(history), seed=seed,
                      knob_names=tuple(names))


def export_history(result, path):
    """CSV with iteration, one column per knob, e_m, c_r, objective, capped"""
    columns = ["iteration", *result.knob_names, "e_m", "c_r", "objective", "capped"]
    rows = [{"iteration": r.iteration, **r.values, "e_m": r.e_m, "c_r": r.c_r,
             "objective": r.objective, "capped": r.capped} for r in result.history]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    except OSError as e:
        raise IoFailure(f"Cannot write {path}: {e}")
    return Path(path)


def load_history(path):
    """Parses an exported history back into TuneRecords"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise IoFailure(f"Cannot read {path}: {e}")
    knob_names = [c for c in frame.columns if c not in ("iteration", "e_m", "c_r", "objective", "capped")]
    records = []
    for row in frame.to_dict("records"):
        values = {name: row[name].item() if hasattr(row[name], "item") else row[name] for name in knob_names}
        failed = bool(row["capped"]) and float(row["objective"]) == FAILURE_OBJECTIVE
        records.append(TuneRecord(int(row["iteration"]), values, float(row["e_m"]), float(row["c_r"]),
                                  float(row["objective"]), bool(row["capped"]), failed=failed))
    return records
