"""Composite cost, particle swarm search and Powell-style refinement.

The two-stage pipeline first runs a global swarm search over (R, P, W, t_sc)
on the suspended membrane, then refines (R, P, W, t_sc, t_s) on the full
stack starting from the swarm's best design.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .emission import EmissionMetrics, NoPeakError
from .geometry import MIN_ETCH_WIDTH_NM, GeometryError, design_to_dict, validate

log = logging.getLogger(__name__)

STAGE1_PARAMS = ("R", "P", "W", "t_sc")
STAGE2_PARAMS = ("R", "P", "W", "t_sc", "t_s")


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostWeights:
    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.6
    target_nm: float = 930.0
    p0: float = 25.0
    normalized: bool = False

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("weights must be non-negative")
        if not self.p0 > 0:
            raise ValueError("P0 must be positive")


def f1(lam, lam0):
    """Squared detuning from the target wavelength (nm^2)."""
    return (lam - lam0) ** 2


def f2(purcell, p0=25.0):
    """Purcell shortfall penalty, relaxed above P0 by a logistic factor."""
    d = purcell - p0
    return d * d * expit(-(d - 5.0))


def cost(metrics, weights):
    """Weighted cost at resonance; +inf when the metrics are missing."""
    if metrics is None or not np.isfinite(metrics.resonance_nm):
        return math.inf
    a = f1(metrics.resonance_nm, weights.target_nm)
    b = f2(metrics.purcell_at_resonance, weights.p0)
    if weights.normalized:
        a /= weights.target_nm**2
        b /= weights.p0**2
    value = weights.w1 * a + weights.w2 * b - weights.w3 * metrics.c_cost
    return float(value) if np.isfinite(value) else math.inf


# ---------------------------------------------------------------------------
# bookkeeping


@dataclass
class Evaluation:
    x: np.ndarray
    cost: float
    metrics: Optional[object] = None
    wall_s: float = 0.0
    cached: bool = False


@dataclass
class OptimizationRun:
    stage: str
    names: tuple
    trace: list
    best_x: np.ndarray
    best_cost: float
    evaluations: list = field(default_factory=list)
    seed: Optional[int] = None
    best_metrics: Optional[object] = None
    trace_x: list = field(default_factory=list)

    @property
    def best(self):
        return dict(zip(self.names, (float(v) for v in self.best_x)))

    @property
    def n_evaluations(self):
        return len(self.evaluations)


def _call(objective, x):
    t = time.perf_counter()
    try:
        out = objective(np.array(x, dtype=float))
    except Exception as exc:  # a failed evaluation marks the particle infeasible
        log.warning("evaluation failed at %s: %s", x, exc)
        return Evaluation(np.array(x), math.inf, None, time.perf_counter() - t)
    cached = False
    metrics = None
    if isinstance(out, tuple):
        value, metrics = out[0], out[1]
        cached = bool(out[2]) if len(out) > 2 else False
    else:
        value = out
    value = float(value)
    if not np.isfinite(value):
        value = math.inf
    return Evaluation(np.array(x), value, metrics, time.perf_counter() - t, cached)


def _evaluate_all(objective, xs, executor=None):
    if executor is None:
        return [_call(objective, x) for x in xs]
    # results come back in submission order, so aggregation is order independent
    return list(executor.map(_call, [objective] * len(xs), list(xs)))


# ---------------------------------------------------------------------------
# particle swarm


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 20
    inertia: float = 0.729
    cognitive: float = 1.494
    social: float = 1.494
    max_iterations: int = 50
    seed: int = 0
    velocity_clamp: float = 0.2

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm size must be at least 2")
        if min(self.inertia, self.cognitive, self.social, self.velocity_clamp) <= 0:
            raise ValueError("PSO coefficients must be positive")


def _bounds(bounds):
    lo = np.asarray([b[0] for b in bounds], dtype=float)
    hi = np.asarray([b[1] for b in bounds], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi >= lo)):
        raise ValueError("bounds must be finite with lo <= hi")
    return lo, hi


def pso_run(objective, bounds, config=PsoConfig(), names=None, stage="pso", executor=None):
    """Global-best particle swarm minimization inside a box.

    ``objective(x)`` returns a cost or ``(cost, metrics)``. Positions leaving
    the box are clamped to it and the offending velocity components zeroed.
    The returned run holds the best vector ever evaluated.
    """
    lo, hi = _bounds(bounds)
    dim = lo.size
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(dim))
    rng = np.random.default_rng(config.seed)
    span = hi - lo
    vmax = config.velocity_clamp * span
    x = lo + rng.random((config.swarm_size, dim)) * span
    v = (2 * rng.random((config.swarm_size, dim)) - 1) * vmax
    evals = _evaluate_all(objective, x, executor)
    history = list(evals)
    pcost = np.array([e.cost for e in evals])
    pbest = x.copy()
    pmetrics = [e.metrics for e in evals]
    g = int(np.argmin(pcost))
    gbest, gcost, gmetrics = pbest[g].copy(), pcost[g], pmetrics[g]
    trace, trace_x = [float(gcost)], [gbest.copy()]
    for _ in range(config.max_iterations):
        r1 = rng.random((config.swarm_size, dim))
        r2 = rng.random((config.swarm_size, dim))
        v = (config.inertia * v + config.cognitive * r1 * (pbest - x)
             + config.social * r2 * (gbest - x))
        v = np.clip(v, -vmax, vmax)
        x = x + v
        out = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[out] = 0.0
        evals = _evaluate_all(objective, x, executor)
        history.extend(evals)
        costs = np.array([e.cost for e in evals])
        better = costs < pcost
        pbest[better] = x[better]
        pcost[better] = costs[better]
        for i in np.nonzero(better)[0]:
            pmetrics[i] = evals[i].metrics
        g = int(np.argmin(pcost))  # first index wins ties
        if pcost[g] < gcost:
            gbest, gcost, gmetrics = pbest[g].copy(), pcost[g], pmetrics[g]
        trace.append(float(gcost))
        trace_x.append(gbest.copy())
    return OptimizationRun(stage, names, trace, gbest, float(gcost), history, config.seed,
                           gmetrics, trace_x)


# ---------------------------------------------------------------------------
# Powell refinement


class _BudgetExhausted(Exception):
    pass


def local_refine(objective, start, bounds, tol=0.5, max_evals=200, names=None, stage="refine"):
    """Derivative-free Powell direction-set search inside a box.

    Each line search is a bounded Brent minimization over the feasible
    segment. A sweep that moves every parameter by less than ``tol`` (same
    units as the parameters; scalar or per parameter) ends the search, as
    does exhausting ``max_evals``. The result never costs more than ``start``.
    """
    lo, hi = _bounds(bounds)
    dim = lo.size
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(dim))
    span = np.where(hi > lo, hi - lo, 1.0)
    tol_u = np.broadcast_to(np.asarray(tol, dtype=float), (dim,)) / span
    history = []
    best = {"u": None, "cost": math.inf, "metrics": None}

    def f(u):
        if len(history) >= max_evals:
            raise _BudgetExhausted
        u = np.clip(u, 0.0, 1.0)
        ev = _call(objective, lo + u * span)
        history.append(ev)
        if ev.cost < best["cost"]:
            best.update(u=u.copy(), cost=ev.cost, metrics=ev.metrics)
        return ev.cost

    def line(u, fu, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = np.where(d > 0, -u / d, np.where(d < 0, (1 - u) / d, -np.inf))
            t_hi = np.where(d > 0, (1 - u) / d, np.where(d < 0, -u / d, np.inf))
        a, b = float(np.max(t_lo)), float(np.min(t_hi))
        if not b - a > 1e-12:
            return u, fu
        xatol = 0.25 * float(np.min(tol_u / np.maximum(np.abs(d), 1e-12)))
        res = minimize_scalar(lambda t: f(u + t * d), bounds=(a, b), method="bounded",
                              options={"xatol": max(xatol, 1e-12)})
        if res.fun < fu:
            return np.clip(u + res.x * d, 0.0, 1.0), float(res.fun)
        return u, fu

    def snapshot():
        return best["cost"], lo + best["u"] * span

    u = np.clip((np.asarray(start, dtype=float) - lo) / span, 0.0, 1.0)
    trace = []
    try:
        fu = f(u)
        trace.append(snapshot())
        dirs = [np.eye(dim)[i] for i in range(dim)]
        while True:
            u0 = u.copy()
            drop, drop_i = 0.0, 0
            for i, d in enumerate(dirs):
                u_new, f_new = line(u, fu, d)
                if fu - f_new > drop:
                    drop, drop_i = fu - f_new, i
                u, fu = u_new, f_new
            trace.append(snapshot())
            step = u - u0
            if np.all(np.abs(step) < tol_u):
                break
            norm = float(np.linalg.norm(step))
            if norm > 0:
                d_new = step / norm
                u, fu = line(u, fu, d_new)
                dirs.pop(drop_i)
                dirs.append(d_new)
                trace[-1] = snapshot()
    except _BudgetExhausted:
        pass
    if best["u"] is None:
        raise OptimizationError("local refinement could not evaluate the start point")
    # the best point seen is never worse than the start
    trace.append(snapshot())
    return OptimizationRun(stage, names, [float(c) for c, _ in trace], lo + best["u"] * span,
                           float(best["cost"]), history, None, best["metrics"],
                           [x for _, x in trace])


# ---------------------------------------------------------------------------
# design objectives


class EvaluationCache:
    """Content-addressed store of evaluated designs (one JSON file per key)."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(payload):
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def get(self, key):
        path = self.root / f"{key}.json"
        if path.exists():
            self.hits += 1
            with open(path) as fh:
                return json.load(fh)
        self.misses += 1
        return None

    def put(self, key, record):
        path = self.root / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(record, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)


def _metrics_from_record(rec):
    if rec is None:
        return None
    return EmissionMetrics(rec["resonance_nm"], rec["target_nm"], rec["purcell"], rec["c_cost"],
                           rec.get("e_up", float("nan")), rec.get("o_ff", float("nan")),
                           rec.get("na_0.7", float("nan")), trusted=rec.get("trusted", True))


def _spectra_record(metrics):
    if getattr(metrics, "purcell", None) is None:
        return None
    out = {"wavelength_nm": metrics.purcell.wavelengths_nm.tolist(),
           "purcell": metrics.purcell.values.tolist(),
           "e_up": metrics.e_up.values.tolist(),
           "o_ff": metrics.o_ff.values.tolist()}
    for na, spec in metrics.collection.items():
        out[f"c_na_{na:g}"] = spec.values.tolist()
    return out


class DesignObjective:
    """Maps a parameter vector to (cost, metrics) through a design evaluator.

    ``evaluator(design)`` returns :class:`EmissionMetrics`; its optional
    ``fingerprint`` attribute distinguishes cache entries of different
    evaluators.
    """

    def __init__(self, template, names, weights, evaluator, cache=None, stage="stage1"):
        self.template = template
        self.names = tuple(names)
        self.weights = weights
        self.evaluator = evaluator
        self.cache = cache
        self.stage = stage

    def design_for(self, x):
        return self.template.with_params(**{n: float(v) for n, v in zip(self.names, x)})

    def __call__(self, x):
        try:
            design = self.design_for(x)
        except GeometryError:
            return math.inf, None
        if validate(design):
            return math.inf, None
        key = None
        if self.cache is not None:
            payload = {"stage": self.stage, "design": design_to_dict(design),
                       "evaluator": getattr(self.evaluator, "fingerprint", repr(self.evaluator)),
                       "weights": asdict(self.weights)}
            key = self.cache.key(payload)
            rec = self.cache.get(key)
            if rec is not None:
                c = rec["cost"]
                return (math.inf if c is None else c), _metrics_from_record(rec["metrics"]), True
        try:
            metrics = self.evaluator(design)
        except NoPeakError:
            metrics = None
        c = cost(metrics, self.weights)
        if key is not None:
            self.cache.put(key, {
                "params": dict(zip(self.names, map(float, x))),
                "cost": None if not np.isfinite(c) else c,
                "metrics": None if metrics is None else metrics.summary(),
                "spectra": None if metrics is None else _spectra_record(metrics),
            })
        return c, metrics, False


# ---------------------------------------------------------------------------
# surrogate cavity


@dataclass(frozen=True)
class SurrogateCavity:
    """Smooth analytic stand-in for the FDTD evaluation.

    Resonance shifts linearly with the geometry (redshift with R, P, t_sc;
    blueshift with W). Purcell factor and the collection term peak at
    ``optimum``, where the resonance equals the target, so the cost has a
    unique minimizer there for any non-negative weights.
    """

    target_nm: float = 930.0
    optimum: tuple = (412.0, 351.0, 84.0, 149.0, 206.0)
    slopes: tuple = (0.45, 0.35, -0.25, 0.6, 0.0)
    widths: tuple = (25.0, 20.0, 12.0, 15.0, 90.0)
    p_peak: float = 25.0
    c_peak: float = 0.9
    spacer_index: float = 1.62

    @property
    def fingerprint(self):
        return "surrogate:" + json.dumps(asdict(self), sort_keys=True)

    def params(self, design):
        t_s = design.t_s if design.t_s is not None else self.optimum[4]
        return np.array([design.inner_radius, design.grating_period, design.etch_width,
                         design.t_sc, t_s])

    def __call__(self, design):
        x = self.params(design)
        x0 = np.asarray(self.optimum)
        lam = self.target_nm + float(np.dot(self.slopes, x - x0))
        g = float(np.sum(((x - x0) / np.asarray(self.widths))[:4] ** 2))
        purcell = self.p_peak * math.exp(-g)
        period = self.target_nm / (2 * self.spacer_index)
        interference = 0.5 + 0.5 * math.cos(2 * math.pi * (x[4] - x0[4]) / period)
        c = self.c_peak * math.exp(-g) * interference
        return EmissionMetrics(lam, self.target_nm, purcell, c)


class FdtdEvaluator:
    """Evaluates a design with the FDTD engine at a mesh profile."""

    def __init__(self, profile, band=None, metal_model="pec", nthreads=1):
        self.profile = profile
        self.band = band
        self.metal_model = metal_model
        self.nthreads = nthreads

    @property
    def fingerprint(self):
        return "fdtd:" + json.dumps({"profile": asdict(self.profile), "band": self.band,
                                     "metal": self.metal_model}, sort_keys=True)

    def __call__(self, design):
        from .simulate import evaluate

        band = self.band
        if band is not None and band[0] is None:
            band = (design.target_wavelength,) + tuple(band[1:])
        _, metrics = evaluate(design, self.profile, band, metal_model=self.metal_model,
                              nthreads=self.nthreads)
        return metrics


# ---------------------------------------------------------------------------
# two-stage pipeline


@dataclass(frozen=True)
class StageConfig:
    """Bounds (name -> (lo, hi) in nm) plus the stage's search settings."""

    bounds: dict
    pso: PsoConfig = PsoConfig()
    tol: float = 0.5
    max_evals: int = 200


def _bounds_for(names, stage_cfg):
    out = []
    for n in names:
        lo, hi = stage_cfg.bounds[n]
        if n == "W":
            lo = max(lo, MIN_ETCH_WIDTH_NM)
        if hi < lo:
            raise ValueError(f"empty bound for {n}")
        out.append((float(lo), float(hi)))
    return out


def two_stage_optimize(template, weights, stage1, stage2, evaluator, cache=None, executor=None,
                       stage2_evaluator=None):
    """Swarm search on the suspended membrane, then refinement on the full stack.

    Returns the pair of :class:`OptimizationRun` objects.
    """
    names1 = STAGE1_PARAMS
    obj1 = DesignObjective(template.suspended(), names1, weights, evaluator, cache, "stage1")
    run1 = pso_run(obj1, _bounds_for(names1, stage1), stage1.pso, names1, "stage1", executor)
    if not np.isfinite(run1.best_cost):
        raise OptimizationError(
            f"stage 1: all {run1.n_evaluations} evaluations infeasible "
            "(no resonance peak in band or invalid geometry)")
    names2 = STAGE2_PARAMS
    b2 = _bounds_for(names2, stage2)
    t_s0 = template.t_s if template.t_s is not None else 0.5 * (b2[4][0] + b2[4][1])
    seed = np.array(list(run1.best_x) + [t_s0])
    seed = np.clip(seed, [b[0] for b in b2], [b[1] for b in b2])
    obj2 = DesignObjective(template, names2, weights, stage2_evaluator or evaluator, cache,
                           "stage2")
    run2 = local_refine(obj2, seed, b2, stage2.tol, stage2.max_evals, names2, "stage2")
    return run1, run2


def write_trace_csv(path, runs):
    """Iteration-wise best cost and best parameters for each stage."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "iteration", "best_cost"] + list(STAGE2_PARAMS))
        for run in runs:
            xs = run.trace_x or [None] * (len(run.trace) - 1) + [run.best_x]
            for i, (c, x) in enumerate(zip(run.trace, xs)):
                by_name = {} if x is None else dict(zip(run.names, x))
                params = [repr(float(by_name[n])) if n in by_name else ""
                          for n in STAGE2_PARAMS]
                w.writerow([run.stage, i, repr(float(c))] + params)


def run_summary(run):
    return {
        "stage": run.stage,
        "best": run.best,
        "best_cost": run.best_cost,
        "evaluations": run.n_evaluations,
        "cached_evaluations": sum(1 for e in run.evaluations if e.cached),
        "seed": run.seed,
        "best_metrics": None if run.best_metrics is None else run.best_metrics.summary(),
        "wall_s_per_evaluation": [round(e.wall_s, 6) for e in run.evaluations],
    }
