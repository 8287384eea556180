import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labcbg.emission import EmissionMetrics
from labcbg.geometry import preset
from labcbg.optimize import (CostWeights, DesignObjective, EvaluationCache, PsoConfig,
                             StageConfig, SurrogateCavity, cost, f1, f2, local_refine, pso_run,
                             two_stage_optimize, write_trace_csv)


def metrics(lam, p, c, target=930.0):
    return EmissionMetrics(lam, target, p, c)


W = CostWeights(target_nm=930.0)


# --- cost terms ----------------------------------------------------------------

def test_f1_values():
    assert f1(930.0, 930.0) == 0
    assert f1(935.0, 930.0) == 25
    assert f1(930 + 3.3, 930) == f1(930 - 3.3, 930)


def test_f2_values():
    assert f2(25, 25) == 0
    assert f2(20, 25) == pytest.approx(25 / (1 + math.exp(-10)), rel=1e-9)
    assert f2(20, 25) == pytest.approx(24.9989, abs=1e-4)
    assert f2(35, 25) == pytest.approx(100 / (1 + math.exp(5)), rel=1e-9)
    assert f2(35, 25) == pytest.approx(0.6693, abs=1e-4)
    assert f2(30, 25) == 12.5


@given(st.floats(-1e3, 1e3))
def test_f2_bounds(p):
    v = f2(p, 25.0)
    assert 0 <= v <= (p - 25) ** 2 + 1e-9


def test_f2_vanishes_at_large_purcell():
    assert f2(500, 25) < 1e-100


def test_cost_examples():
    assert cost(metrics(930, 25, 0.0), W) == 0
    assert cost(metrics(930, 35, 0.9), W) == pytest.approx(0.2 * 100 / (1 + math.exp(5)) - 0.54,
                                                           rel=1e-9)
    assert cost(metrics(930, 35, 0.9), W) == pytest.approx(-0.4061, abs=1e-4)
    assert cost(metrics(935, 25, 0.9), W) == pytest.approx(4.46, rel=1e-12)


def test_cost_without_peak_is_infinite():
    assert cost(None, W) == math.inf
    assert cost(metrics(float("nan"), 25, 0.5), W) == math.inf


@given(st.floats(900, 960), st.floats(0, 60), st.floats(0, 1), st.floats(1e-3, 0.5))
def test_cost_decreases_with_collection(lam, p, c, dc):
    assert cost(metrics(lam, p, c + dc), W) < cost(metrics(lam, p, c), W)


def test_normalized_cost():
    w = CostWeights(target_nm=930.0, normalized=True)
    assert cost(metrics(935, 25, 0.0), w) == pytest.approx(0.2 * 25 / 930**2)


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(w1=-1)
    with pytest.raises(ValueError):
        CostWeights(p0=0)


# --- particle swarm -------------------------------------------------------------

def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def rastrigin(x):
    x = np.asarray(x)
    return float(10 * x.size + np.sum(x * x - 10 * np.cos(2 * np.pi * x)))


def test_pso_sphere():
    run = pso_run(sphere, [(-5, 5)] * 4, PsoConfig(swarm_size=30, max_iterations=100, seed=1))
    assert run.best_cost < 1e-3
    assert sphere(run.best_x) == run.best_cost


def test_pso_rastrigin_most_seeds():
    cfg = dict(swarm_size=40, max_iterations=200)
    wins = sum(pso_run(rastrigin, [(-5.12, 5.12)] * 4, PsoConfig(seed=s, **cfg)).best_cost < 1.0
               for s in range(5))
    assert wins >= 3


def test_pso_constant_objective():
    run = pso_run(lambda x: 3.0, [(0, 1)] * 3, PsoConfig(max_iterations=10))
    assert all(c == 3.0 for c in run.trace)
    assert np.all((run.best_x >= 0) & (run.best_x <= 1))


def test_pso_failures_become_infeasible():
    def flaky(x):
        if x[0] > 0:
            raise RuntimeError("solver blew up")
        return sphere(x)
    run = pso_run(flaky, [(-2, 2)] * 2, PsoConfig(max_iterations=20, seed=3))
    assert run.best_x[0] <= 0
    assert any(e.cost == math.inf for e in run.evaluations)


def test_pso_nan_is_infeasible():
    run = pso_run(lambda x: float("nan") if x[0] < 0 else sphere(x), [(-1, 1)] * 2,
                  PsoConfig(max_iterations=10))
    assert np.isfinite(run.best_cost) and run.best_x[0] >= 0


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_pso_trace_monotone_and_in_bounds(seed):
    bounds = [(-3, 1), (65, 90), (0, 5)]
    run = pso_run(rastrigin, bounds, PsoConfig(max_iterations=15, seed=seed))
    assert all(b <= a for a, b in zip(run.trace, run.trace[1:]))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for e in run.evaluations:
        assert np.all(e.x >= lo) and np.all(e.x <= hi)


def test_pso_deterministic():
    a = pso_run(rastrigin, [(-5, 5)] * 3, PsoConfig(seed=11, max_iterations=20))
    b = pso_run(rastrigin, [(-5, 5)] * 3, PsoConfig(seed=11, max_iterations=20))
    assert a.best_x.tobytes() == b.best_x.tobytes()
    assert a.trace == b.trace
    assert all(x.x.tobytes() == y.x.tobytes() for x, y in zip(a.evaluations, b.evaluations))


def test_pso_config_validation():
    with pytest.raises(ValueError):
        PsoConfig(swarm_size=1)
    with pytest.raises(ValueError):
        PsoConfig(inertia=0)


def test_pso_parallel_matches_serial():
    from concurrent.futures import ThreadPoolExecutor
    cfg = PsoConfig(seed=5, max_iterations=10)
    a = pso_run(rastrigin, [(-5, 5)] * 2, cfg)
    with ThreadPoolExecutor(4) as ex:
        b = pso_run(rastrigin, [(-5, 5)] * 2, cfg, executor=ex)
    assert a.best_x.tobytes() == b.best_x.tobytes() and a.trace == b.trace


# --- Powell refinement ------------------------------------------------------------

def bowl(x):
    x = np.asarray(x)
    return float((x[0] - 1.2) ** 2 + 3 * (x[1] + 0.7) ** 2 + (x[0] - x[1]) ** 2 / 4)


def rosenbrock(x):
    return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


def test_refine_bowl():
    run = local_refine(bowl, [-3.0, 3.0], [(-5, 5), (-5, 5)], tol=1e-5, max_evals=2000)
    # minimizer from the normal equations of the quadratic
    A = np.array([[2 + 0.5, -0.5], [-0.5, 6 + 0.5]])
    b = np.array([2.4, -4.2])
    xs = np.linalg.solve(A, b)
    assert np.max(np.abs(run.best_x - xs)) < 1e-3


def test_refine_rosenbrock():
    run = local_refine(rosenbrock, [-1.2, 1.0], [(-2, 2), (-2, 2)], tol=1e-6, max_evals=2000)
    assert run.best_cost < 1e-2
    assert run.n_evaluations <= 2000


def test_refine_from_optimum_stays():
    run = local_refine(sphere, [0.0, 0.0], [(-1, 1), (-1, 1)], tol=1e-3)
    assert np.array_equal(run.best_x, [0.0, 0.0])


@given(st.lists(st.floats(-4, 4), min_size=2, max_size=2), st.integers(1, 60))
@settings(max_examples=30, deadline=None)
def test_refine_never_worse_than_start(start, budget):
    run = local_refine(rastrigin, start, [(-5, 5), (-5, 5)], tol=0.5, max_evals=budget)
    assert run.best_cost <= rastrigin(start) + 1e-12
    assert run.n_evaluations <= budget
    assert all(b <= a for a, b in zip(run.trace, run.trace[1:]))


def test_refine_respects_bounds():
    run = local_refine(lambda x: -float(np.sum(x)), [0.0, 0.0], [(-1, 2), (-1, 3)], tol=1e-4)
    assert run.best_x == pytest.approx([2, 3], abs=1e-3)


# --- two-stage pipeline on the surrogate -----------------------------------------------

def surrogate_grid_optimum(model, template, bounds, names, weights, step):
    """Exhaustive grid search of the surrogate cost (independent of the optimizer)."""
    axes = [np.arange(bounds[n][0], bounds[n][1] + 1e-9, step[n]) for n in names]
    best, arg = math.inf, None
    for x in itertools.product(*axes):
        d = template.with_params(**dict(zip(names, x)))
        c = cost(model(d), weights)
        if c < best:
            best, arg = c, x
    return np.array(arg), best


def surrogate_setup():
    template = preset("cbg930")
    model = SurrogateCavity()
    bounds = {"R": (380, 440), "P": (330, 380), "W": (65, 100), "t_sc": (130, 170),
              "t_s": (180, 230)}
    return template, model, bounds


def test_two_stage_recovers_surrogate_optimum():
    template, model, bounds = surrogate_setup()
    s1 = StageConfig(bounds, PsoConfig(seed=7))
    s2 = StageConfig(bounds, tol=0.1, max_evals=400)
    run1, run2 = two_stage_optimize(template, W, s1, s2, model)
    # coarse exhaustive scan, then a fine scan around its winner
    names = ("R", "P", "W", "t_sc", "t_s")
    coarse, _ = surrogate_grid_optimum(model, template, bounds, names, W,
                                       {"R": 5, "P": 5, "W": 5, "t_sc": 5, "t_s": 5})
    fine_b = {n: (v - 3, v + 3) for n, v in zip(names, coarse)}
    fine, fine_cost = surrogate_grid_optimum(model, template, fine_b, names, W,
                                             {n: 1 for n in names})
    tol = 1.0
    assert np.max(np.abs(run2.best_x - fine)) <= tol, (run2.best, fine)
    assert run2.best_cost == pytest.approx(fine_cost, abs=1e-3)
    assert all(b <= a for a, b in zip(run1.trace, run1.trace[1:]))


def test_stage2_not_worse_than_seed():
    template, model, bounds = surrogate_setup()
    run1, run2 = two_stage_optimize(template, W, StageConfig(bounds, PsoConfig(max_iterations=5)),
                                    StageConfig(bounds, max_evals=50), model)
    seed = template.with_params(**dict(zip(("R", "P", "W", "t_sc"), run1.best_x)))
    assert run2.best_cost <= cost(model(seed), W) + 1e-12


def test_degenerate_weights_maximize_collection():
    template, model, bounds = surrogate_setup()
    w = CostWeights(0, 0, 1, target_nm=930)
    _, run2 = two_stage_optimize(template, w, StageConfig(bounds, PsoConfig(seed=2)),
                                 StageConfig(bounds, tol=0.1), model)
    assert run2.best_cost == pytest.approx(-model.c_peak, abs=1e-3)


def test_all_infeasible_aborts():
    from labcbg.optimize import OptimizationError
    template, _, bounds = surrogate_setup()
    with pytest.raises(OptimizationError, match="infeasible"):
        two_stage_optimize(template, W, StageConfig(bounds, PsoConfig(max_iterations=2)),
                           StageConfig(bounds), lambda d: None)


def test_etch_floor_projected():
    template, model, bounds = surrogate_setup()
    low = dict(bounds, W=(40, 90))
    run1, run2 = two_stage_optimize(template, W, StageConfig(low, PsoConfig(max_iterations=5)),
                                    StageConfig(low, max_evals=30), model)
    for run, i in ((run1, 2), (run2, 2)):
        assert all(e.x[i] >= 65 for e in run.evaluations)


def test_cache_roundtrip(tmp_path):
    template, model, _ = surrogate_setup()
    cache = EvaluationCache(tmp_path)
    obj = DesignObjective(template, ("R", "P"), W, model, cache, "s")
    c1, m1, hit1 = obj(np.array([400.0, 350.0]))
    c2, m2, hit2 = obj(np.array([400.0, 350.0]))
    assert not hit1 and hit2 and c1 == c2
    assert m2.resonance_nm == pytest.approx(m1.resonance_nm)
    assert cache.hits == 1 and cache.misses == 1


def test_trace_csv(tmp_path):
    template, model, bounds = surrogate_setup()
    runs = two_stage_optimize(template, W, StageConfig(bounds, PsoConfig(max_iterations=3)),
                              StageConfig(bounds, max_evals=20), model)
    write_trace_csv(tmp_path / "t.csv", runs)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "stage,iteration,best_cost,R,P,W,t_sc,t_s"
    assert len(lines) == 1 + len(runs[0].trace) + len(runs[1].trace)
