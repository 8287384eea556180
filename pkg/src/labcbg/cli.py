"""``cbg`` command line: simulate, sweep, optimize and check."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, emission, oracles
from .fdtd import engine
from .fdtd.dump import write_face_dump
from .geometry import (PRESETS, GeometryError, GridTooLarge, design_to_dict, load_design, preset,
                       rasterize, validate)
from .optimize import (CostWeights, EvaluationCache, FdtdEvaluator, OptimizationError, PsoConfig,
                       StageConfig, SurrogateCavity, run_summary, two_stage_optimize,
                       write_trace_csv)
from .simulate import PROFILES, default_band, evaluate, grid_spec

log = logging.getLogger("labcbg")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
SWEEP_PARAMS = ("R", "P", "W", "t_sc", "t_s")


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


class NumericFailure(Exception):
    """Simulation or optimization failed numerically; maps to exit code 3."""


# ---------------------------------------------------------------------------
# config helpers


def _float_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _na_list(text):
    values = _float_list(text)
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("NA values must lie in (0, 1]")
    return values


def _band(text):
    parts = _float_list(text)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("band is CENTER,SPAN,SAMPLES")
    c, s, n = parts
    if n < 3 or n != int(n) or not s > 0 or not c > 0:
        raise argparse.ArgumentTypeError("band needs center > 0, span > 0 and >= 3 samples")
    return c, s, int(n)


def _load_design(args):
    if args.design and args.preset:
        raise UsageError("give either --design or --preset, not both")
    try:
        if args.design:
            if not os.path.exists(args.design):
                raise UsageError(f"design file not found: {args.design}")
            design = load_design(args.design)
        else:
            design = preset(args.preset or "cbg930")
    except (GeometryError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid design: {exc}")
    if args.rings is not None:
        design = dataclasses.replace(design, num_rings=args.rings)
    problems = validate(design)
    if problems:
        raise UsageError("invalid design: " + "; ".join(problems))
    return design


def _profile(args):
    prof = PROFILES[args.mesh]
    if args.decay is not None:
        prof = dataclasses.replace(prof, decay_threshold=args.decay)
    return prof


def estimate_bytes(design, profile, metal_model="pec"):
    """Memory the rasterized grid would need, without allocating it."""
    spec = dataclasses.replace(grid_spec(design, profile, metal_model), max_bytes=1)
    try:
        rasterize(design, spec)
    except GridTooLarge as exc:
        return exc.required
    return 0


def _guard_compute(args, design, profile):
    if args.mesh != "paper-fidelity":
        return
    need = estimate_bytes(design, profile, args.metal)
    print(f"paper-fidelity mesh: estimated grid memory {need / 2**30:.2f} GiB", file=sys.stderr)
    if not args.i_have_compute:
        raise UsageError("paper-fidelity mesh needs --i-have-compute")


def _prepare_out(path, force, resume=False):
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if force:
            shutil.rmtree(out)
        elif not resume:
            raise UsageError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, payload, files, name="manifest.json"):
    """Write the versioned manifest listing every output with its checksum."""
    record = {
        "schema_version": SCHEMA_VERSION,
        "tool": f"labcbg {__version__}",
        "command": command,
        **payload,
        "files": {f: {"sha256": _sha256(out / f), "bytes": (out / f).stat().st_size}
                  for f in sorted(files)},
    }
    with open(out / name, "w") as fh:
        json.dump(_jsonable(record), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out / name


def _progress(verbose):
    if not verbose:
        return None
    t0 = time.perf_counter()

    def report(step, energy, peak):
        if step % 1000 == 0:
            rel = energy / peak if peak > 0 else 0.0
            print(f"  step {step:7d}  energy/peak {rel:.2e}  {time.perf_counter() - t0:7.1f}s",
                  file=sys.stderr)
    return report


def _run_eval(design, profile, band, na, metal, threads, verbose=False):
    try:
        return evaluate(design, profile, band, na, metal_model=metal, nthreads=threads,
                        require_peak=False, progress=_progress(verbose))
    except engine.NumericalInstability as exc:
        raise NumericFailure(str(exc))
    except (engine.ConfigError, GeometryError) as exc:
        raise UsageError(str(exc))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    design = _load_design(args)
    profile = _profile(args)
    _guard_compute(args, design, profile)
    out = _prepare_out(args.out, args.force)
    band = args.band or default_band(design)
    result, metrics = _run_eval(design, profile, band, args.na, args.metal, args.threads,
                                args.verbose)
    files = ["spectrum.csv", "farfield.csv", "top_plane.cbgf", "design.json"]
    emission.write_spectrum_csv(out / "spectrum.csv", metrics, tuple(args.na))
    wl = result.wavelengths_nm
    lam = metrics.resonance_nm if math.isfinite(metrics.resonance_nm) else design.target_wavelength
    lam_ff = float(wl[int(np.argmin(np.abs(wl - lam)))])
    ff = emission.near_to_far(result.top_plane(), lam_ff)
    emission.write_farfield_csv(out / "farfield.csv", ff)
    write_face_dump(out / "top_plane.cbgf", result.top_plane())
    with open(out / "design.json", "w") as fh:
        json.dump(design_to_dict(design), fh, indent=2)
    payload = {
        "converged": result.converged,
        "steps": result.steps,
        "residual_energy": result.residual,
        "dt_s": result.dt,
        "elapsed_s": result.elapsed_s,
        "mesh": dataclasses.asdict(profile),
        "band": list(band),
        "na": args.na,
        "metal_model": args.metal,
        "grid_shape": list(result.info.get("shape", [])) if isinstance(result.info, dict) else [],
        "farfield_wavelength_nm": lam_ff,
        "metrics": metrics.summary(),
    }
    write_manifest(out, "simulate", payload, files)
    res = metrics.resonance_nm
    print(f"resonance {res:.2f} nm  Purcell {metrics.purcell_at_resonance:.3f}  "
          f"C_NA0.7 {metrics.c_cost:.4f}  converged {result.converged}")
    return EXIT_OK


def _sweep_one(job):
    design, profile, band, na, metal, threads = job
    _, metrics = evaluate(design, profile, band, na, metal_model=metal, nthreads=threads,
                          require_peak=False)
    return metrics.summary()


def cmd_sweep(args):
    base = _load_design(args)
    profile = _profile(args)
    _guard_compute(args, base, profile)
    out = _prepare_out(args.out, args.force)
    band = args.band or default_band(base)
    base_value = {"R": base.inner_radius, "P": base.grating_period, "W": base.etch_width,
                  "t_sc": base.t_sc, "t_s": base.t_s}[args.param]
    if base_value is None:
        raise UsageError(f"design has no {args.param} parameter")
    jobs, offsets, skipped = [], [], []
    for off in args.offsets:
        if not math.isfinite(off):
            raise UsageError("offsets must be finite")
        try:
            d = base.with_params(**{args.param: base_value + off})
            problems = validate(d)
        except GeometryError as exc:
            problems = [str(exc)]
        if problems:
            log.warning("offset %+g skipped: %s", off, "; ".join(problems))
            skipped.append({"offset_nm": off, "violations": problems})
            continue
        jobs.append((d, profile, band, tuple(args.na), args.metal, args.threads))
        offsets.append(off)
    if args.offsets and not jobs:
        raise UsageError("every swept design is invalid")
    try:
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.workers) as pool:
                rows = list(pool.map(_sweep_one, jobs))
        else:
            rows = [_sweep_one(j) for j in jobs]
    except engine.NumericalInstability as exc:
        raise NumericFailure(str(exc))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "offset_nm", "resonance_nm", "purcell", "c_na_0.7"])
        for off, m in zip(offsets, rows):
            w.writerow([args.param, f"{off:g}", _fmt(m["resonance_nm"]), _fmt(m["purcell"]),
                        _fmt(m["c_cost"])])
    payload = {"param": args.param, "base_value_nm": base_value, "offsets_nm": args.offsets,
               "skipped": skipped, "mesh": dataclasses.asdict(profile), "band": list(band),
               "results": rows}
    write_manifest(out, "sweep", payload, ["sweep.csv"])
    for off, m in zip(offsets, rows):
        print(f"{args.param} {off:+g} nm: resonance {_fmt(m['resonance_nm'])} nm")
    return EXIT_OK


def _fmt(v):
    return "nan" if v is None or not math.isfinite(v) else f"{v:.9g}"


def default_bounds(design):
    """Search box around a design: +-20 % in R, t_sc, t_s; +-15 % in P; W from 0.7x to 1.3x."""
    def around(v, frac):
        return [round(v * (1 - frac), 6), round(v * (1 + frac), 6)]
    b = {"R": around(design.inner_radius, 0.2), "P": around(design.grating_period, 0.15),
         "W": [max(65.0, round(0.7 * design.etch_width, 6)), round(1.3 * design.etch_width, 6)],
         "t_sc": around(design.t_sc, 0.2)}
    b["W"][1] = min(b["W"][1], b["P"][0] - 1.0)
    t_s = design.t_s if design.t_s is not None else design.target_wavelength / 4
    b["t_s"] = around(t_s, 0.25)
    return b


def _opt_config(args, design):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}")
    try:
        weights = CostWeights(**{"target_nm": design.target_wavelength,
                                 "normalized": args.normalized_cost, **cfg.get("weights", {})})
        bounds = default_bounds(design)
        s1 = cfg.get("stage1", {})
        s2 = cfg.get("stage2", {})
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        pso = PsoConfig(**{**s1.get("pso", {}), "seed": seed})
        stage1 = StageConfig({**bounds, **s1.get("bounds", {})}, pso)
        stage2 = StageConfig({**bounds, **s2.get("bounds", {})}, tol=float(s2.get("tol", 0.5)),
                             max_evals=int(s2.get("max_evals", 200)))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid optimization config: {exc}")
    return weights, stage1, stage2, seed, cfg


def cmd_optimize(args):
    design = _load_design(args)
    weights, stage1, stage2, seed, raw = _opt_config(args, design)
    out = _prepare_out(args.out, args.force, resume=args.resume)
    cache = EvaluationCache(out / "evaluations")
    if args.surrogate:
        evaluator = SurrogateCavity(target_nm=design.target_wavelength)
    else:
        profile = _profile(args)
        _guard_compute(args, design, profile)
        band = list(args.band) if args.band else [None, 0.16 * design.target_wavelength, 33]
        evaluator = FdtdEvaluator(profile, band, args.metal, args.threads)
    payload = {"seed": seed, "weights": dataclasses.asdict(weights), "surrogate": args.surrogate,
               "stage1": {"bounds": stage1.bounds, "pso": dataclasses.asdict(stage1.pso)},
               "stage2": {"bounds": stage2.bounds, "tol": stage2.tol,
                          "max_evals": stage2.max_evals},
               "config_file": raw, "template": design_to_dict(design)}
    executor = ProcessPoolExecutor(args.workers) if args.workers > 1 else None
    try:
        run1, run2 = two_stage_optimize(design, weights, stage1, stage2, evaluator, cache,
                                        executor)
    except OptimizationError as exc:
        payload["status"] = "failed"
        payload["error"] = str(exc)
        write_manifest(out, "optimize", payload, [], name="run_manifest.json")
        raise NumericFailure(str(exc))
    finally:
        if executor is not None:
            executor.shutdown()
    write_trace_csv(out / "trace.csv", [run1, run2])
    computed = sum(1 for r in (run1, run2) for e in r.evaluations
                   if not e.cached and math.isfinite(e.cost))
    payload.update(status="ok", stages=[run_summary(run1), run_summary(run2)],
                   best=run2.best, best_cost=run2.best_cost, evaluations_computed=computed,
                   cache_hits=sum(1 for r in (run1, run2) for e in r.evaluations if e.cached))
    write_manifest(out, "optimize", payload, ["trace.csv"], name="run_manifest.json")
    best = ", ".join(f"{k}={v:.2f}" for k, v in run2.best.items())
    print(f"best cost {run2.best_cost:.6g} at {best} ({computed} new evaluations)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle self-test


def oracle_checks():
    """(name, value, expected, tolerance) for each closed-form identity."""
    from scipy.integrate import quad

    checks = []
    lam = 930.0
    checks.append(("mirror dipole d=lambda/4 (horizontal)",
                   float(oracles.mirror_dipole_factor(lam / 4, lam)), 1.152, 1e-3))
    for frac in (1 / 8, 1 / 4, 1 / 2, 1.3):
        for o in ("horizontal", "vertical"):
            d = frac * lam
            checks.append((f"closed form vs image field, {o} d={frac:g} lambda",
                           float(oracles.image_dipole_factor(d, lam, o)),
                           float(oracles.mirror_dipole_factor(d, lam, o)), 1e-9))
    checks.append(("mirror factor -> 1 far from the mirror",
                   float(oracles.mirror_dipole_factor(200 * lam, lam)), 1.0, 1e-2))
    checks.append(("vertical dipole on the mirror doubles",
                   float(oracles.mirror_dipole_factor(1e-4, lam, "vertical")), 2.0, 1e-6))

    checks.append(("uniform hemisphere NA 0.7", oracles.hemisphere_cone_fraction("uniform", 0.7),
                   0.2859, 1e-3))
    for na in (0.4, 0.7, 1.0):
        for pat, wfun in (("uniform", lambda t: math.sin(t)),
                          ("dipole-sin2", lambda t: math.sin(t) ** 3)):
            num = quad(wfun, 0, math.asin(na))[0] / quad(wfun, 0, math.pi / 2)[0]
            checks.append((f"cone fraction {pat} NA {na:g} vs quadrature",
                           oracles.hemisphere_cone_fraction(pat, na), num, 1e-9))

    n_sub, n_ar = 1.5, math.sqrt(1.5)
    checks.append(("quarter-wave AR coating reflectance",
                   oracles.thin_film_reflectance([(n_sub, 0), (n_ar, lam / (4 * n_ar))], lam),
                   0.0, 1e-12))
    checks.append(("bare interface Fresnel reflectance",
                   oracles.thin_film_reflectance([(3.5, 0)], lam), (2.5 / 4.5) ** 2, 1e-12))
    checks.append(("perfect conductor reflectance",
                   oracles.thin_film_reflectance([(None, 0), (1.6, 200)], lam), 1.0, 1e-12))
    checks.append(("half-wave layer is absentee",
                   oracles.thin_film_reflectance([(3.5, 0), (2.0, lam / 4)], lam),
                   oracles.thin_film_reflectance([(3.5, 0)], lam), 1e-12))

    # far-field power of the analytic dipole pattern equals the bulk formula
    p0 = float(oracles.bulk_dipole_power(1.0, lam))
    eta = engine.ETA0
    th = np.linspace(0, math.pi, 721)
    et, ep = oracles.dipole_far_field(th, 0.0, lam, "z")
    from scipy.integrate import trapezoid
    pw = trapezoid(np.abs(et) ** 2 / (2 * eta) * 2 * math.pi * np.sin(th), th)
    checks.append(("dipole far-field power vs bulk formula", pw / p0, 1.0, 1e-4))

    # near field at large distance approaches the far-field amplitude
    r_nm = 1e6 * lam
    E, _ = oracles.dipole_near_field(r_nm, 0.0, 0.0, lam, (0.0, 0.0, 1.0))
    ff, _ = oracles.dipole_far_field(math.pi / 2, 0.0, lam, "z", r=r_nm * 1e-9)
    checks.append(("near field -> far field at 10^6 wavelengths", abs(E[2]) / abs(ff), 1.0, 1e-5))
    checks.append(("bulk power scales with index",
                   float(oracles.bulk_dipole_power(3.5, lam) / oracles.bulk_dipole_power(1, lam)),
                   3.5, 1e-12))
    return checks


def cmd_check(args):
    shift = args.perturb
    failures = 0
    width = 58
    print(f"{'check':<{width}} {'value':>14} {'expected':>14}  result")
    for name, value, expected, tol in oracle_checks():
        expected = expected + shift
        err = abs(value - expected)
        ok = err <= tol * max(1.0, abs(expected))
        failures += not ok
        print(f"{name:<{width}} {value:>14.6g} {expected:>14.6g}  {'PASS' if ok else 'FAIL'}")
    print(f"{failures} failure(s)")
    return EXIT_OK if failures == 0 else 1


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="cbg", description="Labyrinth CBG design toolkit")
    p.add_argument("--version", action="version", version=f"labcbg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--design", help="design JSON file")
    common.add_argument("--preset", choices=PRESETS, help="built-in design")
    common.add_argument("--rings", type=int, help="override the number of rings")
    common.add_argument("--mesh", choices=sorted(PROFILES), default="desk")
    common.add_argument("--decay", type=float, help="override the field-decay stop threshold")
    common.add_argument("--band", type=_band, help="CENTER,SPAN,SAMPLES in nm")
    common.add_argument("--na", type=_na_list, default=list(emission.DEFAULT_NA),
                        help="comma separated numerical apertures")
    common.add_argument("--metal", choices=("pec", "drude"), default="pec")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--workers", type=int, default=1, help="parallel evaluations")
    common.add_argument("--out", default="cbg-out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite the output directory")
    common.add_argument("--i-have-compute", action="store_true",
                        help="allow the paper-fidelity mesh")
    common.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", parents=[common], help="one FDTD run with metrics")
    sp.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", parents=[common], help="one-parameter tolerance sweep",
                        description="One FDTD run per offset. The c_na_0.7 column of sweep.csv "
                                    "is the optimizer's collected-power term "
                                    "E_up * O_ff * NA_0.7 at resonance.")
    sw.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    sw.add_argument("--offsets", type=_float_list, default=[-10.0, 0.0, 10.0],
                    help="comma separated offsets in nm (may be empty)")
    sw.set_defaults(func=cmd_sweep)

    op = sub.add_parser("optimize", parents=[common], help="two-stage PSO + Powell search")
    op.add_argument("--config", help="optimization config JSON")
    op.add_argument("--seed", type=int)
    op.add_argument("--resume", action="store_true", help="reuse cached evaluations in --out")
    op.add_argument("--surrogate", action="store_true",
                    help="use the analytic test cavity instead of FDTD")
    op.add_argument("--normalized-cost", action="store_true",
                    help="divide f1 by lambda0^2 and f2 by P0^2")
    op.set_defaults(func=cmd_optimize)

    ck = sub.add_parser("check", help="closed-form oracle self-test")
    ck.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    ck.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1 or getattr(args, "workers", 1) < 1:
        print("cbg: error: --threads and --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cbg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"cbg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
