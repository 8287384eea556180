"""Glue between designs, the FDTD engine and the emission metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import emission
from .fdtd import engine
from .geometry import GridSpec, rasterize


@dataclass(frozen=True)
class MeshProfile:
    """Discretization and run-control policy.

    ``points_per_wavelength`` counts cells per wavelength inside the densest
    dielectric of the stack.
    """

    name: str
    points_per_wavelength: float
    lateral_padding: float = 250.0
    vertical_padding: float = 300.0
    pml_cells: int = 8
    courant: float = 0.9
    decay_threshold: float = 1e-5
    max_steps: int = 100_000
    supersample: int = 6
    symmetric: bool = True
    box_gap: int = 2
    bandwidth: float = 0.3


PROFILES = {
    "desk": MeshProfile("desk", 20.0),
    "paper-fidelity": MeshProfile("paper-fidelity", 100.0, lateral_padding=500.0,
                                  vertical_padding=600.0, pml_cells=16, supersample=4),
}


def cell_size(design, profile):
    return design.target_wavelength / (design.stack.max_index * profile.points_per_wavelength)


def default_band(design, span_fraction=0.16, samples=33):
    lam = design.target_wavelength
    return lam, span_fraction * lam, samples


def band_wavelengths(center, span, samples):
    if samples < 3:
        raise ValueError("a band needs at least 3 samples")
    return np.linspace(center - span / 2, center + span / 2, int(samples))


def grid_spec(design, profile, metal_model="pec", cell=None):
    d = cell_size(design, profile) if cell is None else cell
    return GridSpec(
        cell=d,
        lateral_padding=profile.lateral_padding,
        top_padding=profile.vertical_padding,
        bottom_padding=profile.vertical_padding,
        pml_cells=profile.pml_cells,
        symmetric=profile.symmetric and design.is_mirror_symmetric(),
        dipole_axis="x",
        metal_model=metal_model,
        supersample=profile.supersample,
        trim_pec=metal_model == "pec",
    )


def build_config(design, profile, band=None, metal_model="pec", nthreads=1, backend=None,
                 grid=None):
    """Rasterize ``design`` and wrap it with source and box monitor settings."""
    band = default_band(design) if band is None else band
    wl = band_wavelengths(*band)
    if grid is None:
        grid = rasterize(design, grid_spec(design, profile, metal_model))
    src = engine.DipoleSource(design.target_wavelength, profile.bandwidth)
    box = engine.box_monitor(grid, gap=profile.box_gap)
    top_k = int(math.floor((design.stack.top - grid.origin[2]) / grid.cell[2])) + 1
    if box.hi[2] <= top_k:
        raise engine.ConfigError("no room for a monitor plane above the structure")
    return engine.SimConfig(grid, src, wl, (box,), courant=profile.courant,
                            decay_threshold=profile.decay_threshold, max_steps=profile.max_steps,
                            nthreads=nthreads, backend=backend,
                            points_per_wavelength=profile.points_per_wavelength)


def simulate(design, profile, band=None, metal_model="pec", nthreads=1, backend=None,
             progress=None):
    cfg = build_config(design, profile, band, metal_model, nthreads, backend)
    return engine.run(cfg, progress)


def evaluate(design, profile, band=None, na_values=emission.DEFAULT_NA, metal_model="pec",
             nthreads=1, angles=None, require_peak=True, progress=None):
    """Simulate ``design`` and return (SimResult, EmissionMetrics)."""
    result = simulate(design, profile, band, metal_model, nthreads, progress=progress)
    metrics = emission.compute_metrics(result, design.target_wavelength, na_values,
                                       angles=angles, require_peak=require_peak)
    return result, metrics
