"""Yee-grid FDTD solver with CPML boundaries, a soft dipole and DFT monitors.

Arrays carry one ghost layer at the low end of every axis, so physical node
``i`` lives at array index ``i + 1``. Electric samples use integer time steps
``n * dt`` and magnetic samples (and source currents) half steps, which makes
the frequency-domain fields satisfy the discrete Maxwell equations exactly
and lets box fluxes balance the injected power to round-off.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import constants

from . import backend as _backend

log = logging.getLogger(__name__)

C0 = constants.c
MU0 = constants.mu_0
EPS0 = constants.epsilon_0
ETA0 = MU0 * C0
NM = 1e-9
AXES = "xyz"


class ConfigError(ValueError):
    pass


class NumericalInstability(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite field energy at step {step}")


def timestep_bound(cell_nm, courant=0.5):
    """Largest stable step scaled by the Courant factor, in seconds.

    ``cell_nm`` may be a scalar or (dx, dy, dz); an infinite size drops that
    axis (the 2-D limit).
    """
    if not 0 < courant <= 1:
        raise ConfigError("Courant factor must lie in (0, 1]")
    cells = np.broadcast_to(np.asarray(cell_nm, dtype=float), (3,))
    if np.any(cells <= 0):
        raise ConfigError("cell sizes must be positive")
    inv = np.sum(1.0 / (cells * NM) ** 2)
    return courant / (C0 * math.sqrt(inv))


@dataclass(frozen=True)
class PmlSpec:
    """Convolutional PML. ``thickness`` None uses the grid's absorbing margin."""

    thickness: Optional[int] = None
    order: int = 3
    sigma_scale: float = 1.0
    kappa_max: float = 1.0
    alpha_max: float = 0.0


@dataclass(frozen=True)
class DipoleSource:
    """Soft current dipole driven by a Gaussian-windowed sine.

    ``position_nm`` None places the dipole on the grid's design emitter.
    ``orientation`` must be along a grid axis.
    """

    center_wavelength_nm: float
    fractional_bandwidth: float = 0.3
    orientation: tuple = (1.0, 0.0, 0.0)
    position_nm: Optional[tuple] = None
    amplitude: float = 1.0

    @property
    def axis(self):
        o = np.asarray(self.orientation, dtype=float)
        norm = np.linalg.norm(o)
        if norm == 0:
            raise ConfigError("dipole orientation must be non-zero")
        o = o / norm
        hits = np.nonzero(np.abs(o) > 1 - 1e-12)[0]
        if hits.size != 1:
            raise ConfigError("only axis-aligned dipole orientations are supported")
        return int(hits[0])

    @property
    def omega0(self):
        return 2 * math.pi * C0 / (self.center_wavelength_nm * NM)

    @property
    def tau(self):
        # amplitude spectrum FWHM = fractional_bandwidth * omega0
        return 2 * math.sqrt(2 * math.log(2)) / (self.fractional_bandwidth * self.omega0)

    @property
    def t0(self):
        return 5 * self.tau

    def waveform(self, t):
        s = (t - self.t0) / self.tau
        return self.amplitude * np.exp(-0.5 * s * s) * np.sin(self.omega0 * (t - self.t0))

    def relative_spectrum(self, omega):
        return np.exp(-0.5 * ((np.asarray(omega) - self.omega0) * self.tau) ** 2)


@dataclass(frozen=True)
class Monitor:
    """Box (six faces) or z-normal plane monitor in physical node indices.

    For a box, ``lo`` and ``hi`` are the inclusive E-node bounds of the faces.
    A plane uses ``lo[2] == hi[2]``: tangential E is taken on that node plane
    and tangential H half a cell above. ``split_z_nm`` divides side-face
    flux into upward and downward parts (default: the top of the structure,
    or the dipole height in a grid without one).
    """

    name: str
    kind: str
    lo: tuple
    hi: tuple
    split_z_nm: Optional[float] = None


def box_monitor(grid, name="box", gap=2, z_lo=None, z_hi=None, split_z_nm=None):
    """Largest box that keeps ``gap`` cells clear of the absorbing margin.

    ``z_lo``/``z_hi`` override the vertical face positions (node indices).
    """
    nx, ny, nz = grid.shape
    a = grid.absorber
    lo = [0 if grid.mirror[0] else a[0] + gap, 0 if grid.mirror[1] else a[2] + gap,
          max(a[4] + gap, 1)]
    hi = [nx - 1 - a[1] - gap, ny - 1 - a[3] - gap, min(nz - 1 - a[5] - gap, nz - 2)]
    if z_lo is not None:
        lo[2] = int(z_lo)
    if z_hi is not None:
        hi[2] = int(z_hi)
    return Monitor(name, "box", tuple(lo), tuple(hi), split_z_nm)


def plane_monitor(grid, z_nm, name="plane", gap=2):
    k = int(round((z_nm - grid.origin[2]) / grid.cell[2]))
    box = box_monitor(grid, gap=gap)
    return Monitor(name, "plane", (box.lo[0], box.lo[1], k), (box.hi[0], box.hi[1], k))


@dataclass
class SimConfig:
    grid: object
    source: DipoleSource
    wavelengths_nm: object
    monitors: tuple = ()
    courant: float = 0.5
    pml: PmlSpec = PmlSpec()
    decay_threshold: float = 1e-5
    max_steps: int = 100_000
    backend: Optional[str] = None
    nthreads: int = 1
    points_per_wavelength: Optional[float] = None

    def validate(self):
        if not 0 < self.courant <= 1:
            raise ConfigError("Courant factor must lie in (0, 1]")
        thick = self.pml_thickness
        live = [t for t, m in zip(thick, self._mirror_faces()) if not m]
        if any(0 < t < 8 for t in live):
            raise ConfigError("PML thickness must be at least 8 cells")
        wl = np.asarray(self.wavelengths_nm, dtype=float)
        if wl.ndim != 1 or wl.size == 0 or np.any(wl <= 0):
            raise ConfigError("wavelengths must be a non-empty list of positive values")
        omega = 2 * np.pi * C0 / (wl * NM)
        if np.any(self.source.relative_spectrum(omega) < 0.01):
            raise ConfigError("pulse spectrum below 1% of peak at some monitor wavelength")
        self.source.axis

    def _mirror_faces(self):
        mx, my = self.grid.mirror
        return (mx, False, my, False, False, False)

    @property
    def pml_thickness(self):
        if self.pml.thickness is None:
            return tuple(self.grid.absorber)
        t = int(self.pml.thickness)
        return tuple(0 if m else t for m in self._mirror_faces())


# ---------------------------------------------------------------------------
# results


@dataclass
class FaceData:
    """Normalized DFT fields on one monitor face.

    ``fields[c]`` has shape (F, n1, n2) over the face's two in-plane axes (in
    xyz order); ``coords[c]`` gives the matching sample coordinates in nm plus
    the normal coordinate. ``sign`` is +1 when the outward normal points along
    the positive axis.
    """

    name: str
    normal: int
    sign: int
    fields: dict
    coords: dict
    cell: tuple
    wavelengths_nm: np.ndarray
    index: Optional[float] = None

    @property
    def plane_axes(self):
        return tuple(a for a in range(3) if a != self.normal)


@dataclass
class MonitorResult:
    name: str
    kind: str
    faces: dict
    mirrored: tuple
    split_z_nm: Optional[float]

    def flux(self):
        """Per-face outward flux and the upward/total sums, per frequency."""
        out = {}
        up = 0.0
        total = 0.0
        for name, face in self.faces.items():
            f = face_flux(face)
            out[name] = f
            total = total + f
            if name in ("x_hi", "y_hi"):
                axis = 0 if name == "x_hi" else 1
                if self.mirrored[axis]:
                    total = total + f
            if face.normal == 2:
                if face.sign > 0:
                    up = up + f
            else:
                fu = face_flux(face, z_split=self.split_z_nm)
                up = up + fu
                if name in ("x_hi", "y_hi") and self.mirrored[0 if name == "x_hi" else 1]:
                    up = up + fu
        out["total"] = total
        out["up"] = up
        return out


@dataclass
class SimResult:
    wavelengths_nm: np.ndarray
    omega: np.ndarray
    source_power: np.ndarray
    monitors: dict
    steps: int
    dt: float
    converged: bool
    residual: float
    images: int
    dipole_moment: np.ndarray
    elapsed_s: float = 0.0
    host_index: float = 1.0
    info: dict = field(default_factory=dict)

    def fluxes(self, monitor="box"):
        return self.monitors[monitor].flux()

    def total_flux(self, monitor="box"):
        return self.fluxes(monitor)["total"]

    def top_plane(self, monitor="box"):
        m = self.monitors[monitor]
        return m.faces["top"] if m.kind == "box" else m.faces["plane"]


def _cross_terms(face):
    # cyclic order: S_n = E_a H_b* - E_b H_a* with (n, a, b) a rotation of (x, y, z)
    c1, c2 = AXES[(face.normal + 1) % 3], AXES[(face.normal + 2) % 3]
    return (("E" + c1, "H" + c2, 1.0), ("E" + c2, "H" + c1, -1.0))


def face_flux(face, z_split=None):
    """Signed outward power through a face, 1/2 Re of E x H*, per frequency.

    With ``z_split`` only samples above that height count, half weight on it.
    """
    a1, a2 = face.plane_axes
    area = face.cell[a1] * face.cell[a2] * NM * NM
    total = np.zeros(len(face.wavelengths_nm))
    for ec, hc, s in _cross_terms(face):
        dens = np.real(face.fields[ec] * np.conj(face.fields[hc]))
        if z_split is not None:
            zc = face.coords[ec][1] if a2 == 2 else None
            if zc is None:
                raise ValueError("z split needs a vertical face")
            tol = 1e-6 * face.cell[2]
            w = np.where(zc > z_split + tol, 1.0, np.where(zc >= z_split - tol, 0.5, 0.0))
            dens = dens * w[None, None, :]
        total += s * dens.sum(axis=(1, 2))
    return 0.5 * face.sign * area * total


# ---------------------------------------------------------------------------
# solver


def _mirror_kind(source_axis, mirror_axis):
    """'pec' when tangential E is odd across the plane, else 'pmc'."""
    return "pec" if source_axis == mirror_axis else "pmc"


def _parity(comp, mirror_axis, kind):
    normal = comp[1] == AXES[mirror_axis]
    if comp[0] == "E":
        even = normal if kind == "pec" else not normal
    else:
        even = (not normal) if kind == "pec" else normal
    return 1.0 if even else -1.0


def _unfold(values, coords, axis_pos, parity):
    """Mirror samples across the coordinate origin along one in-plane axis."""
    c = coords
    on_plane = abs(c[0]) < 1e-9 * max(1.0, abs(c[-1]))
    take = slice(1, None) if on_plane else slice(None)
    flipped = np.flip(np.take(values, np.arange(values.shape[axis_pos])[take], axis=axis_pos),
                      axis=axis_pos)
    return (np.concatenate([parity * flipped, values], axis=axis_pos),
            np.concatenate([-c[take][::-1], c]))


def _pml_profile(positions, n, lo, hi, spec, d, dt):
    """CPML coefficients at fractional node positions inside the layers."""
    rho = np.zeros_like(positions)
    if lo:
        m = positions < lo
        rho[m] = (lo - positions[m]) / lo
    if hi:
        edge = n - 1 - hi
        m = positions > edge
        rho[m] = (positions[m] - edge) / hi
    order = spec.order
    sigma_max = spec.sigma_scale * 0.8 * (order + 1) / (ETA0 * d)
    sigma = sigma_max * rho**order
    kappa = 1 + (spec.kappa_max - 1) * rho**order
    alpha = spec.alpha_max * (1 - rho)
    b = np.exp(-(sigma / kappa + alpha) * dt / EPS0)
    denom = sigma * kappa + kappa**2 * alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(sigma > 0, sigma / np.where(denom > 0, denom, 1) * (b - 1), 0.0)
    return b, c, 1 / kappa - 1


_H_TERMS = {0: (("Hy", "Ez", 1.0), ("Hz", "Ey", -1.0)),
            1: (("Hz", "Ex", 1.0), ("Hx", "Ez", -1.0)),
            2: (("Hx", "Ey", 1.0), ("Hy", "Ex", -1.0))}
_E_TERMS = {0: (("Ey", "Hz", -1.0), ("Ez", "Hy", 1.0)),
            1: (("Ex", "Hz", 1.0), ("Ez", "Hx", -1.0)),
            2: (("Ex", "Hy", -1.0), ("Ey", "Hx", 1.0))}


class _Simulation:
    def __init__(self, config):
        config.validate()
        self.cfg = config
        self.k = _backend.get(config.backend)
        g = config.grid
        self.grid = g
        self.shape = tuple(g.shape)
        self.d = tuple(c * NM for c in g.cell)
        self.dt = timestep_bound(g.cell, config.courant)
        self.wl = np.asarray(config.wavelengths_nm, dtype=float)
        self.omega = 2 * np.pi * C0 / (self.wl * NM)
        src = config.source
        self.src = src
        self.axis = src.axis
        self.mirror_kind = tuple(_mirror_kind(self.axis, a) if g.mirror[a] else None
                                 for a in range(2))
        pshape = tuple(n + 1 for n in self.shape)
        self.f = {c: np.zeros(pshape) for c in ("Ex", "Ey", "Ez", "Hx", "Hy", "Hz")}
        self._build_coefficients()
        self._build_pml()
        self._build_drude()
        self._build_source()
        self._build_monitors()

    # -- setup -------------------------------------------------------------
    def _build_coefficients(self):
        g, dt = self.grid, self.dt
        pshape = tuple(n + 1 for n in self.shape)
        self.cb = {}
        self.eps = {}
        for a, comp in enumerate(("Ex", "Ey", "Ez")):
            eps = np.asarray(g.eps[a], dtype=float)
            cb = np.zeros(pshape)
            cb[1:, 1:, 1:] = dt / (EPS0 * eps)
            for b in range(3):
                n = self.shape[b]
                idx = [slice(None)] * 3
                if b == a:
                    idx[b] = n  # beyond the last node: out of domain
                    cb[tuple(idx)] = 0.0
                    continue
                idx[b] = n
                cb[tuple(idx)] = 0.0
                pmc_low = b < 2 and self.mirror_kind[b] == "pmc"
                if not pmc_low:
                    idx[b] = 1
                    cb[tuple(idx)] = 0.0
            if g.pec is not None:
                cb[1:, 1:, 1:][g.pec[a]] = 0.0
            self.cb[comp] = cb
            self.eps[comp] = EPS0 * eps
        self.ch = tuple(dt / (MU0 * d) for d in self.d)
        self.inv_d = tuple(1.0 / d for d in self.d)

    def _build_pml(self):
        spec = self.cfg.pml
        thick = self.cfg.pml_thickness
        self.pml = []
        for b in range(3):
            n = self.shape[b]
            lo, hi = thick[2 * b], thick[2 * b + 1]
            if lo + hi == 0:
                continue
            if lo + hi >= n - 2:
                raise ConfigError(f"absorbing layers overlap along {AXES[b]}")
            h_nodes = np.array(sorted(set(range(lo)) | set(range(n - 1 - hi, n - 1))),
                               dtype=np.int64)
            e_nodes = np.array(sorted(set(range(lo)) | set(range(n - hi, n))), dtype=np.int64)
            for kind, nodes, pos in (("H", h_nodes, h_nodes + 0.5), ("E", e_nodes, e_nodes + 0.0)):
                if nodes.size == 0:
                    continue
                bb, cc, km1 = _pml_profile(pos, n, lo, hi, spec, self.d[b], self.dt)
                terms = _H_TERMS[b] if kind == "H" else _E_TERMS[b]
                for target, source, sign in terms:
                    pshape = [n_ + 1 for n_ in self.shape]
                    pshape[b] = nodes.size
                    psi = np.zeros(pshape)
                    self.pml.append(dict(kind=kind, target=target, source=source, sign=sign,
                                         axis=b, pidx=np.ascontiguousarray(nodes + 1), b=bb,
                                         c=cc, km1=km1, psi=psi))

    def _build_drude(self):
        g = self.grid
        self.drude = []
        if g.drude is None:
            return
        wp, gamma = g.drude_params
        dt = self.dt
        kj = (1 - gamma * dt / 2) / (1 + gamma * dt / 2)
        bj = EPS0 * wp**2 * dt / (1 + gamma * dt / 2)
        for a, comp in enumerate(("Ex", "Ey", "Ez")):
            mask = np.zeros(tuple(n + 1 for n in self.shape), dtype=bool)
            mask[1:, 1:, 1:] = g.drude[a]
            mask &= self.cb[comp] != 0
            nodes = np.flatnonzero(mask).astype(np.int64)
            if nodes.size:
                self.drude.append((comp, nodes, np.zeros(nodes.size), kj, bj))

    def _build_source(self):
        g, src = self.grid, self.src
        comp = "E" + AXES[self.axis]
        if src.position_nm is None:
            if g.dipole_node is None:
                raise ConfigError("grid has no design emitter; give a source position")
            if g.dipole_axis != AXES[self.axis]:
                raise ConfigError("grid is aligned for a different dipole orientation")
            node = tuple(g.dipole_node)
        else:
            node = g.node_index(src.position_nm, comp)
        self.src_comp = comp
        self.src_node = tuple(i + 1 for i in node)
        if self.cb[comp][self.src_node] == 0:
            raise ConfigError("dipole sits on a conductor or wall")
        self.images = 1
        for a in range(2):
            if self.mirror_kind[a] == "pec":
                self.images *= 2
        self.dV = self.d[0] * self.d[1] * self.d[2]
        self.src_end = 2 * src.t0
        self.src_pos = tuple(g.coords(comp, a)[node[a]] for a in range(3))

    def _build_monitors(self):
        self.rec = []
        self.mon_meta = []
        f_hi = max((self.src.omega0 + 6 / self.src.tau), 1.1 * self.omega.max()) / (2 * np.pi)
        self.stride = max(1, int(1.0 / (4 * f_hi * self.dt)))
        for mon in self.cfg.monitors:
            faces = self._faces_for(mon)
            self.mon_meta.append((mon, faces))

    def _faces_for(self, mon):
        (i0, j0, k0), (i1, j1, k1) = mon.lo, mon.hi
        n = self.shape
        if mon.kind == "plane":
            if k0 != k1:
                raise ConfigError("plane monitors must be z-normal (lo[2] == hi[2])")
            specs = [("plane", 2, 1, k0, k0)]
        elif mon.kind == "box":
            if not (i0 < i1 and j0 < j1 and k0 < k1):
                raise ConfigError(f"monitor {mon.name!r} has empty extent")
            if k0 < 1 or k1 > n[2] - 2 or i1 > n[0] - 2 or j1 > n[1] - 2:
                raise ConfigError(f"monitor {mon.name!r} touches the domain boundary")
            sp = self.src_node
            if not (i0 <= sp[0] - 1 <= i1 and j0 <= sp[1] - 1 <= j1 and k0 <= sp[2] - 1 <= k1):
                raise ConfigError(f"box monitor {mon.name!r} does not enclose the source")
            specs = [("top", 2, 1, k1, k1), ("bottom", 2, -1, k0, k0 - 1),
                     ("x_hi", 0, 1, i1, i1), ("y_hi", 1, 1, j1, j1)]
            if not self.grid.mirror[0]:
                if i0 < 1:
                    raise ConfigError(f"monitor {mon.name!r} touches the domain boundary")
                specs.append(("x_lo", 0, -1, i0, i0 - 1))
            if not self.grid.mirror[1]:
                if j0 < 1:
                    raise ConfigError(f"monitor {mon.name!r} touches the domain boundary")
                specs.append(("y_lo", 1, -1, j0, j0 - 1))
        else:
            raise ConfigError(f"unknown monitor kind {mon.kind!r}")
        rng = {0: (i0, i1), 1: (j0, j1), 2: (k0, k1)}
        faces = []
        nf = len(self.wl)
        for name, normal, sign, e_at, h_at in specs:
            a1, a2 = [a for a in range(3) if a != normal]
            comps = {}
            for kind in ("E", "H"):
                for a in (a1, a2):
                    comp = kind + AXES[a]
                    idx = [None, None, None]
                    idx[normal] = (e_at if kind == "E" else h_at) + 1
                    for b in (a1, a2):
                        lo_b, hi_b = rng[b]
                        # E sits half a cell along its own axis, H along the other one
                        staggered = (b == a) if kind == "E" else (b != a)
                        top = hi_b - 1 if staggered else hi_b
                        idx[b] = slice(lo_b + 1, top + 2)
                    comps[comp] = tuple(idx)
            acc = {c: np.zeros((nf,) + self.f[c][s].shape, dtype=complex) for c, s in comps.items()}
            faces.append(dict(name=name, normal=normal, sign=sign, slices=comps, acc=acc,
                              e_at=e_at, h_at=h_at))
        return faces

    # -- stepping ------------------------------------------------------------
    def _fill_ghosts(self):
        f = self.f
        for a in range(2):
            if self.mirror_kind[a] != "pmc":
                continue
            for comp in ("Hx", "Hy", "Hz"):
                if comp[1] == AXES[a]:
                    continue
                arr = f[comp]
                if a == 0:
                    arr[0] = -arr[1]
                else:
                    arr[:, 0] = -arr[:, 1]

    def _apply_pml(self, kind):
        k = self.k
        for t in self.pml:
            if t["kind"] != kind:
                continue
            if kind == "H":
                coef, scoef, backward = None, self.dt / MU0, False
            else:
                coef, scoef, backward = self.cb[t["target"]], 0.0, True
            k.cpml_correct(self.f[t["target"]], self.f[t["source"]], t["psi"], coef, scoef,
                           t["pidx"], t["b"], t["c"], t["km1"], t["axis"],
                           self.inv_d[t["axis"]], t["sign"], backward)

    def _energy(self):
        f = self.f
        tot = 0.0
        for c in ("Ex", "Ey", "Ez"):
            v = f[c][1:, 1:, 1:]
            tot += float(np.vdot(v, self.eps[c] * v))
        for c in ("Hx", "Hy", "Hz"):
            v = f[c][1:, 1:, 1:]
            tot += MU0 * float(np.vdot(v, v))
        return 0.5 * tot

    def run(self, progress=None):
        k, f, dt = self.k, self.f, self.dt
        nt = self.cfg.nthreads
        ex, ey, ez, hx, hy, hz = (f[c] for c in ("Ex", "Ey", "Ez", "Hx", "Hy", "Hz"))
        cbx, cby, cbz = self.cb["Ex"], self.cb["Ey"], self.cb["Ez"]
        chx, chy, chz = self.ch
        idx, idy, idz = self.inv_d
        src_arr = f[self.src_comp]
        src_cb = self.cb[self.src_comp][self.src_node]
        node = self.src_node
        omega = self.omega
        e_src = np.zeros(len(omega), dtype=complex)
        j_src = np.zeros(len(omega), dtype=complex)
        flat = {c: f[c].reshape(-1) for c in ("Ex", "Ey", "Ez")}
        cb_flat = {c: self.cb[c].reshape(-1) for c in ("Ex", "Ey", "Ez")}
        period = 2 * np.pi / self.src.omega0
        check = max(1, int(round(period / dt)))
        peak = 0.0
        energy = 0.0
        converged = False
        t_start = time.perf_counter()
        step = 0
        for step in range(1, self.cfg.max_steps + 1):
            n = step - 1
            k.update_h(hx, hy, hz, ex, ey, ez, chx, chy, chz, nt)
            self._apply_pml("H")
            self._fill_ghosts()
            for comp, nodes, jd, kj, bj in self.drude:
                k.drude_current(jd, flat[comp], nodes, kj, bj)
            k.update_e(ex, ey, ez, hx, hy, hz, cbx, cby, cbz, idx, idy, idz, nt)
            self._apply_pml("E")
            for comp, nodes, jd, kj, bj in self.drude:
                k.drude_apply(flat[comp], cb_flat[comp], nodes, jd)
            t_h = (n + 0.5) * dt
            t_e = (n + 1) * dt
            if t_h <= self.src_end:
                jv = float(self.src.waveform(t_h))
                src_arr[node] -= src_cb * jv
                j_src += jv * np.exp(1j * omega * t_h) * dt
            e_src += src_arr[node] * np.exp(1j * omega * t_e) * dt
            if step % self.stride == 0:
                ph_e = np.exp(1j * omega * t_e) * (self.stride * dt)
                ph_h = np.exp(1j * omega * t_h) * (self.stride * dt)
                for _, faces in self.mon_meta:
                    for face in faces:
                        for c, s in face["slices"].items():
                            ph = ph_e if c[0] == "E" else ph_h
                            face["acc"][c] += np.multiply.outer(ph, f[c][s])
            if step % check == 0:
                energy = self._energy()
                if not math.isfinite(energy):
                    raise NumericalInstability(step)
                peak = max(peak, energy)
                if progress is not None:
                    progress(step, energy, peak)
                if t_e > self.src_end and energy <= self.cfg.decay_threshold * peak:
                    converged = True
                    break
        elapsed = time.perf_counter() - t_start
        residual = energy / peak if peak > 0 else 0.0
        if not converged:
            log.warning("stopped at max steps (%d) with residual %.3g", step, residual)
        return self._result(e_src, j_src, step, converged, residual, elapsed)

    # -- output --------------------------------------------------------------
    def _result(self, e_src, j_src, steps, converged, residual, elapsed):
        omega = self.omega
        p = self.images * j_src * self.dV / (-1j * omega)
        nz = np.abs(p) > 0
        inv_p = np.zeros_like(p)
        inv_p[nz] = 1.0 / p[nz]
        power = -0.5 * np.real(np.conj(j_src) * e_src) * self.dV * self.images
        src_power = np.where(nz, power * np.abs(inv_p) ** 2, 0.0)
        monitors = {}
        g = self.grid
        for mon, faces in self.mon_meta:
            out = {}
            for face in faces:
                out[face["name"]] = self._face_data(mon, face, inv_p)
            split = mon.split_z_nm
            if split is None:
                # above all material, side-face flux can only head for the upper hemisphere
                split = self.src_pos[2] if g.structure_top is None else g.structure_top
            monitors[mon.name] = MonitorResult(mon.name, mon.kind, out, tuple(g.mirror), split)
        info = {"stride": self.stride, "source_node": tuple(i - 1 for i in self.src_node),
                "source_component": self.src_comp, "backend": self.k.__name__,
                "shape": self.shape, "cell_nm": tuple(g.cell)}
        return SimResult(self.wl.copy(), omega, src_power, monitors, steps, self.dt, converged,
                         residual, self.images, p, elapsed, g.host_index, info)

    def _face_data(self, mon, face, inv_p):
        g = self.grid
        normal = face["normal"]
        a1, a2 = [a for a in range(3) if a != normal]
        fields, coords = {}, {}
        for c, s in face["slices"].items():
            vals = face["acc"][c] * inv_p[:, None, None]
            cs = []
            for a in (a1, a2):
                base = g.coords(c, a)
                cs.append(base[s[a].start - 1: s[a].stop - 1])
            at = face["e_at"] if c[0] == "E" else face["h_at"]
            cn = float(g.coords(c, normal)[at])
            for pos, a in enumerate((a1, a2)):
                if a < 2 and g.mirror[a]:
                    par = _parity(c, a, self.mirror_kind[a])
                    vals, cs[pos] = _unfold(vals, cs[pos], pos + 1, par)
            fields[c] = vals
            coords[c] = (cs[0], cs[1], cn)
        index = None
        if normal == 2:
            k_e = face["e_at"]
            lo = max(k_e - 1, 0)
            hi = min(k_e + 2, self.shape[2])
            sl = []
            for a, c in enumerate(("Ex", "Ey")):
                s = face["slices"][c]
                sl.append(g.eps[a][s[0].start - 1: s[0].stop - 1, s[1].start - 1: s[1].stop - 1,
                                   lo:hi])
            vals = np.concatenate([v.ravel() for v in sl])
            if vals.size and np.ptp(vals) <= 1e-9 * vals.max() and (
                    g.pec is None or not any(p[..., lo:hi].any() for p in g.pec)):
                index = float(np.sqrt(vals[0]))
        return FaceData(face["name"], normal, face["sign"], fields, coords, tuple(g.cell),
                        self.wl.copy(), index)


def run(config, progress=None):
    """Run one FDTD simulation and return normalized frequency-domain results.

    Every returned quantity is normalized per unit dipole moment (C m) at each
    frequency, so the source amplitude cancels out.
    """
    return _Simulation(config).run(progress)
