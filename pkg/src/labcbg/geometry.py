"""Parametric labyrinth circular Bragg grating geometry and rasterization.

Lengths are in nanometres and angles in radians throughout. The vertical
coordinate ``z = 0`` is the bottom of the semiconductor (etched) block; layers
below it have negative z.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

MIN_ETCH_WIDTH_NM = 65.0
DEFAULT_BRIDGE_WIDTH_NM = 125.0
DEFAULT_NUM_RINGS = 6
DEFAULT_MAX_GRID_BYTES = 2 * 1024**3
# float64 fields, coefficients and bookkeeping per Yee cell
BYTES_PER_CELL = 8 * 16


class GeometryError(ValueError):
    pass


class GridTooLarge(GeometryError):
    def __init__(self, required, cap):
        self.required = required
        self.cap = cap
        super().__init__(
            f"grid needs ~{required / 2**20:.1f} MiB which exceeds the cap of "
            f"{cap / 2**20:.1f} MiB (set CBG_MAX_GRID_BYTES to raise it)"
        )


@dataclass(frozen=True)
class MaterialSpec:
    """Optical material at the design wavelength.

    ``metal`` marks an absorbing metal (the gold mirror); the Drude parameters
    are angular frequencies in rad/s and must be given exactly when ``metal``
    is set.
    """

    name: str
    refractive_index: float
    metal: bool = False
    plasma_frequency: Optional[float] = None
    collision_rate: Optional[float] = None

    def violations(self):
        out = []
        if not self.refractive_index > 0:
            out.append(f"material {self.name!r}: refractive index must be > 0")
        has_params = self.plasma_frequency is not None and self.collision_rate is not None
        some_params = self.plasma_frequency is not None or self.collision_rate is not None
        if self.metal and not has_params:
            out.append(f"material {self.name!r}: metal needs plasma frequency and collision rate")
        if not self.metal and some_params:
            out.append(f"material {self.name!r}: dispersion parameters given for a non-metal")
        return out

    def drude_index(self, wavelength_nm):
        """Complex refractive index of the Drude model (n + i kappa)."""
        omega = 2 * math.pi * 299792458.0 / (wavelength_nm * 1e-9)
        eps = 1 - self.plasma_frequency**2 / (omega**2 + 1j * self.collision_rate * omega)
        return np.sqrt(eps + 0j)


AIR = MaterialSpec("air", 1.0)
GOLD = MaterialSpec("gold", 0.2, metal=True, plasma_frequency=1.37e16, collision_rate=4.05e13)


@dataclass(frozen=True)
class Layer:
    material: MaterialSpec
    thickness: float
    etched: bool = False


@dataclass(frozen=True)
class LayerStack:
    """Planar layers ordered bottom to top.

    The etched block (the semiconductor, possibly split by a barrier) is the
    contiguous run of layers flagged ``etched``; if no layer is flagged the top
    layer is taken. ``dipole_offset`` is measured from the bottom of that block
    and defaults to its vertical centre.
    """

    layers: tuple
    dipole_offset: Optional[float] = None

    @classmethod
    def cbg(cls, semiconductor, t_sc, spacer=None, t_s=None, mirror=None,
            mirror_thickness=100.0, barrier=None, dipole_offset=None):
        """Gold / spacer / semiconductor stack.

        ``barrier`` is ``(material, thickness, t_b)``; the barrier is inserted
        ``t_b`` above the semiconductor bottom and ``t_sc`` is the total
        semiconductor thickness excluding the barrier.
        """
        layers = []
        if mirror is not None:
            layers.append(Layer(mirror, mirror_thickness))
        if spacer is not None:
            layers.append(Layer(spacer, t_s))
        if barrier is None:
            layers.append(Layer(semiconductor, t_sc, etched=True))
        else:
            bmat, bthick, t_b = barrier
            layers += [
                Layer(semiconductor, t_b, etched=True),
                Layer(bmat, bthick, etched=True),
                Layer(semiconductor, t_sc - t_b, etched=True),
            ]
        return cls(tuple(layers), dipole_offset)

    def _etched_range(self):
        flags = [l.etched for l in self.layers]
        if not any(flags):
            return len(self.layers) - 1, len(self.layers)
        first = flags.index(True)
        last = len(flags) - flags[::-1].index(True)
        return first, last

    def bounds(self):
        """List of ``(layer, z_bottom, z_top)`` with z = 0 at the semiconductor bottom."""
        first, _ = self._etched_range()
        z = -sum(l.thickness for l in self.layers[:first])
        out = []
        for layer in self.layers:
            out.append((layer, z, z + layer.thickness))
            z += layer.thickness
        return out

    @property
    def semiconductor_thickness(self):
        first, last = self._etched_range()
        return sum(l.thickness for l in self.layers[first:last])

    @property
    def semiconductor(self):
        first, last = self._etched_range()
        return self.layers[first].material

    @property
    def barrier(self):
        first, last = self._etched_range()
        if last - first == 3:
            return self.layers[first + 1]
        return None

    @property
    def spacer(self):
        first, _ = self._etched_range()
        if first > 0 and not self.layers[first - 1].material.metal:
            return self.layers[first - 1]
        return None

    @property
    def mirror(self):
        for layer in self.layers:
            if layer.material.metal:
                return layer
        return None

    @property
    def dipole_z(self):
        if self.dipole_offset is None:
            return self.semiconductor_thickness / 2
        return self.dipole_offset

    @property
    def top(self):
        return self.bounds()[-1][2]

    @property
    def bottom(self):
        return self.bounds()[0][1]

    @property
    def max_index(self):
        return max(l.material.refractive_index for l in self.layers if not l.material.metal)

    def index_at(self, z):
        for layer, lo, hi in self.bounds():
            if lo <= z <= hi:
                return layer.material.refractive_index
        return 1.0

    def violations(self):
        out = []
        for layer in self.layers:
            if not layer.thickness > 0:
                out.append(f"layer {layer.material.name!r}: thickness must be > 0")
            out.extend(layer.material.violations())
        first, last = self._etched_range()
        if any(l.material.metal for l in self.layers[first:last]):
            out.append("etched block may not contain metal")
        t = self.semiconductor_thickness
        if not 0 < self.dipole_z < t:
            out.append(f"dipole offset {self.dipole_z} nm outside semiconductor (0, {t}) nm")
        return out

    def with_thicknesses(self, t_sc=None, t_s=None):
        """Copy with a new semiconductor and/or spacer thickness.

        For a barrier stack the change in ``t_sc`` is applied to the top
        semiconductor layer so the emitter keeps its distance to the barrier.
        An explicit dipole offset is kept; the default one follows the centre.
        """
        layers = list(self.layers)
        first, last = self._etched_range()
        if t_sc is not None:
            delta = t_sc - self.semiconductor_thickness
            top = last - 1
            layers[top] = dataclasses.replace(layers[top], thickness=layers[top].thickness + delta)
        if t_s is not None:
            if self.spacer is None:
                raise GeometryError("stack has no spacer layer")
            layers[first - 1] = dataclasses.replace(layers[first - 1], thickness=t_s)
        return dataclasses.replace(self, layers=tuple(layers))

    def suspended(self):
        """The etched block alone, surrounded by air."""
        first, last = self._etched_range()
        return dataclasses.replace(self, layers=self.layers[first:last])


@dataclass(frozen=True)
class CbgDesign:
    """One labyrinth CBG device.

    ``etch_width`` is the trench width (called E or W interchangeably).
    """

    inner_radius: float
    grating_period: float
    etch_width: float
    stack: LayerStack
    target_wavelength: float
    num_rings: int = DEFAULT_NUM_RINGS
    bridge_width: float = DEFAULT_BRIDGE_WIDTH_NM
    bridge_count: int = 4
    bridge_angles: Optional[tuple] = None

    @property
    def angles(self):
        if self.bridge_angles is not None:
            return tuple(self.bridge_angles)
        return tuple(2 * math.pi * k / self.bridge_count for k in range(self.bridge_count))

    @property
    def outer_radius(self):
        if self.num_rings == 0:
            return 0.0
        return ring_annuli(self)[-1][1]

    @property
    def t_sc(self):
        return self.stack.semiconductor_thickness

    @property
    def t_s(self):
        spacer = self.stack.spacer
        return None if spacer is None else spacer.thickness

    def with_params(self, R=None, P=None, W=None, t_sc=None, t_s=None, **kw):
        changes = dict(kw)
        if R is not None:
            changes["inner_radius"] = float(R)
        if P is not None:
            changes["grating_period"] = float(P)
        if W is not None:
            changes["etch_width"] = float(W)
        stack = self.stack
        if t_sc is not None or t_s is not None:
            stack = stack.with_thicknesses(t_sc=t_sc, t_s=t_s)
        changes["stack"] = stack
        return dataclasses.replace(self, **changes)

    def suspended(self):
        return dataclasses.replace(self, stack=self.stack.suspended())

    def is_mirror_symmetric(self, tol=1e-9):
        """True if the bridge set is invariant under x -> -x and y -> -y."""
        angs = [a % (2 * math.pi) for a in self.angles]

        def contains(a):
            a %= 2 * math.pi
            return any(min(abs(a - b), 2 * math.pi - abs(a - b)) < tol for b in angs)

        return all(contains(math.pi - a) and contains(-a) for a in angs)


def ring_annuli(design):
    """Inner and outer radius of every etched ring, innermost first."""
    R, P, W = design.inner_radius, design.grating_period, design.etch_width
    return [(R + (n - 1) * P - W / 2, R + (n - 1) * P + W / 2)
            for n in range(1, design.num_rings + 1)]


def validate(design):
    """Return every violated design invariant; an empty list means valid."""
    out = []
    W, P, R = design.etch_width, design.grating_period, design.inner_radius
    if W < MIN_ETCH_WIDTH_NM:
        out.append(f"etch width below {MIN_ETCH_WIDTH_NM:g} nm minimum")
    if W >= P:
        out.append("etch width >= period (annuli overlap)")
    if not R > W / 2:
        out.append("inner radius must exceed half the etch width")
    if not design.bridge_width > 0:
        out.append("bridge width must be > 0")
    if design.num_rings < 0:
        out.append("number of rings must be >= 0")
    if design.bridge_count < 0:
        out.append("bridge count must be >= 0")
    if design.bridge_angles is not None and len(design.bridge_angles) != design.bridge_count:
        out.append("bridge_angles length differs from bridge_count")
    if not design.target_wavelength > 0:
        out.append("target wavelength must be > 0")
    out.extend(design.stack.violations())
    return out


def semiconductor_present(design, x, y):
    """Boolean array: True where the etched layer keeps its material."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    present = np.ones(np.broadcast(x, y).shape, dtype=bool)
    if design.num_rings == 0:
        return present
    r = np.hypot(x, y)
    R, P, W = design.inner_radius, design.grating_period, design.etch_width
    n = np.clip(np.rint((r - R) / P), 0, design.num_rings - 1)
    etched = np.abs(r - (R + n * P)) <= W / 2
    half = design.bridge_width / 2
    for a in design.angles:
        ca, sa = math.cos(a), math.sin(a)
        along = x * ca + y * sa
        across = -x * sa + y * ca
        etched &= ~((along > 0) & (np.abs(across) <= half))
    return ~etched


def plane_axis(half_width, resolution):
    """Odd-length cell-centre coordinates covering [-half_width, half_width]."""
    m = int(math.ceil(half_width / resolution))
    return np.arange(-m, m + 1) * resolution


def etched_plane_mask(design, resolution, half_width=None):
    """Rasterize the etched layer on a square grid of cell centres.

    Returns a 2-D boolean array (True = semiconductor) indexed ``[ix, iy]``
    with odd size; the centre cell sits on the device axis. The default extent
    is the outermost ring radius plus one grating period.
    """
    if resolution > design.bridge_width / 2:
        raise GeometryError(
            f"bridge unresolvable: resolution {resolution} nm > bridge_width/2 "
            f"= {design.bridge_width / 2} nm"
        )
    if half_width is None:
        half_width = design.outer_radius + design.grating_period
    ax = plane_axis(half_width, resolution)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return semiconductor_present(design, X, Y)


def is_electrically_connected(mask):
    """True if a 4-connected path of True cells joins the centre to the border."""
    mask = np.asarray(mask, dtype=bool)
    cx, cy = mask.shape[0] // 2, mask.shape[1] // 2
    if not mask[cx, cy]:
        return False
    labels, _ = ndimage.label(mask)  # default structure is 4-connectivity in 2-D
    lab = labels[cx, cy]
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    return bool(np.any(border == lab))


def _strip_area(r, h):
    # area of {along > 0, |across| <= h, radius < r}
    if r <= h:
        return math.pi * r * r / 2
    return h * math.sqrt(r * r - h * h) + r * r * math.asin(h / r)


def etched_area(design):
    """Exact etched area in nm^2 (bridges assumed not to overlap inside rings)."""
    h = design.bridge_width / 2
    area = 0.0
    for ri, ro in ring_annuli(design):
        ring = math.pi * (ro * ro - ri * ri)
        bridges = design.bridge_count * (_strip_area(ro, h) - _strip_area(ri, h))
        area += ring - bridges
    return area


def write_pgm(path, mask):
    """Write a mask as a binary 8-bit PGM (255 = semiconductor), y up."""
    img = np.where(np.asarray(mask).T[::-1], 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise GeometryError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    img = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return img[::-1].T == 255


# ---------------------------------------------------------------------------
# Rasterization


@dataclass(frozen=True)
class GridSpec:
    """How to discretize a design.

    ``cell`` is the Yee cell size in nm (scalar or 3-tuple). Padding is the air
    (or continued layer) distance between the structure and the absorbing
    margin of ``pml_cells`` cells. With ``symmetric`` the domain covers only
    the x >= 0, y >= 0 quadrant. ``trim_pec`` ends the domain just inside a
    PEC mirror instead of padding below it.
    """

    cell: object = 20.0
    lateral_padding: float = 300.0
    top_padding: float = 400.0
    bottom_padding: float = 400.0
    pml_cells: int = 10
    symmetric: bool = False
    dipole_axis: str = "x"
    metal_model: str = "pec"
    supersample: int = 6
    trim_pec: bool = False
    z_range: Optional[tuple] = None
    half_width: Optional[float] = None
    max_bytes: Optional[int] = None

    @property
    def cells(self):
        c = self.cell
        if np.ndim(c) == 0:
            return (float(c),) * 3
        return tuple(float(v) for v in c)


@dataclass
class PermittivityGrid:
    """Relative permittivity sampled at the Yee E-field locations.

    Node ``(i, j, k)`` sits at ``origin + (i, j, k) * cell``; Ex samples are
    offset by half a cell in x, Ey in y, Ez in z. Arrays are indexed
    ``[i, j, k]`` and all have ``shape``. ``pec`` and ``drude`` hold boolean
    masks per component (or None). ``mirror`` flags symmetry planes on the
    low-x / low-y faces. ``absorber`` is the absorbing margin per face in cells
    (xlo, xhi, ylo, yhi, zlo, zhi).
    """

    cell: tuple
    shape: tuple
    origin: tuple
    eps: tuple
    pec: Optional[tuple] = None
    drude: Optional[tuple] = None
    drude_params: Optional[tuple] = None
    mirror: tuple = (False, False)
    absorber: tuple = (0, 0, 0, 0, 0, 0)
    dipole_node: Optional[tuple] = None
    dipole_axis: str = "x"
    structure_top: Optional[float] = None
    structure_bottom: Optional[float] = None
    host_index: float = 1.0
    meta: dict = field(default_factory=dict)

    def coords(self, comp, axis):
        """Sample coordinates (nm) along ``axis`` for field component ``comp``."""
        n = self.shape[axis]
        offset = 0.5 if "xyz"[axis] == comp[-1] and comp[0] == "E" else 0.0
        if comp[0] == "H":
            offset = 0.0 if "xyz"[axis] == comp[-1] else 0.5
        return self.origin[axis] + (np.arange(n) + offset) * self.cell[axis]

    @property
    def ncells(self):
        return int(np.prod(self.shape))

    @property
    def nbytes_estimate(self):
        return self.ncells * BYTES_PER_CELL

    @classmethod
    def uniform(cls, shape, cell, index=1.0, origin=None, absorber=10, mirror=(False, False),
                dipole_axis="x"):
        """Homogeneous grid, mostly for solver tests."""
        cell = (float(cell),) * 3 if np.ndim(cell) == 0 else tuple(map(float, cell))
        shape = tuple(int(s) for s in shape)
        if origin is None:
            origin = tuple(-(s // 2) * c for s, c in zip(shape, cell))
        eps = tuple(np.full(shape, float(index) ** 2) for _ in range(3))
        a = absorber
        absorb = (0 if mirror[0] else a, a, 0 if mirror[1] else a, a, a, a)
        return cls(cell, shape, tuple(origin), eps, mirror=tuple(mirror), absorber=absorb,
                   host_index=float(index), dipole_axis=dipole_axis)

    def node_index(self, point, comp):
        """Nearest sample index of component ``comp`` to ``point`` (nm)."""
        idx = []
        for axis in range(3):
            c = self.coords(comp, axis)
            idx.append(int(np.argmin(np.abs(c - point[axis]))))
        return tuple(idx)

    def add_pec_halfspace(self, z_top):
        """Make every E sample with z <= z_top a perfect conductor."""
        masks = []
        for a, comp in enumerate(("Ex", "Ey", "Ez")):
            z = self.coords(comp, 2)
            m = np.zeros(self.shape, dtype=bool)
            m[:, :, z <= z_top + 1e-9 * self.cell[2]] = True
            if self.pec is not None:
                m |= self.pec[a]
            masks.append(m)
        self.pec = tuple(masks)
        self.structure_top = z_top if self.structure_top is None else max(self.structure_top, z_top)
        return self


def _z_overlap(zc, dz, lo, hi):
    a = np.maximum(zc - dz / 2, lo)
    b = np.minimum(zc + dz / 2, hi)
    return np.clip(b - a, 0.0, None) / dz


def _fill_fraction(design, xs, ys, dx, dy, s):
    """Semiconductor area fraction of the dx*dy box around each (xs, ys) pair."""
    fill = np.ones((xs.size, ys.size))
    if design.num_rings == 0:
        return fill
    reach = design.outer_radius + math.hypot(dx, dy)
    ix = np.nonzero(np.abs(xs) <= reach)[0]
    iy = np.nonzero(np.abs(ys) <= reach)[0]
    if ix.size == 0 or iy.size == 0:
        return fill
    off = ((np.arange(s) + 0.5) / s - 0.5)
    sx = xs[ix][:, None] + off[None, :] * dx  # (nx, s)
    sy = ys[iy][:, None] + off[None, :] * dy
    X = sx[:, None, :, None]
    Y = sy[None, :, None, :]
    present = semiconductor_present(design, X, Y)
    fill[np.ix_(ix, iy)] = present.mean(axis=(2, 3))
    return fill


def rasterize(design, spec=GridSpec()):
    """Discretize ``design`` into a :class:`PermittivityGrid`.

    In-plane, each sample's permittivity is the area average over its Yee cell
    (supersampled); vertically the layer overlap is computed exactly. The
    grid is aligned so the dipole sits exactly on a field sample of the chosen
    orientation.
    """
    problems = validate(design)
    if problems:
        raise GeometryError("invalid design: " + "; ".join(problems))
    if spec.symmetric and not design.is_mirror_symmetric():
        raise GeometryError("symmetric grid requested for a design without mirror symmetry")
    dx, dy, dz = spec.cells
    axis = spec.dipole_axis
    stack = design.stack
    bounds = stack.bounds()
    zd = stack.dipole_z

    metal = stack.mirror
    pec_top = None
    metal_lo = metal_hi = None
    for layer, lo, hi in bounds:
        if layer.material.metal:
            metal_lo, metal_hi = lo, hi
    if metal is not None and spec.metal_model == "pec":
        pec_top = metal_hi

    pml = spec.pml_cells
    if spec.z_range is not None:
        z_lo, z_hi = spec.z_range
        pml_lo = pml_hi = 0
    else:
        z_hi = stack.top + spec.top_padding + pml * dz
        pml_hi = pml
        if pec_top is not None and spec.trim_pec:
            z_lo = pec_top - 2 * dz
            pml_lo = 0
        else:
            z_lo = stack.bottom - spec.bottom_padding - pml * dz
            pml_lo = pml

    half = spec.half_width
    if half is None:
        half = design.outer_radius + spec.lateral_padding + pml * max(dx, dy)

    # node layout: dipole exactly on its component sample
    zoff = 0.5 if axis == "z" else 0.0
    kd = int(math.ceil((zd - z_lo) / dz - zoff))
    nz = kd + int(math.ceil((z_hi - zd) / dz + zoff)) + 1
    z0 = zd - (kd + zoff) * dz

    def lateral(d, shifted):
        if spec.symmetric:
            return int(math.ceil(half / d)) + 1, 0.0, 0
        c = int(math.ceil(half / d))
        if shifted:
            return 2 * c + 2, -(c + 0.5) * d, c
        return 2 * c + 1, -c * d, c

    nx, x0, ic = lateral(dx, axis == "x")
    ny, y0, jc = lateral(dy, axis == "y")
    shape = (nx, ny, nz)
    cap = spec.max_bytes or int(os.environ.get("CBG_MAX_GRID_BYTES", DEFAULT_MAX_GRID_BYTES))
    required = int(np.prod(shape)) * BYTES_PER_CELL
    if required > cap:
        raise GridTooLarge(required, cap)

    grid = PermittivityGrid(
        cell=(dx, dy, dz), shape=shape, origin=(x0, y0, z0), eps=(None, None, None),
        mirror=(spec.symmetric, spec.symmetric),
        absorber=(0 if spec.symmetric else pml, pml, 0 if spec.symmetric else pml, pml,
                  pml_lo, pml_hi),
        dipole_node=(ic, jc, kd), dipole_axis=axis,
        structure_top=stack.top, structure_bottom=stack.bottom,
        host_index=stack.index_at(zd),
    )

    eps, pec, drude = [], [], []
    for comp in ("Ex", "Ey", "Ez"):
        xs, ys, zs = (grid.coords(comp, a) for a in range(3))
        fill = _fill_fraction(design, xs, ys, dx, dy, spec.supersample)
        base = np.zeros(nz)
        etch = np.zeros(nz)
        covered = np.zeros(nz)
        metal_frac = np.zeros(nz)
        for layer, lo, hi in bounds:
            fz = _z_overlap(zs, dz, lo, hi)
            n2 = layer.material.refractive_index ** 2
            if layer.material.metal:
                metal_frac += fz
                continue
            covered += fz
            if layer.etched and design.num_rings > 0:
                base += fz
                etch += fz * (n2 - 1.0)
            else:
                base += fz * n2
        air = np.clip(1.0 - covered - metal_frac, 0.0, None)
        # metal share is assigned to the neighbouring dielectric mix
        norm = np.where(covered + air > 0, 1.0 / np.maximum(covered + air, 1e-300), 1.0)
        A = (base + air) * norm
        B = etch * norm
        e = A[None, None, :] + B[None, None, :] * fill[:, :, None]
        inside_metal = np.zeros(nz, dtype=bool)
        if metal_lo is not None:
            tol = 1e-9 * dz
            inside_metal = (zs >= metal_lo - tol) & (zs <= metal_hi + tol)
        m3 = np.zeros(shape, dtype=bool)
        m3[:, :, inside_metal] = True
        if spec.metal_model == "pec":
            if spec.trim_pec and pec_top is not None:
                m3[:, :, zs <= pec_top + 1e-9 * dz] = True
            pec.append(m3)
            e[:, :, inside_metal] = 1.0
        else:
            drude.append(m3)
            e[:, :, inside_metal] = 1.0
        eps.append(np.ascontiguousarray(e))

    grid.eps = tuple(eps)
    if metal is not None:
        if spec.metal_model == "pec":
            grid.pec = tuple(pec)
        elif spec.metal_model == "drude":
            grid.drude = tuple(drude)
            grid.drude_params = (metal.material.plasma_frequency, metal.material.collision_rate)
        else:
            raise GeometryError(f"unknown metal model {spec.metal_model!r}")
    return grid


# ---------------------------------------------------------------------------
# JSON design files


def design_to_dict(design):
    layers = []
    for layer in design.stack.layers:
        m = layer.material
        d = {"material": m.name, "n": m.refractive_index, "thickness_nm": layer.thickness}
        if layer.etched:
            d["etched"] = True
        if m.metal:
            d["metal"] = True
            d["plasma_frequency_rad_s"] = m.plasma_frequency
            d["collision_rate_rad_s"] = m.collision_rate
        layers.append(d)
    out = {
        "inner_radius_nm": design.inner_radius,
        "grating_period_nm": design.grating_period,
        "etch_width_nm": design.etch_width,
        "num_rings": design.num_rings,
        "bridge_width_nm": design.bridge_width,
        "bridge_count": design.bridge_count,
        "layers": layers,
        "dipole_offset_nm": design.stack.dipole_offset,
        "target_wavelength_nm": design.target_wavelength,
    }
    if design.bridge_angles is not None:
        out["bridge_angles_rad"] = list(design.bridge_angles)
    return out


_DESIGN_KEYS = {"inner_radius_nm", "grating_period_nm", "etch_width_nm", "num_rings",
                "bridge_width_nm", "bridge_count", "bridge_angles_rad", "layers",
                "dipole_offset_nm", "target_wavelength_nm"}


def design_from_dict(d):
    unknown = sorted(set(d) - _DESIGN_KEYS)
    if unknown:
        raise GeometryError(f"unknown design keys: {', '.join(unknown)}")
    try:
        layers = []
        for item in d["layers"]:
            mat = MaterialSpec(
                item["material"], float(item["n"]), bool(item.get("metal", False)),
                item.get("plasma_frequency_rad_s"), item.get("collision_rate_rad_s"),
            )
            layers.append(Layer(mat, float(item["thickness_nm"]), bool(item.get("etched", False))))
        stack = LayerStack(tuple(layers), d.get("dipole_offset_nm"))
        angles = d.get("bridge_angles_rad")
        return CbgDesign(
            inner_radius=float(d["inner_radius_nm"]),
            grating_period=float(d["grating_period_nm"]),
            etch_width=float(d["etch_width_nm"]),
            stack=stack,
            target_wavelength=float(d["target_wavelength_nm"]),
            num_rings=int(d.get("num_rings", DEFAULT_NUM_RINGS)),
            bridge_width=float(d.get("bridge_width_nm", DEFAULT_BRIDGE_WIDTH_NM)),
            bridge_count=int(d.get("bridge_count", 4)),
            bridge_angles=None if angles is None else tuple(angles),
        )
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"malformed design file: {exc}") from exc


def load_design(path):
    with open(path) as fh:
        return design_from_dict(json.load(fh))


def save_design(design, path):
    with open(path, "w") as fh:
        json.dump(design_to_dict(design), fh, indent=2)


# ---------------------------------------------------------------------------
# Built-in designs

AL2O3 = {780: 1.627, 930: 1.62, 1550: 1.617}
_SEMI = {780: ("AlGaAs", 3.35), 930: ("GaAs", 3.52), 1550: ("InAlGaAs", 3.3)}
_TABLE = {780: (362, 313, 68, 124, 172), 930: (405, 357, 80, 153, 200),
          1550: (725, 649, 146, 258, 328)}
PRESETS = ("cbg780", "cbg930", "cbg1550", "cbg930-barrier")


def preset(name, num_rings=DEFAULT_NUM_RINGS, gold_thickness=100.0):
    """Published device parameters for the three wavelengths and the barrier variant."""
    if name == "cbg930-barrier":
        semi = MaterialSpec("GaAs", 3.52)
        barrier = MaterialSpec("AlGaAs-barrier", 3.01)
        t_b, t_bar, t_t = 50.0, 18.0, 83.0
        stack = LayerStack.cbg(semi, t_b + t_t, MaterialSpec("Al2O3", AL2O3[930]), 200.0, GOLD,
                               gold_thickness, barrier=(barrier, t_bar, t_b),
                               dipole_offset=t_b + t_bar + 9.0)
        return CbgDesign(750.0, 370.0, 75.0, stack, 930.0, num_rings=num_rings)
    try:
        wl = int(name.removeprefix("cbg"))
        R, P, W, t_sc, t_s = _TABLE[wl]
    except (ValueError, KeyError):
        raise GeometryError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    mat, n = _SEMI[wl]
    stack = LayerStack.cbg(MaterialSpec(mat, n), float(t_sc),
                           MaterialSpec("Al2O3", AL2O3[wl]), float(t_s), GOLD, gold_thickness)
    return CbgDesign(float(R), float(P), float(W), stack, float(wl), num_rings=num_rings)
