"""Figures of merit derived from FDTD monitor data.

Covers the Purcell spectrum, upward emission fraction, the near-to-far
transform of the top monitor plane, NA-cone fractions, Gaussian-mode overlap
and the combined collection metrics.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import constants
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .oracles import bulk_dipole_power

log = logging.getLogger(__name__)

ETA0 = constants.mu_0 * constants.c
NM = 1e-9
CLAMP_TOL = 1e-3
DEFAULT_NA = (0.4, 0.7, 1.0)


class AnalysisError(ValueError):
    pass


class NoPeakError(AnalysisError):
    pass


@dataclass
class Spectrum:
    wavelengths_nm: np.ndarray
    values: np.ndarray
    label: str = ""
    trusted: bool = True

    def __post_init__(self):
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.wavelengths_nm.shape != self.values.shape:
            raise AnalysisError("wavelength and value arrays differ in shape")
        if np.any(np.diff(self.wavelengths_nm) <= 0):
            raise AnalysisError("wavelengths must be strictly increasing")

    def at(self, wavelength_nm):
        return float(np.interp(wavelength_nm, self.wavelengths_nm, self.values))


def _freq_index(result_wl, wavelength_nm):
    wl = np.asarray(result_wl)
    i = int(np.argmin(np.abs(wl - wavelength_nm)))
    if abs(wl[i] - wavelength_nm) > 1e-6 * wavelength_nm:
        raise AnalysisError(f"wavelength {wavelength_nm} nm was not monitored")
    return i


def purcell_spectrum(result, n=None):
    """Source power over the bulk-medium dipole power at each wavelength.

    ``n`` defaults to the index of the material hosting the dipole.
    """
    n = result.host_index if n is None else n
    ref = bulk_dipole_power(n, result.wavelengths_nm)
    spec = Spectrum(result.wavelengths_nm, result.source_power / ref, "purcell",
                    trusted=bool(result.converged))
    if not result.converged:
        log.warning("run did not converge; Purcell spectrum is untrusted")
    return spec


def _clamp_fraction(values, label):
    values = np.asarray(values, dtype=float)
    bad = (values < -CLAMP_TOL) | (values > 1 + CLAMP_TOL)
    if np.any(bad):
        log.warning("%s outside [0, 1] beyond tolerance: %s", label, values[bad])
    return np.clip(values, 0.0, 1.0), not np.any(bad)


def upward_fraction(result, wavelength_nm=None, monitor="box"):
    """Share of the box flux leaving upward.

    Upward flux is the top face plus the side-face portion above the
    monitor's split height. Returns a :class:`Spectrum` or, when a wavelength
    is given, a float.
    """
    fl = result.fluxes(monitor)
    total, up = fl["total"], fl["up"]
    if np.any(total <= 0):
        raise AnalysisError("non-positive total box flux (degenerate run)")
    frac, ok = _clamp_fraction(up / total, "upward fraction")
    if wavelength_nm is not None:
        return float(frac[_freq_index(result.wavelengths_nm, wavelength_nm)])
    return Spectrum(result.wavelengths_nm, frac, "e_up", trusted=ok and result.converged)


# ---------------------------------------------------------------------------
# far field


@dataclass
class FarField:
    """Complex far field on the upper hemisphere at radius 1 m.

    ``e_theta``/``e_phi`` have shape (len(theta), len(phi)); ``phi`` is a
    uniform periodic grid over [0, 2 pi). The common phase factor exp(ikr) is
    dropped.
    """

    theta: np.ndarray
    phi: np.ndarray
    e_theta: np.ndarray
    e_phi: np.ndarray
    wavelength_nm: float
    index: float = 1.0

    @property
    def eta(self):
        return ETA0 / self.index

    def intensity(self):
        return np.abs(self.e_theta) ** 2 + np.abs(self.e_phi) ** 2

    def _theta_profile(self):
        dphi = 2 * np.pi / len(self.phi)
        return np.sin(self.theta) * self.intensity().sum(axis=1) * dphi

    def power(self, theta_max=None):
        """Radiated power (W per unit dipole moment squared) within theta_max."""
        g = self._theta_profile() / (2 * self.eta)
        spline = CubicSpline(self.theta, g)
        hi = self.theta[-1] if theta_max is None else theta_max
        return float(spline.integrate(self.theta[0], hi))


def default_angles(n_theta=91, n_phi=180):
    theta = np.linspace(0.0, np.pi / 2, n_theta)
    phi = np.arange(n_phi) * (2 * np.pi / n_phi)
    return theta, phi


def _surface_currents(plane, i):
    """(value, x, y, z) for Jx, Jy, Mx, My sampled where the fields live."""
    f, c = plane.fields, plane.coords
    return {
        "Jx": (-f["Hy"][i], c["Hy"]),
        "Jy": (f["Hx"][i], c["Hx"]),
        "Mx": (f["Ey"][i], c["Ey"]),
        "My": (-f["Ex"][i], c["Ex"]),
    }


def _radiation_integrals(currents, k, u, v, w, dA, method, n_uv):
    """Fourier integrals of each current at transverse wavenumbers (u, v)."""
    out = {}
    if method == "direct":
        for name, (val, (x, y, z)) in currents.items():
            xs, ys = x * NM, y * NM
            ex = np.exp(-1j * np.multiply.outer(u, xs))  # (A, nx)
            ey = np.exp(-1j * np.multiply.outer(v, ys))  # (A, ny)
            t = np.einsum("ax,xy->ay", ex, val)
            out[name] = np.einsum("ay,ay->a", t, ey) * dA * np.exp(-1j * w * z * NM)
        return out
    grid = np.linspace(-k, k, n_uv)
    for name, (val, (x, y, z)) in currents.items():
        xs, ys = x * NM, y * NM
        ex = np.exp(-1j * np.multiply.outer(grid, xs))
        ey = np.exp(-1j * np.multiply.outer(grid, ys))
        spec = ex @ val @ ey.T * dA  # (n_uv, n_uv) over (u, v)
        re = RectBivariateSpline(grid, grid, spec.real, kx=3, ky=3)
        im = RectBivariateSpline(grid, grid, spec.imag, kx=3, ky=3)
        vals = re.ev(u, v) + 1j * im.ev(u, v)
        out[name] = vals * np.exp(-1j * w * z * NM)
    return out


def near_to_far(plane, wavelength_nm, theta=None, phi=None, method="spline", n_uv=None):
    """Project the top-plane DFT fields to the far field at 1 m.

    Equivalent currents J = z x H and M = -z x E radiate into the homogeneous
    half space above the plane. The plane must lie in a uniform medium.
    ``method="direct"`` sums the radiation integrals at every angle; the
    default evaluates them on a transverse-wavenumber grid and interpolates.
    """
    if plane.index is None:
        raise AnalysisError("monitor plane is not in a homogeneous region")
    if plane.normal != 2:
        raise AnalysisError("near-to-far needs a z-normal plane")
    if theta is None or phi is None:
        t0, p0 = default_angles()
        theta = t0 if theta is None else theta
        phi = p0 if phi is None else phi
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    i = _freq_index(plane.wavelengths_nm, wavelength_nm)
    n = plane.index
    k = 2 * np.pi * n / (wavelength_nm * NM)
    eta = ETA0 / n
    T, P = np.meshgrid(theta, phi, indexing="ij")
    st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
    u = (k * st * cp).ravel()
    v = (k * st * sp).ravel()
    w = (k * ct).ravel()
    dA = plane.cell[0] * plane.cell[1] * NM * NM
    if n_uv is None:
        ext = max(np.ptp(plane.coords["Ex"][0]), np.ptp(plane.coords["Ex"][1])) * NM
        n_uv = int(min(1025, max(129, 16 * ext * k / (2 * np.pi) + 1)))
    rad = _radiation_integrals(_surface_currents(plane, i), k, u, v, w, dA, method, n_uv)
    shape = T.shape
    Nx, Ny, Lx, Ly = (rad[c].reshape(shape) for c in ("Jx", "Jy", "Mx", "My"))
    n_th = Nx * ct * cp + Ny * ct * sp
    n_ph = -Nx * sp + Ny * cp
    l_th = Lx * ct * cp + Ly * ct * sp
    l_ph = -Lx * sp + Ly * cp
    pref = 1j * k / (4 * np.pi)
    e_th = pref * (eta * n_th + l_ph)
    e_ph = pref * (eta * n_ph - l_th)
    return FarField(theta, phi, e_th, e_ph, float(wavelength_nm), n)


def na_fraction(ff, na):
    """Fraction of the hemisphere far-field power inside sin(theta) <= NA."""
    if not 0 < na <= 1:
        raise AnalysisError("NA must lie in (0, 1]")
    total = ff.power()
    if total <= 0:
        raise AnalysisError("zero far field")
    if na >= 1:
        return 1.0
    return ff.power(math.asin(na)) / total


def gaussian_mode(ff, waist_nm, axis="x"):
    """Linearly polarized fundamental Gaussian on the far-field sphere."""
    lam = ff.wavelength_nm / ff.index
    theta_d = lam / (math.pi * waist_nm)
    T, P = np.meshgrid(ff.theta, ff.phi, indexing="ij")
    env = np.exp(-(np.sin(T) ** 2) / theta_d**2)
    if axis == "x":
        return env * np.cos(T) * np.cos(P), -env * np.sin(P)
    if axis == "y":
        return env * np.cos(T) * np.sin(P), env * np.cos(P)
    raise AnalysisError(f"unsupported polarization {axis!r}")


def _sphere_weights(ff):
    th = ff.theta
    wt = np.zeros_like(th)
    d = np.diff(th)
    wt[:-1] += d / 2
    wt[1:] += d / 2
    return (wt * np.sin(th))[:, None] * (2 * np.pi / len(ff.phi))


def _overlap(ff, gt, gp, w):
    num = np.sum(w * (np.conj(gt) * ff.e_theta + np.conj(gp) * ff.e_phi))
    a = np.sum(w * (np.abs(ff.e_theta) ** 2 + np.abs(ff.e_phi) ** 2))
    b = np.sum(w * (np.abs(gt) ** 2 + np.abs(gp) ** 2))
    if a <= 0:
        raise AnalysisError("zero far field")
    if b <= 0:
        return 0.0
    return float(min(1.0, abs(num) ** 2 / (a * b)))


def gaussian_overlap(ff, waist_nm=None, axis="x", tol=1e-4):
    """Best overlap with an on-axis Gaussian mode and the waist achieving it.

    With ``waist_nm`` given the search is skipped. Otherwise a golden-section
    search in log-waist runs over [lambda/4, 50 lambda].
    """
    w = _sphere_weights(ff)

    def value(waist):
        gt, gp = gaussian_mode(ff, waist, axis)
        return _overlap(ff, gt, gp, w)

    if waist_nm is not None:
        return value(waist_nm), float(waist_nm)
    lam = ff.wavelength_nm / ff.index
    a, b = math.log(lam / 4), math.log(50 * lam)
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = value(math.exp(c)), value(math.exp(d))
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = value(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = value(math.exp(d))
    best = math.exp((a + b) / 2)
    return value(best), best


def collection_efficiency(result, wavelength_nm, na, monitor="box", ff=None):
    """Upward fraction times the far-field share inside the NA cone."""
    e_up = upward_fraction(result, wavelength_nm, monitor)
    if e_up == 0:
        return 0.0
    if ff is None:
        ff = near_to_far(result.top_plane(monitor), wavelength_nm)
    return e_up * na_fraction(ff, na)


def resonance_peak(spectrum):
    """Wavelength of the spectral maximum refined by a three-point parabola."""
    wl, y = spectrum.wavelengths_nm, spectrum.values
    if wl.size < 3:
        raise AnalysisError("need at least 3 samples")
    i = int(np.argmax(y))
    if np.ptp(y) <= 1e-12 * max(1.0, abs(y).max()) or i == 0 or i == y.size - 1:
        raise NoPeakError("no peak")
    x0, x1, x2 = wl[i - 1: i + 2]
    y0, y1, y2 = y[i - 1: i + 2]
    num = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    if den == 0:
        return float(x1)
    return float(x1 - 0.5 * num / den)


def _parabola_value(spectrum, x):
    wl, y = spectrum.wavelengths_nm, spectrum.values
    i = int(np.argmax(y))
    coef = np.polyfit(wl[i - 1: i + 2] - wl[i], y[i - 1: i + 2], 2)
    return float(np.polyval(coef, x - wl[i]))


# ---------------------------------------------------------------------------
# aggregate metrics


@dataclass
class EmissionMetrics:
    """Figures of merit for one simulated design.

    Spectral fields may be None for metrics that come from a surrogate model.
    ``purcell_at_resonance`` and ``c_cost`` (the cost term
    E_up * O_ff * NA_0.7) are evaluated at ``resonance_nm``.
    """

    resonance_nm: float
    target_nm: float
    purcell_at_resonance: float
    c_cost: float
    e_up_at_resonance: float = float("nan")
    o_ff_at_resonance: float = float("nan")
    na07_at_resonance: float = float("nan")
    purcell: Optional[Spectrum] = None
    e_up: Optional[Spectrum] = None
    o_ff: Optional[Spectrum] = None
    waist_nm: Optional[np.ndarray] = None
    na_fraction: dict = field(default_factory=dict)
    collection: dict = field(default_factory=dict)
    trusted: bool = True

    def summary(self):
        out = {
            "resonance_nm": self.resonance_nm,
            "target_nm": self.target_nm,
            "purcell": self.purcell_at_resonance,
            "c_cost": self.c_cost,
            "e_up": self.e_up_at_resonance,
            "o_ff": self.o_ff_at_resonance,
            "na_0.7": self.na07_at_resonance,
            "trusted": self.trusted,
        }
        for na, spec in self.collection.items():
            out[f"c_na_{na:g}"] = spec.at(self.resonance_nm) if np.isfinite(self.resonance_nm) else None
        return out


def compute_metrics(result, target_nm, na_values=DEFAULT_NA, n_ref=None, monitor="box",
                    angles=None, require_peak=True):
    """Evaluate every figure of merit at each monitored wavelength.

    Raises :class:`NoPeakError` when the Purcell spectrum has no interior
    maximum, unless ``require_peak`` is False; the at-resonance fields are
    then NaN while the spectra are still filled in.
    """
    purcell = purcell_spectrum(result, n_ref)
    e_up = upward_fraction(result, monitor=monitor)
    plane = result.top_plane(monitor)
    theta, phi = angles if angles is not None else default_angles()
    wl = result.wavelengths_nm
    na_values = tuple(sorted(set(list(na_values) + [0.7])))
    o_ff = np.zeros(wl.size)
    waist = np.zeros(wl.size)
    fr = {na: np.zeros(wl.size) for na in na_values}
    for i, lam in enumerate(wl):
        ff = near_to_far(plane, lam, theta, phi)
        o_ff[i], waist[i] = gaussian_overlap(ff)
        for na in na_values:
            fr[na][i] = na_fraction(ff, na)
    na_spec = {na: Spectrum(wl, v, f"na_{na:g}") for na, v in fr.items()}
    coll = {na: Spectrum(wl, e_up.values * v, f"c_na_{na:g}") for na, v in fr.items()}
    c_term = e_up.values * o_ff * fr[0.7]
    try:
        res = resonance_peak(purcell)
    except NoPeakError:
        if require_peak:
            raise
        res = nan = float("nan")
        at = dict(purcell_at_resonance=nan, c_cost=nan, e_up_at_resonance=nan,
                  o_ff_at_resonance=nan, na07_at_resonance=nan)
    else:
        at = dict(purcell_at_resonance=_parabola_value(purcell, res),
                  c_cost=float(np.interp(res, wl, c_term)),
                  e_up_at_resonance=e_up.at(res),
                  o_ff_at_resonance=float(np.interp(res, wl, o_ff)),
                  na07_at_resonance=float(np.interp(res, wl, fr[0.7])))
    return EmissionMetrics(
        resonance_nm=res,
        target_nm=float(target_nm),
        **at,
        purcell=purcell,
        e_up=e_up,
        o_ff=Spectrum(wl, o_ff, "o_ff"),
        waist_nm=waist,
        na_fraction=na_spec,
        collection=coll,
        trusted=purcell.trusted and e_up.trusted,
    )


def write_spectrum_csv(path, metrics, na_values=DEFAULT_NA):
    wl = metrics.purcell.wavelengths_nm
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wavelength_nm", "purcell", "e_up", "o_ff"] + [f"c_na_{na:.1f}" for na in na_values])
        for i, lam in enumerate(wl):
            row = [f"{lam:.6f}", f"{metrics.purcell.values[i]:.9g}", f"{metrics.e_up.values[i]:.9g}",
                   f"{metrics.o_ff.values[i]:.9g}"]
            row += [f"{metrics.collection[na].values[i]:.9g}" for na in na_values]
            w.writerow(row)


def write_farfield_csv(path, ff):
    T, P = np.meshgrid(ff.theta, ff.phi, indexing="ij")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_rad", "phi_rad", "re_E_theta", "im_E_theta", "re_E_phi", "im_E_phi"])
        for t, p, et, ep in zip(T.ravel(), P.ravel(), ff.e_theta.ravel(), ff.e_phi.ravel()):
            w.writerow([f"{t:.9g}", f"{p:.9g}", f"{et.real:.9g}", f"{et.imag:.9g}",
                        f"{ep.real:.9g}", f"{ep.imag:.9g}"])
