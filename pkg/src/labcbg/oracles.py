"""Closed-form electromagnetic references.

Nothing in the solver imports this module; it exists so tests, the emission
normalization and ``cbg check`` have independent ground truth.
"""

import math

import numpy as np
from scipy import constants

from .geometry import LayerStack

C0 = constants.c
EPS0 = constants.epsilon_0


def _omega(wavelength_nm):
    return 2 * np.pi * C0 / (np.asarray(wavelength_nm, dtype=float) * 1e-9)


def bulk_dipole_power(n, wavelength_nm, p=1.0):
    """Power radiated by a point dipole of moment ``p`` (C m) in a medium of index n."""
    w = _omega(wavelength_nm)
    return n * w**4 * p**2 / (12 * np.pi * EPS0 * C0**3)


def mirror_dipole_factor(d_nm, wavelength_nm, orientation="horizontal"):
    """Emitted power of a dipole a distance d above a perfect conductor, relative to free space."""
    x = 2 * 2 * np.pi / np.asarray(wavelength_nm, dtype=float) * np.asarray(d_nm, dtype=float)
    small = np.abs(x) < 1e-2  # series branch avoids cancellation near the mirror
    xs = np.where(small, 1.0, x)
    s, c = np.sin(xs), np.cos(xs)
    x2 = x * x
    if orientation == "horizontal":
        exact = 1 - 1.5 * (s / xs + c / xs**2 - s / xs**3)
        series = x2 / 5 - 3 * x2 * x2 / 280
    elif orientation == "vertical":
        # the image of a vertical dipole has the same sign, adding coherently
        exact = 1 - 3 * (c / xs**2 - s / xs**3)
        series = 2 - x2 / 10 + x2 * x2 / 280
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    out = np.where(small, series, exact)
    return out[()] if out.ndim == 0 else out


def image_dipole_factor(d_nm, wavelength_nm, orientation="horizontal"):
    """Same quantity as :func:`mirror_dipole_factor`, via the image's dyadic field.

    Evaluates the field of the image dipole at the source and uses
    P = P0 + (omega / 2) Im(p* . E_image). Kept separate from the closed form
    so the two can be checked against each other.
    """
    lam = np.asarray(wavelength_nm, dtype=float) * 1e-9
    k = 2 * np.pi / lam
    R = 2 * np.asarray(d_nm, dtype=float) * 1e-9
    w = 2 * np.pi * C0 / lam
    g = np.exp(1j * k * R) / (4 * np.pi * EPS0)
    if orientation == "horizontal":
        # source separation is perpendicular to the moment; image moment is -p
        e = -g * (k**2 / R + 1j * k / R**2 - 1 / R**3)
    elif orientation == "vertical":
        # separation along the moment; image moment is +p
        e = g * 2 * (1 / R**3 - 1j * k / R**2)
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    p0 = w**4 / (12 * np.pi * EPS0 * C0**3)
    return 1 + 0.5 * w * np.imag(e) / p0


def _stack_layers(stack, wavelength_nm, metal_model):
    if isinstance(stack, LayerStack):
        out = []
        for layer in stack.layers:
            m = layer.material
            if m.metal:
                n = None if metal_model == "pec" else m.drude_index(wavelength_nm)
            else:
                n = m.refractive_index
            out.append((n, layer.thickness))
        return out
    return [(n, float(t)) for n, t in stack]


def thin_film_reflection(stack, wavelength_nm, ambient_index=1.0, metal_model="pec"):
    """Complex amplitude reflection at normal incidence from the ambient above.

    ``stack`` is a :class:`LayerStack` or a bottom-to-top sequence of
    ``(index, thickness_nm)``; the bottom entry is the semi-infinite substrate
    and its thickness is ignored. An index of None is a perfect conductor.
    """
    layers = _stack_layers(stack, wavelength_nm, metal_model)
    if not layers:
        return 0j
    below = layers[0][0]
    r = None  # reflection seen just above the current interface, looking down
    for n, t in layers[1:]:
        if below is None:
            r = -1.0 + 0j
        elif r is None:
            r = (n - below) / (n + below) + 0j
        else:
            r = _interface(n, below, r)
        r = r * np.exp(2j * 2 * np.pi * n * t / wavelength_nm)
        below = n
    if below is None:
        return -1.0 + 0j
    if r is None:
        return (ambient_index - below) / (ambient_index + below) + 0j
    return _interface(ambient_index, below, r)


def _interface(n_above, n_below, r_below):
    """Combine a single interface with the reflection already seen from below it."""
    r12 = (n_above - n_below) / (n_above + n_below)
    return (r12 + r_below) / (1 + r12 * r_below)


def thin_film_reflectance(stack, wavelength_nm, ambient_index=1.0, metal_model="pec"):
    """Normal-incidence reflectance |r|^2 (transfer-matrix / Airy recursion)."""
    return float(abs(thin_film_reflection(stack, wavelength_nm, ambient_index, metal_model)) ** 2)


def hemisphere_cone_fraction(pattern, na):
    """Fraction of hemisphere power inside the cone sin(theta) <= NA."""
    if not 0 < na <= 1:
        raise ValueError("NA must lie in (0, 1]")
    c = math.sqrt(max(0.0, 1 - na * na))
    if pattern == "uniform":
        return 1 - c
    if pattern in ("dipole-sin2", "sin2"):
        return (2 / 3 - c + c**3 / 3) / (2 / 3)
    raise ValueError(f"unknown pattern {pattern!r}")


def dipole_far_field(theta, phi, wavelength_nm, axis="z", p=1.0, r=1.0):
    """Far field (E_theta, E_phi) of a point dipole in vacuum at radius r (m).

    The propagation phase exp(ikr) is omitted.
    """
    k = 2 * np.pi / (wavelength_nm * 1e-9)
    amp = k**2 * p / (4 * np.pi * EPS0 * r)
    th, ph = np.broadcast_arrays(theta, phi)
    if axis == "z":
        return -amp * np.sin(th), np.zeros_like(th, dtype=float)
    if axis == "x":
        return amp * np.cos(th) * np.cos(ph), -amp * np.sin(ph)
    if axis == "y":
        return amp * np.cos(th) * np.sin(ph), amp * np.cos(ph)
    raise ValueError(axis)


def dipole_near_field(x_nm, y_nm, z_nm, wavelength_nm, moment=(1.0, 0.0, 0.0),
                      position_nm=(0.0, 0.0, 0.0), n=1.0):
    """Exact time-harmonic E and H (SI, exp(-i omega t)) of a point dipole.

    Coordinates broadcast against each other; returns two tuples of three
    complex arrays.
    """
    k = 2 * np.pi * n / (wavelength_nm * 1e-9)
    omega = 2 * np.pi * C0 / (wavelength_nm * 1e-9)
    eps = EPS0 * n * n
    rx, ry, rz = np.broadcast_arrays(
        (np.asarray(x_nm, float) - position_nm[0]) * 1e-9,
        (np.asarray(y_nm, float) - position_nm[1]) * 1e-9,
        (np.asarray(z_nm, float) - position_nm[2]) * 1e-9,
    )
    r = np.sqrt(rx**2 + ry**2 + rz**2)
    ux, uy, uz = rx / r, ry / r, rz / r
    px, py, pz = moment
    udp = ux * px + uy * py + uz * pz
    g = np.exp(1j * k * r) / (4 * np.pi * eps)
    far = k**2 / r
    near = 1 / r**3 - 1j * k / r**2
    E = tuple(g * (far * (p - u * udp) + near * (3 * u * udp - p))
              for p, u in ((px, ux), (py, uy), (pz, uz)))
    # u x p
    cx = uy * pz - uz * py
    cy = uz * px - ux * pz
    cz = ux * py - uy * px
    h = omega * k / (4 * np.pi) * np.exp(1j * k * r) / r * (1 - 1 / (1j * k * r))
    H = (h * cx, h * cy, h * cz)
    return E, H
