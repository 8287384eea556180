"""Pure-numpy reference versions of the Yee update kernels.

Signatures and array conventions match the compiled module exactly, so the
engine can swap one for the other. ``nthreads`` is accepted and ignored.
"""

import numpy as np


def update_h(hx, hy, hz, ex, ey, ez, chx, chy, chz, nthreads=1):
    c = (slice(1, -1),) * 3
    xp = (slice(2, None), slice(1, -1), slice(1, -1))
    yp = (slice(1, -1), slice(2, None), slice(1, -1))
    zp = (slice(1, -1), slice(1, -1), slice(2, None))
    hx[c] -= chy * (ez[yp] - ez[c]) - chz * (ey[zp] - ey[c])
    hy[c] -= chz * (ex[zp] - ex[c]) - chx * (ez[xp] - ez[c])
    hz[c] -= chx * (ey[xp] - ey[c]) - chy * (ex[yp] - ex[c])


def update_e(ex, ey, ez, hx, hy, hz, cbx, cby, cbz, idx, idy, idz, nthreads=1):
    c = (slice(1, None),) * 3
    xm = (slice(0, -1), slice(1, None), slice(1, None))
    ym = (slice(1, None), slice(0, -1), slice(1, None))
    zm = (slice(1, None), slice(1, None), slice(0, -1))
    ex[c] += cbx[c] * (idy * (hz[c] - hz[ym]) - idz * (hy[c] - hy[zm]))
    ey[c] += cby[c] * (idz * (hx[c] - hx[zm]) - idx * (hz[c] - hz[xm]))
    ez[c] += cbz[c] * (idx * (hy[c] - hy[xm]) - idy * (hx[c] - hx[ym]))


def cpml_correct(target, source, psi, coef, scalar_coef, pidx, b, c, km1,
                 axis, inv_d, sign, backward):
    # psi is laid out like target with the PML axis cut down to len(pidx)
    t = np.moveaxis(target, axis, 0)
    s = np.moveaxis(source, axis, 0)
    ps = np.moveaxis(psi, axis, 0)
    shift = -1 if backward else 1
    if backward:
        d = (s[pidx] - s[pidx + shift]) * inv_d
    else:
        d = (s[pidx + shift] - s[pidx]) * inv_d
    bb = b[:, None, None]
    ps[...] = bb * ps + c[:, None, None] * d
    cf = scalar_coef if coef is None else np.moveaxis(coef, axis, 0)[pidx]
    t[pidx] += sign * cf * (km1[:, None, None] * d + ps)


def drude_current(j, e_flat, nodes, kj, bj):
    j[...] = kj * j + bj * e_flat[nodes]


def drude_apply(e_flat, cb_flat, nodes, j):
    e_flat[nodes] -= cb_flat[nodes] * j
