# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Yee-grid update kernels.

All field arrays are C-contiguous float64 with one ghost layer at the low end
of every axis (index 0). Physical nodes occupy indices ``1..n``. Update
coefficients must be zero on ghost, wall and out-of-domain E nodes.
"""

from cython.parallel cimport prange

cimport numpy as cnp

cnp.import_array()


def update_h(double[:, :, ::1] hx, double[:, :, ::1] hy, double[:, :, ::1] hz,
             double[:, :, ::1] ex, double[:, :, ::1] ey, double[:, :, ::1] ez,
             double chx, double chy, double chz, int nthreads=1):
    cdef Py_ssize_t nx = hx.shape[0] - 1
    cdef Py_ssize_t ny = hx.shape[1] - 1
    cdef Py_ssize_t nz = hx.shape[2] - 1
    cdef Py_ssize_t i, j, k
    for i in prange(1, nx, nogil=True, schedule="static", num_threads=nthreads):
        for j in range(1, ny):
            for k in range(1, nz):
                hx[i, j, k] -= (chy * (ez[i, j + 1, k] - ez[i, j, k])
                                - chz * (ey[i, j, k + 1] - ey[i, j, k]))
                hy[i, j, k] -= (chz * (ex[i, j, k + 1] - ex[i, j, k])
                                - chx * (ez[i + 1, j, k] - ez[i, j, k]))
                hz[i, j, k] -= (chx * (ey[i + 1, j, k] - ey[i, j, k])
                                - chy * (ex[i, j + 1, k] - ex[i, j, k]))


def update_e(double[:, :, ::1] ex, double[:, :, ::1] ey, double[:, :, ::1] ez,
             double[:, :, ::1] hx, double[:, :, ::1] hy, double[:, :, ::1] hz,
             double[:, :, ::1] cbx, double[:, :, ::1] cby, double[:, :, ::1] cbz,
             double idx, double idy, double idz, int nthreads=1):
    cdef Py_ssize_t nx = ex.shape[0] - 1
    cdef Py_ssize_t ny = ex.shape[1] - 1
    cdef Py_ssize_t nz = ex.shape[2] - 1
    cdef Py_ssize_t i, j, k
    for i in prange(1, nx + 1, nogil=True, schedule="static", num_threads=nthreads):
        for j in range(1, ny + 1):
            for k in range(1, nz + 1):
                ex[i, j, k] += cbx[i, j, k] * (idy * (hz[i, j, k] - hz[i, j - 1, k])
                                               - idz * (hy[i, j, k] - hy[i, j, k - 1]))
                ey[i, j, k] += cby[i, j, k] * (idz * (hx[i, j, k] - hx[i, j, k - 1])
                                               - idx * (hz[i, j, k] - hz[i - 1, j, k]))
                ez[i, j, k] += cbz[i, j, k] * (idx * (hy[i, j, k] - hy[i - 1, j, k])
                                               - idy * (hx[i, j, k] - hx[i, j - 1, k]))


cdef inline void _cpml_row(double* tgt, const double* src, double* psi, const double* coef,
                           double scoef, Py_ssize_t n, Py_ssize_t da, double inv_d,
                           double bp, double cp, double kp, double sign) noexcept nogil:
    # one contiguous row at a fixed PML depth
    cdef Py_ssize_t k
    cdef double d
    if coef == NULL:
        for k in range(n):
            d = (src[k + da] - src[k]) * inv_d
            psi[k] = bp * psi[k] + cp * d
            tgt[k] += sign * scoef * (kp * d + psi[k])
    else:
        for k in range(n):
            d = (src[k + da] - src[k]) * inv_d
            psi[k] = bp * psi[k] + cp * d
            tgt[k] += sign * coef[k] * (kp * d + psi[k])


cdef void _cpml(double* tgt, const double* src, double* psi, const double* coef,
                double scoef, const long* pidx, const double* b, const double* c,
                const double* km1, Py_ssize_t npts, int axis, Py_ssize_t* shape,
                double inv_d, double sign, int backward) noexcept nogil:
    # psi has the target's layout with the PML axis shortened to npts entries.
    # A backward difference is written as a forward one with both factors
    # negated, which is exact in floating point.
    cdef Py_ssize_t s1 = shape[2]
    cdef Py_ssize_t s0 = shape[1] * shape[2]
    cdef Py_ssize_t sa = s0 if axis == 0 else (s1 if axis == 1 else 1)
    cdef Py_ssize_t da = -sa if backward else sa
    cdef double idd = -inv_d if backward else inv_d
    cdef Py_ssize_t i, j, k, p, off, q
    cdef const double* cf
    cdef double d
    if axis == 0:
        for p in range(npts):
            for j in range(shape[1]):
                off = pidx[p] * s0 + j * s1
                q = (p * shape[1] + j) * s1
                _cpml_row(tgt + off, src + off, psi + q, coef + off if coef != NULL else NULL,
                          scoef, s1, da, idd, b[p], c[p], km1[p], sign)
    elif axis == 1:
        for i in range(shape[0]):
            for p in range(npts):
                off = i * s0 + pidx[p] * s1
                q = (i * npts + p) * s1
                _cpml_row(tgt + off, src + off, psi + q, coef + off if coef != NULL else NULL,
                          scoef, s1, da, idd, b[p], c[p], km1[p], sign)
    else:
        for i in range(shape[0]):
            for j in range(shape[1]):
                off = i * s0 + j * s1
                q = (i * shape[1] + j) * npts
                for p in range(npts):
                    k = off + pidx[p]
                    d = (src[k + da] - src[k]) * idd
                    psi[q + p] = b[p] * psi[q + p] + c[p] * d
                    if coef == NULL:
                        tgt[k] += sign * scoef * (km1[p] * d + psi[q + p])
                    else:
                        tgt[k] += sign * coef[k] * (km1[p] * d + psi[q + p])


def cpml_correct(cnp.ndarray[double, ndim=3, mode="c"] target,
                 cnp.ndarray[double, ndim=3, mode="c"] source,
                 cnp.ndarray[double, ndim=3, mode="c"] psi,
                 coef, double scalar_coef,
                 cnp.ndarray[long, ndim=1, mode="c"] pidx,
                 cnp.ndarray[double, ndim=1, mode="c"] b,
                 cnp.ndarray[double, ndim=1, mode="c"] c,
                 cnp.ndarray[double, ndim=1, mode="c"] km1,
                 int axis, double inv_d, double sign, bint backward):
    """Apply one convolutional-PML correction term to ``target``.

    ``psi`` is shaped like ``target`` except along ``axis``, where it has one
    entry per index in ``pidx``. ``coef`` is either a coefficient array shaped
    like ``target`` or None, in which case ``scalar_coef`` is used.
    """
    cdef Py_ssize_t shape[3]
    shape[0] = target.shape[0]
    shape[1] = target.shape[1]
    shape[2] = target.shape[2]
    cdef cnp.ndarray[double, ndim=3, mode="c"] carr
    cdef const double* cptr = NULL
    if coef is not None:
        carr = coef
        cptr = &carr[0, 0, 0]
    with nogil:
        _cpml(&target[0, 0, 0], &source[0, 0, 0], &psi[0, 0, 0], cptr, scalar_coef,
              &pidx[0], &b[0], &c[0], &km1[0], pidx.shape[0], axis, shape,
              inv_d, sign, backward)


def drude_current(double[::1] j, double[::1] e_flat, long[::1] nodes, double kj, double bj):
    cdef Py_ssize_t m
    for m in range(nodes.shape[0]):
        j[m] = kj * j[m] + bj * e_flat[nodes[m]]


def drude_apply(double[::1] e_flat, double[::1] cb_flat, long[::1] nodes, double[::1] j):
    cdef Py_ssize_t m, n
    for m in range(nodes.shape[0]):
        n = nodes[m]
        e_flat[n] -= cb_flat[n] * j[m]
