# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled characteristic kernels for two-dimensional grids.

Same contract as :mod:`twophase._pykernels` restricted to ``N = 2``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _w(double t, double* w) noexcept nogil:
    w[0] = -t * (t - 1) * (t - 2) / 6
    w[1] = (t + 1) * (t - 1) * (t - 2) / 2
    w[2] = -(t + 1) * t * (t - 2) / 2
    w[3] = (t + 1) * t * (t - 1) / 6


cdef inline double _interp(const double[:, ::1] f, double x, double z,
                           double dx, double z0, double dz) noexcept nogil:
    cdef Py_ssize_t mt = f.shape[0], mz = f.shape[1]
    cdef double px = x / dx
    cdef Py_ssize_t ix = <Py_ssize_t>floor(px)
    cdef double pz = (z - z0) / dz
    if pz < 0:
        pz = 0
    elif pz > mz - 1:
        pz = mz - 1
    cdef Py_ssize_t iz = <Py_ssize_t>floor(pz)
    if iz < 1:
        iz = 1
    elif iz > mz - 3:
        iz = mz - 3
    cdef double wx[4]
    cdef double wz[4]
    _w(px - ix, wx)
    _w(pz - iz, wz)
    cdef double acc = 0.0, row
    cdef Py_ssize_t a, b, jx
    for a in range(4):
        jx = (ix + a - 1) % mt
        if jx < 0:
            jx += mt
        row = 0.0
        for b in range(4):
            row += wz[b] * f[jx, iz + b - 1]
        acc += wx[a] * row
    return acc


def interp(field, points, double dx, double z0, double dz):
    cdef const double[:, ::1] f = np.ascontiguousarray(field, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[1], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _interp(f, p[0, i], p[1, i], dx, z0, dz)
    return out


cdef inline void _rhs(const double[:, ::1] u0, const double[:, ::1] w0,
                      const double[:, ::1] u1, const double[:, ::1] w1,
                      const double[:, ::1] g0, const double[:, ::1] g1,
                      double x, double z, double s, double sgn,
                      double dx, double z0, double dz,
                      double* kx, double* kz, double* ka) noexcept nogil:
    kx[0] = sgn * ((1 - s) * _interp(u0, x, z, dx, z0, dz) + s * _interp(u1, x, z, dx, z0, dz))
    kz[0] = sgn * ((1 - s) * _interp(w0, x, z, dx, z0, dz) + s * _interp(w1, x, z, dx, z0, dz))
    ka[0] = (1 - s) * _interp(g0, x, z, dx, z0, dz) + s * _interp(g1, x, z, dx, z0, dz)


def rk4_paths(points, vel0, vel1, g0, g1, double dx, double z0, double dz,
              double T, int nsub, bint backward):
    cdef const double[:, ::1] u0 = np.ascontiguousarray(vel0[0], dtype=np.float64)
    cdef const double[:, ::1] w0 = np.ascontiguousarray(vel0[1], dtype=np.float64)
    cdef const double[:, ::1] u1 = np.ascontiguousarray(vel1[0], dtype=np.float64)
    cdef const double[:, ::1] w1 = np.ascontiguousarray(vel1[1], dtype=np.float64)
    cdef const double[:, ::1] G0 = np.ascontiguousarray(g0, dtype=np.float64)
    cdef const double[:, ::1] G1 = np.ascontiguousarray(g1, dtype=np.float64)
    out = np.array(points, dtype=np.float64, copy=True, order="C")
    A = np.zeros(out.shape[1])
    cdef double[:, ::1] p = out
    cdef double[::1] acc = A
    cdef Py_ssize_t i, n, npts = p.shape[1]
    cdef double h = T / nsub
    cdef double sgn = -1.0 if backward else 1.0
    cdef double ds = sgn / nsub
    cdef double x, z, s0, a
    cdef double k1x, k1z, k1a, k2x, k2z, k2a, k3x, k3z, k3a, k4x, k4z, k4a
    with nogil:
        for i in range(npts):
            x = p[0, i]
            z = p[1, i]
            a = 0.0
            for n in range(nsub):
                s0 = (<double>n / nsub) if not backward else 1.0 - (<double>n / nsub)
                _rhs(u0, w0, u1, w1, G0, G1, x, z, s0, sgn, dx, z0, dz, &k1x, &k1z, &k1a)
                _rhs(u0, w0, u1, w1, G0, G1, x + 0.5 * h * k1x, z + 0.5 * h * k1z,
                     s0 + 0.5 * ds, sgn, dx, z0, dz, &k2x, &k2z, &k2a)
                _rhs(u0, w0, u1, w1, G0, G1, x + 0.5 * h * k2x, z + 0.5 * h * k2z,
                     s0 + 0.5 * ds, sgn, dx, z0, dz, &k3x, &k3z, &k3a)
                _rhs(u0, w0, u1, w1, G0, G1, x + h * k3x, z + h * k3z,
                     s0 + ds, sgn, dx, z0, dz, &k4x, &k4z, &k4a)
                x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
                z += h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
                a += h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a)
            p[0, i] = x
            p[1, i] = z
            acc[i] = a
    return out, A
