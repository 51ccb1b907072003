# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Brownian-walk kernel.

Must stay in lockstep with ``_walk_py.walk_block``: same draw order, same
floating-point expression order, so both backends give identical records.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt, floor, exp, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

cnp.import_array()

DEF MAX_SPHERES = 2


def walk_block(object rng, const double[::1] start, const double[:, ::1] centers,
               const unsigned char[::1] active, double radius, double sigma,
               double ddt, long long n_steps, Py_ssize_t n_molecules,
               int mode, double jump_factor):
    """Walk ``n_molecules`` from ``start`` until absorbed or ``n_steps`` elapse.

    Returns ``(bulge, step)``: bulge index 1 or 2 (0 if never absorbed) and the
    step count at which absorption happened (``n_steps`` for survivors).
    """
    cdef object bit_gen = rng.bit_generator
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(bit_gen.capsule, "BitGenerator")

    bulge_arr = np.zeros(n_molecules, dtype=np.int8)
    step_arr = np.full(n_molecules, n_steps, dtype=np.int64)
    cdef signed char[::1] bulge = bulge_arr
    cdef long long[::1] step = step_arr
    if n_molecules == 0:
        return bulge_arr, step_arr

    cdef double[::1] px = np.full(n_molecules, start[0])
    cdef double[::1] py = np.full(n_molecules, start[1])
    cdef double[::1] pz = np.full(n_molecules, start[2])
    cdef long long[::1] done = np.zeros(n_molecules, dtype=np.int64)
    cdef Py_ssize_t[::1] ids = np.arange(n_molecules, dtype=np.intp)
    cdef double[::1] zbuf = np.empty(3 * n_molecules)
    cdef double[::1] ubuf = np.empty(n_molecules)
    cdef long long[::1] mbuf = np.empty(n_molecules, dtype=np.int64)

    cdef int n_sph = centers.shape[0]
    cdef double cx[MAX_SPHERES]
    cdef double cy[MAX_SPHERES]
    cdef double cz[MAX_SPHERES]
    cdef int on[MAX_SPHERES]
    cdef int j
    for j in range(n_sph):
        cx[j] = centers[j, 0]
        cy[j] = centers[j, 1]
        cz[j] = centers[j, 2]
        on[j] = active[j]

    cdef double r2 = radius * radius
    cdef double ks = jump_factor * sigma
    cdef Py_ssize_t n_alive = n_molecules
    cdef Py_ssize_t a, w, i
    cdef double x0, y0, z0, x1, y1, z1, fx, fy, fz, vx, vy, vz
    cdef double dist2, rho, rho_min, ratio, mf, s, qa, qb, qc, disc, u, best_u
    cdef double rho0[MAX_SPHERES]
    cdef double p_cross, p_cum
    cdef long long m, left
    cdef int hit

    with bit_gen.lock, nogil:
        while n_alive > 0:
            # step multiplicity from the current clearance
            for a in range(n_alive):
                i = ids[a]
                rho_min = INFINITY
                for j in range(n_sph):
                    if on[j]:
                        fx = px[i] - cx[j]
                        fy = py[i] - cy[j]
                        fz = pz[i] - cz[j]
                        dist2 = fx * fx + fy * fy + fz * fz
                        rho = sqrt(dist2) - radius
                        if rho < rho_min:
                            rho_min = rho
                left = n_steps - done[i]
                m = 1
                if jump_factor > 0.0:
                    ratio = rho_min / ks
                    mf = floor(ratio * ratio)
                    if mf >= <double> left:
                        m = left
                    elif mf > 1.0:
                        m = <long long> mf
                if m > left:
                    m = left
                mbuf[a] = m

            for a in range(3 * n_alive):
                zbuf[a] = random_standard_normal(bg)
            if mode == 2:
                for a in range(n_alive):
                    ubuf[a] = bg.next_double(bg.state)

            w = 0
            for a in range(n_alive):
                i = ids[a]
                m = mbuf[a]
                s = sigma * sqrt(<double> m)
                x0 = px[i]
                y0 = py[i]
                z0 = pz[i]
                x1 = x0 + s * zbuf[3 * a]
                y1 = y0 + s * zbuf[3 * a + 1]
                z1 = z0 + s * zbuf[3 * a + 2]
                vx = x1 - x0
                vy = y1 - y0
                vz = z1 - z0

                hit = 0
                best_u = INFINITY
                for j in range(n_sph):
                    if not on[j]:
                        continue
                    fx = x1 - cx[j]
                    fy = y1 - cy[j]
                    fz = z1 - cz[j]
                    dist2 = fx * fx + fy * fy + fz * fz
                    if mode == 0:
                        if dist2 <= r2:
                            hit = j + 1
                            break
                        continue
                    fx = x0 - cx[j]
                    fy = y0 - cy[j]
                    fz = z0 - cz[j]
                    qa = vx * vx + vy * vy + vz * vz
                    qb = fx * vx + fy * vy + fz * vz
                    qc = fx * fx + fy * fy + fz * fz - r2
                    rho0[j] = sqrt(qc + r2) - radius
                    if dist2 <= r2:
                        disc = qb * qb - qa * qc
                        if disc < 0.0:
                            disc = 0.0
                        u = (-qb - sqrt(disc)) / qa
                    else:
                        disc = qb * qb - qa * qc
                        if disc < 0.0:
                            continue
                        u = (-qb - sqrt(disc)) / qa
                        if u < 0.0 or u > 1.0:
                            continue
                    if u < best_u:
                        best_u = u
                        hit = j + 1

                if mode == 2 and hit == 0:
                    p_cum = 0.0
                    for j in range(n_sph):
                        if not on[j]:
                            continue
                        fx = x1 - cx[j]
                        fy = y1 - cy[j]
                        fz = z1 - cz[j]
                        dist2 = fx * fx + fy * fy + fz * fz
                        rho = sqrt(dist2) - radius
                        p_cross = exp(-(rho0[j] * rho) / (ddt * <double> m))
                        p_cum = p_cum + (1.0 - p_cum) * p_cross
                        if ubuf[a] < p_cum:
                            hit = j + 1
                            break

                done[i] = done[i] + m
                px[i] = x1
                py[i] = y1
                pz[i] = z1
                if hit:
                    bulge[i] = <signed char> hit
                    step[i] = done[i]
                elif done[i] < n_steps:
                    ids[w] = i
                    w += 1
            n_alive = w

    return bulge_arr, step_arr
