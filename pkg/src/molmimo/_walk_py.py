"""Pure-numpy twin of the compiled walk kernel.

Vectorised over the alive molecules of a round. The draw order and every
floating-point expression mirror ``_walk.pyx`` so the two backends agree
record for record.
"""

from __future__ import annotations

import numpy as np


def walk_block(rng, start, centers, active, radius, sigma, ddt, n_steps,
               n_molecules, mode, jump_factor):
    bulge = np.zeros(n_molecules, dtype=np.int8)
    step = np.full(n_molecules, n_steps, dtype=np.int64)
    if n_molecules == 0:
        return bulge, step

    pos = np.empty((n_molecules, 3))
    pos[:] = start
    done = np.zeros(n_molecules, dtype=np.int64)
    ids = np.arange(n_molecules)
    spheres = [j for j in range(len(centers)) if active[j]]
    r2 = radius * radius
    ks = jump_factor * sigma

    while ids.size:
        p0 = pos[ids]
        x0, y0, z0 = p0[:, 0], p0[:, 1], p0[:, 2]

        rho_min = np.full(ids.size, np.inf)
        for j in spheres:
            cx, cy, cz = centers[j]
            fx, fy, fz = x0 - cx, y0 - cy, z0 - cz
            rho = np.sqrt(fx * fx + fy * fy + fz * fz) - radius
            rho_min = np.minimum(rho_min, rho)
        left = n_steps - done[ids]
        if jump_factor > 0.0:
            ratio = rho_min / ks
            mf = np.floor(ratio * ratio)
            m = np.where(mf >= left, left,
                         np.where(mf > 1.0, mf, 1.0).astype(np.int64))
        else:
            m = np.ones(ids.size, dtype=np.int64)
        m = np.minimum(m, left)

        z = rng.standard_normal((ids.size, 3))
        u_draw = rng.random(ids.size) if mode == 2 else None

        s = sigma * np.sqrt(m.astype(np.float64))
        x1 = x0 + s * z[:, 0]
        y1 = y0 + s * z[:, 1]
        z1 = z0 + s * z[:, 2]
        vx, vy, vz = x1 - x0, y1 - y0, z1 - z0

        hit = np.zeros(ids.size, dtype=np.int8)
        best_u = np.full(ids.size, np.inf)
        rho0 = {}
        for j in spheres:
            cx, cy, cz = centers[j]
            gx, gy, gz = x1 - cx, y1 - cy, z1 - cz
            inside = (gx * gx + gy * gy + gz * gz) <= r2
            if mode == 0:
                hit[(hit == 0) & inside] = j + 1
                continue
            fx, fy, fz = x0 - cx, y0 - cy, z0 - cz
            qa = vx * vx + vy * vy + vz * vz
            qb = fx * vx + fy * vy + fz * vz
            qc = fx * fx + fy * fy + fz * fz - r2
            rho0[j] = np.sqrt(qc + r2) - radius
            disc = qb * qb - qa * qc
            with np.errstate(invalid="ignore"):
                u = (-qb - np.sqrt(np.maximum(disc, 0.0))) / qa
            cand = inside | ((disc >= 0.0) & (u >= 0.0) & (u <= 1.0))
            better = cand & (u < best_u)
            best_u = np.where(better, u, best_u)
            hit[better] = j + 1

        if mode == 2:
            p_cum = np.zeros(ids.size)
            for j in spheres:
                cx, cy, cz = centers[j]
                gx, gy, gz = x1 - cx, y1 - cy, z1 - cz
                rho = np.sqrt(gx * gx + gy * gy + gz * gz) - radius
                p_cross = np.exp(-(rho0[j] * rho) / (ddt * m.astype(np.float64)))
                p_cum = p_cum + (1.0 - p_cum) * p_cross
                hit[(hit == 0) & (u_draw < p_cum)] = j + 1

        done[ids] += m
        pos[ids, 0] = x1
        pos[ids, 1] = y1
        pos[ids, 2] = z1
        absorbed = hit > 0
        bulge[ids[absorbed]] = hit[absorbed]
        step[ids[absorbed]] = done[ids[absorbed]]
        ids = ids[~absorbed & (done[ids] < n_steps)]

    return bulge, step
