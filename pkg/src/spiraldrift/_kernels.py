"""Compiled inner loops for the grid update.

The nine stencil terms are summed in a fixed row-major (m, n) order per cell,
so results are bit-identical regardless of the number of threads: every cell
writes only its own entry of the output buffers and reads only the
previous-step fields.

Coefficient planes are ordered ``[(m,n) for m in (-1,0,1) for n in (-1,0,1)]``.
"""

import numpy as np
from numba import njit, prange

__all__ = ["step_uv", "step_u_only", "diffuse"]


@njit(parallel=True, cache=True)
def step_uv(u, v, un, vn, C, inv_sg_dx2, dt, a, b, inv_eps, D_u, D_v):
    """One explicit Euler step with both fields diffusing."""
    nx, ny = u.shape
    inv_a = 1.0 / a
    for i in prange(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            c0 = C[0, i, j]; c1 = C[1, i, j]; c2 = C[2, i, j]
            c3 = C[3, i, j]; c4 = C[4, i, j]; c5 = C[5, i, j]
            c6 = C[6, i, j]; c7 = C[7, i, j]; c8 = C[8, i, j]
            acc_u = (c0 * u[im, jm] + c1 * u[im, j] + c2 * u[im, jp]
                     + c3 * u[i, jm] + c4 * u[i, j] + c5 * u[i, jp]
                     + c6 * u[ip, jm] + c7 * u[ip, j] + c8 * u[ip, jp])
            acc_v = (c0 * v[im, jm] + c1 * v[im, j] + c2 * v[im, jp]
                     + c3 * v[i, jm] + c4 * v[i, j] + c5 * v[i, jp]
                     + c6 * v[ip, jm] + c7 * v[ip, j] + c8 * v[ip, jp])
            w = inv_sg_dx2[i, j]
            uc = u[i, j]
            vc = v[i, j]
            fu = inv_eps * uc * (1.0 - uc) * (uc - (vc + b) * inv_a)
            un[i, j] = uc + dt * (D_u * acc_u * w + fu)
            vn[i, j] = vc + dt * (D_v * acc_v * w + (uc - vc))


@njit(parallel=True, cache=True)
def step_u_only(u, v, un, vn, C, inv_sg_dx2, dt, a, b, inv_eps, D_u):
    """One explicit Euler step with a non-diffusing slow field (D_v = 0)."""
    nx, ny = u.shape
    inv_a = 1.0 / a
    for i in prange(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            acc_u = (C[0, i, j] * u[im, jm] + C[1, i, j] * u[im, j] + C[2, i, j] * u[im, jp]
                     + C[3, i, j] * u[i, jm] + C[4, i, j] * u[i, j] + C[5, i, j] * u[i, jp]
                     + C[6, i, j] * u[ip, jm] + C[7, i, j] * u[ip, j] + C[8, i, j] * u[ip, jp])
            uc = u[i, j]
            vc = v[i, j]
            fu = inv_eps * uc * (1.0 - uc) * (uc - (vc + b) * inv_a)
            un[i, j] = uc + dt * (D_u * acc_u * inv_sg_dx2[i, j] + fu)
            vn[i, j] = vc + dt * (uc - vc)


@njit(parallel=True, cache=True)
def diffuse(u, un, C, inv_sg_dx2, dt, D_w):
    """One explicit Euler step of the bare diffusion operator (kinetics off)."""
    nx, ny = u.shape
    for i in prange(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            acc = (C[0, i, j] * u[im, jm] + C[1, i, j] * u[im, j] + C[2, i, j] * u[im, jp]
                   + C[3, i, j] * u[i, jm] + C[4, i, j] * u[i, j] + C[5, i, j] * u[i, jp]
                   + C[6, i, j] * u[ip, jm] + C[7, i, j] * u[ip, j] + C[8, i, j] * u[ip, jp])
            un[i, j] = u[i, j] + dt * D_w * acc * inv_sg_dx2[i, j]
