"""Compiled time loops for the selective scan.

The decay factors ``exp(delta * A)`` are precomputed (vectorised numpy exp);
these kernels only run the recurrence and its reverse-time adjoint.  Loops
run serially in a fixed order, so results are bit-reproducible.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def scan_forward(u, delta, B, C, D, decay, hs, y, store):
    nb, nt, ne = u.shape
    ns = B.shape[2]
    h = np.zeros((ne, ns), dtype=y.dtype)
    for b in range(nb):
        h[:, :] = 0
        for t in range(nt):
            for e in range(ne):
                ut = u[b, t, e]
                du = delta[b, t, e] * ut
                acc = y.dtype.type(0)
                for s in range(ns):
                    v = decay[b, t, e, s] * h[e, s] + du * B[b, t, s]
                    h[e, s] = v
                    acc += C[b, t, s] * v
                    if store:
                        hs[b, t, e, s] = v
                y[b, t, e] = acc + D[e] * ut


@numba.njit(cache=True)
def scan_backward(g, u, delta, A, B, C, D, decay, live, hs, gu, gdelta, gA, gB, gC, gD):
    nb, nt, ne = u.shape
    ns = B.shape[2]
    dh = np.zeros((ne, ns), dtype=hs.dtype)
    for b in range(nb):
        dh[:, :] = 0
        for t in range(nt - 1, -1, -1):
            for e in range(ne):
                gy = g[b, t, e]
                dt = delta[b, t, e]
                ut = u[b, t, e]
                du = dt * ut
                gdt = gy * 0
                gut = gy * D[e]
                for s in range(ns):
                    d = dh[e, s] + gy * C[b, t, s]
                    gC[b, t, s] += gy * hs[b, t, e, s]
                    a = decay[b, t, e, s]
                    if t > 0 and live[b, t, e, s]:
                        gz = d * hs[b, t - 1, e, s] * a
                        gA[e, s] += gz * dt
                        gdt += gz * A[e, s]
                    bs = B[b, t, s]
                    gdt += d * bs * ut
                    gut += d * bs * dt
                    gB[b, t, s] += d * du
                    dh[e, s] = d * a
                gdelta[b, t, e] = gdt
                gu[b, t, e] = gut
                gD[e] += gy * ut
