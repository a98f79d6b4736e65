"""Naive per-step selective-scan recurrence used as an independent oracle."""

import numpy as np


def naive_scan(u, delta, A, B, C, D):
    T, E = u.shape
    S = A.shape[1]
    y = np.zeros((T, E))
    for e in range(E):
        h = np.zeros(S)
        for t in range(T):
            h = np.exp(delta[t, e] * A[e]) * h + delta[t, e] * B[t] * u[t, e]
            y[t, e] = C[t] @ h + D[e] * u[t, e]
    return y


def random_scan_inputs(rng, T, E, S):
    u = rng.normal(size=(T, E))
    delta = rng.uniform(0.01, 1.0, size=(T, E))
    A = -rng.uniform(0.1, 2.0, size=(E, S))
    B = rng.normal(size=(T, S))
    C = rng.normal(size=(T, S))
    D = rng.normal(size=E)
    return u, delta, A, B, C, D
