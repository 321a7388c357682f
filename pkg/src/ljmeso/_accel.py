"""Compiled inner loops: pair forces and stencil deposition.

The numpy formulations in :mod:`ljmeso.particles` and :mod:`ljmeso.meso`
remain the reference; these kernels only change the loop structure.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _profile(r, radii, values, rc, eps, R0, a, b):
    if r > rc:
        s = R0 / r
        return eps / r * (s ** a - s ** b)
    j = np.searchsorted(radii, r, side="right") - 1
    if j >= radii.size - 1:
        return values[-1]
    x0 = radii[j]
    return values[j] + (values[j + 1] - values[j]) / (radii[j + 1] - x0) * (r - x0)


@njit(cache=True, nogil=True)
def pairwise_drift(X, radii, values, rc, eps, R0, a, b):
    N, d = X.shape
    out = np.zeros((N, d))
    diff = np.empty(d)
    for i in range(N):
        for k in range(i + 1, N):
            r2 = 0.0
            for j in range(d):
                diff[j] = X[i, j] - X[k, j]
                r2 += diff[j] * diff[j]
            if r2 == 0.0:
                continue
            r = math.sqrt(r2)
            coef = _profile(r, radii, values, rc, eps, R0, a, b) / r
            for j in range(d):
                f = coef * diff[j]
                out[i, j] += f
                out[k, j] -= f
    return out / N


@njit(cache=True, nogil=True)
def _flat_index(base, off, n, d):
    idx = 0
    for j in range(d):
        idx = idx * n + (base[j] + off[j]) % n
    return idx


@njit(cache=True, nogil=True)
def deposit_bump(X, offs, L, h, n, w, c, cell_volume):
    """Per-particle renormalized bumps ``c (1 - |z/w|^2)^3``, each of mass ``1/N``."""
    N, d = X.shape
    M = offs.shape[0]
    flat = np.zeros(n ** d)
    base = np.empty(d, dtype=np.int64)
    vals = np.empty(M)
    for p in range(N):
        for j in range(d):
            base[j] = int(np.rint((X[p, j] + L) / h))
        total = 0.0
        for m in range(M):
            rho2 = 0.0
            for j in range(d):
                z = X[p, j] - (-L + h * (base[j] + offs[m, j]))
                rho2 += z * z
            rho2 /= w * w
            v = c * (1.0 - rho2) ** 3 if rho2 < 1.0 else 0.0
            vals[m] = v
            total += v
        scale = 1.0 / (total * cell_volume * N)
        for m in range(M):
            if vals[m] != 0.0:
                flat[_flat_index(base, offs[m], n, d)] += vals[m] * scale
    return flat


@njit(cache=True, nogil=True)
def deposit_grad(X, dW, offs, L, h, n, w, c):
    """``sum_p grad V_N(x - X_p) . dW_p`` on the grid (no 1/N factor)."""
    N, d = X.shape
    M = offs.shape[0]
    flat = np.zeros(n ** d)
    base = np.empty(d, dtype=np.int64)
    z = np.empty(d)
    for p in range(N):
        for j in range(d):
            base[j] = int(np.rint((X[p, j] + L) / h))
        for m in range(M):
            rho2 = 0.0
            for j in range(d):
                z[j] = (-L + h * (base[j] + offs[m, j])) - X[p, j]
                rho2 += z[j] * z[j]
            rho2 /= w * w
            if rho2 >= 1.0:
                continue
            coef = -6.0 * c / (w * w) * (1.0 - rho2) ** 2
            dot = 0.0
            for j in range(d):
                dot += z[j] * dW[p, j]
            flat[_flat_index(base, offs[m], n, d)] += coef * dot
    return flat
