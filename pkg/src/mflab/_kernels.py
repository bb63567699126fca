"""Numba kernels for the per-step elementwise work of the Euclidean dynamics.

The matmuls stay in BLAS; these kernels fuse the activation/derivative passes
over the (n, m) pre-activation matrices.  Reductions run in fixed ascending
index order inside each row, so results are bit-reproducible.  Blend
coefficients are hoisted into scalars before the loops; the interpolation
region is rarely hit when the cap is large, but the branch stays cheap.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always", fastmath=True)
def _phi(z, kappa, knee, sat, iota, c0, c1, c2, c3, c4, c5):
    if z <= knee:
        if z > 0.0:
            return z + math.log1p(math.exp(-kappa * z)) / kappa
        return math.log1p(math.exp(kappa * z)) / kappa
    if z >= sat:
        return iota
    t = z - knee
    return c0 + t * (c1 + t * (c2 + t * (c3 + t * (c4 + t * c5))))


@nb.njit(cache=True, inline="always", fastmath=True)
def _phi_d1(z, kappa, knee, sat, c1, c2, c3, c4, c5):
    if z <= knee:
        return 1.0 / (1.0 + math.exp(-kappa * z))
    if z >= sat:
        return 0.0
    t = z - knee
    return c1 + t * (2.0 * c2 + t * (3.0 * c3 + t * (4.0 * c4 + t * 5.0 * c5)))


@nb.njit(cache=True, parallel=True, fastmath=True)
def _pair_phi_diff(z1, z2, kappa, knee, sat, iota, c, out):
    """out[i,j] = phi(z1[i,j]) - phi(z2[i,j]) (vectorizable, no reduction)."""
    n, m = z1.shape
    c0, c1, c2, c3, c4, c5 = c[0], c[1], c[2], c[3], c[4], c[5]
    for i in nb.prange(n):
        for j in range(m):
            out[i, j] = _phi(z1[i, j], kappa, knee, sat, iota,
                             c0, c1, c2, c3, c4, c5) \
                - _phi(z2[i, j], kappa, knee, sat, iota,
                       c0, c1, c2, c3, c4, c5)


@nb.njit(cache=True, parallel=True)
def _row_mean_strict(a):
    """Fixed ascending-order row means (no fastmath, so summing the exact
    negation of every entry yields the exact negation of the mean)."""
    n, m = a.shape
    out = np.empty(n)
    for i in nb.prange(n):
        acc = 0.0
        for j in range(m):
            acc += a[i, j]
        out[i] = acc / m
    return out


def pair_phi_mean(z1, z2, kappa, knee, sat, iota, c, buf=None):
    """Row means of phi(z1) - phi(z2); the network predictions.

    The per-particle differences are formed first, so half-swapping every
    particle negates predictions bit-exactly.
    """
    if buf is None:
        buf = np.empty_like(z1)
    _pair_phi_diff(z1, z2, kappa, knee, sat, iota, c, buf)
    return _row_mean_strict(buf)


@nb.njit(cache=True, parallel=True, fastmath=True)
def weighted_derivs(z1, z2, coef, kappa, knee, sat, c, a1, a2):
    """a1[i,j] = coef[i]*phi'(z1[i,j]); a2[i,j] = -coef[i]*phi'(z2[i,j])."""
    n, m = z1.shape
    c1, c2, c3, c4, c5 = c[1], c[2], c[3], c[4], c[5]
    for i in nb.prange(n):
        w = coef[i]
        for j in range(m):
            a1[i, j] = w * _phi_d1(z1[i, j], kappa, knee, sat, c1, c2, c3, c4, c5)
            a2[i, j] = -w * _phi_d1(z2[i, j], kappa, knee, sat, c1, c2, c3, c4, c5)
