"""Gauss-Legendre quadrature over the unit 3-sphere.

The sphere is parameterized by hyperspherical angles

    x1 = cos(t1)
    x2 = sin(t1) cos(t2)
    x3 = sin(t1) sin(t2) cos(p)
    x4 = sin(t1) sin(t2) sin(p)

with t1, t2 in [0, pi], p in [0, 2 pi) and surface measure
sin^2(t1) sin(t2) dt1 dt2 dp (total area 2 pi^2). A tensor product of
Gauss-Legendre rules in the three angles integrates the smooth Bingham
integrand; node weights are normalized so the grid integrates the
constant 1 to exactly 1.0, which pins the uniform case down to the bit.

Grids are cached per order. The default order comes from
KINEFISHER_QUADRATURE_ORDER or constants.DEFAULT_QUADRATURE_ORDER.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels
from .constants import DEFAULT_QUADRATURE_ORDER
from .errors import InvalidArgumentError

__all__ = ["SphereGrid", "default_order", "get_grid", "BinghamMoments", "bingham_reduce"]


def default_order() -> int:
    env = os.environ.get("KINEFISHER_QUADRATURE_ORDER")
    if env is None:
        return DEFAULT_QUADRATURE_ORDER
    try:
        order = int(env)
    except ValueError as exc:
        raise InvalidArgumentError(f"KINEFISHER_QUADRATURE_ORDER must be an integer: {env!r}") from exc
    if order < 2:
        raise InvalidArgumentError("quadrature order must be >= 2")
    return order


@dataclass(frozen=True)
class SphereGrid:
    """Flattened tensor grid: squared coordinates and normalized weights."""

    order: int
    x1sq: np.ndarray
    x2sq: np.ndarray
    x3sq: np.ndarray
    x4sq: np.ndarray
    w: np.ndarray
    # log of the grid's own integral of 1, under the active kernel backend.
    # Subtracting it makes log integrals exact for constants (bit-exact 0
    # for the uniform case, since the same reduction is replayed).
    log_w_sum: float


_GRID_CACHE: dict[int, SphereGrid] = {}


def get_grid(order: int | None = None) -> SphereGrid:
    if order is None:
        order = default_order()
    if order < 2:
        raise InvalidArgumentError("quadrature order must be >= 2")
    grid = _GRID_CACHE.get(order)
    if grid is None:
        grid = _build_grid(order)
        _GRID_CACHE[order] = grid
    return grid


def _build_grid(order: int) -> SphereGrid:
    z, wz = leggauss(order)
    t1 = 0.5 * np.pi * (z + 1.0)
    w1 = 0.5 * np.pi * wz * np.sin(t1) ** 2
    t2 = 0.5 * np.pi * (z + 1.0)
    w2 = 0.5 * np.pi * wz * np.sin(t2)
    p = np.pi * (z + 1.0)
    wp = np.pi * wz

    s1, c1 = np.sin(t1), np.cos(t1)
    s2, c2 = np.sin(t2), np.cos(t2)
    cp, sp = np.cos(p), np.sin(p)

    ones = np.ones(order)
    x1 = np.einsum("i,j,k->ijk", c1, ones, ones).ravel()
    x2 = np.einsum("i,j,k->ijk", s1, c2, ones).ravel()
    x3 = np.einsum("i,j,k->ijk", s1, s2, cp).ravel()
    x4 = np.einsum("i,j,k->ijk", s1, s2, sp).ravel()
    w = np.einsum("i,j,k->ijk", w1, w2, wp).ravel()
    w = np.ascontiguousarray(w / (2.0 * np.pi**2))

    x1sq = np.ascontiguousarray(x1 * x1)
    x2sq = np.ascontiguousarray(x2 * x2)
    x3sq = np.ascontiguousarray(x3 * x3)
    x4sq = np.ascontiguousarray(x4 * x4)

    log_w_sum = float(
        np.log(_kernels.bingham_logsum(0.0, 0.0, 0.0, 0.0, x1sq, x2sq, x3sq, x4sq, w))
    )
    return SphereGrid(order, x1sq, x2sq, x3sq, x4sq, w, log_w_sum)


@dataclass(frozen=True)
class BinghamMoments:
    """Normalized outputs of one grid pass at coefficients a = (a2, a3, a4).

    log_int  = log of (1/2pi^2) Integral exp(-(a2 x2^2 + a3 x3^2 + a4 x4^2))
    q        = (E[x2^2], E[x3^2], E[x4^2]) under the exp(-x'Ax) weight
    p        = symmetric 3x3 of fourth moments E[x_j^2 x_k^2], j,k in {2,3,4}
    """

    log_int: float
    q: np.ndarray
    p: np.ndarray


def bingham_reduce(a2: float, a3: float, a4: float, order: int | None = None) -> BinghamMoments:
    """One pass over the grid; valid for any finite coefficients.

    Negative coefficients are handled by shifting A by c*I (a constant on
    the sphere), so the kernel only ever sees nonnegative values and its
    exponent never overflows.
    """
    g = get_grid(order)
    c = min(0.0, a2, a3, a4)
    (i0, m2, m3, m4, p22, p33, p44, p23, p24, p34) = _kernels.bingham_moments(
        -c, a2 - c, a3 - c, a4 - c, g.x1sq, g.x2sq, g.x3sq, g.x4sq, g.w
    )
    log_int = np.log(i0) - g.log_w_sum - c
    q = np.array([m2, m3, m4]) / i0
    p = np.array([[p22, p23, p24], [p23, p33, p34], [p24, p34, p44]]) / i0
    return BinghamMoments(float(log_int), q, p)


def bingham_log_integral(a2: float, a3: float, a4: float, order: int | None = None) -> float:
    """log of the normalized Bingham integral only (cheaper than moments)."""
    g = get_grid(order)
    c = min(0.0, a2, a3, a4)
    i0 = _kernels.bingham_logsum(-c, a2 - c, a3 - c, a4 - c, g.x1sq, g.x2sq, g.x3sq, g.x4sq, g.w)
    return float(np.log(i0) - g.log_w_sum - c)
