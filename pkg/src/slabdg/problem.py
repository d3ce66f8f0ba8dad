"""Coefficient data and manufactured solutions for the slab transport model.

The model problem on Omega = (0, L) x (0, 1) is

    -d/dz (mu^2/sigma_t du/dz) + sigma_t u = sigma_s P u + f,
    u + (mu/sigma_t) dn u = g   on both slab boundaries,

with P the angular average over (0, 1) and dn the outward z-derivative.
Three manufactured cases are provided; their volume sources ``f`` and
boundary data ``g`` are closed forms derived from the exact solutions, so
data quadrature does not pollute convergence studies.  Functions accept
scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

SIDE_LEFT = "left"    # z = 0, outward normal derivative is -du/dz
SIDE_RIGHT = "right"  # z = L, outward normal derivative is +du/dz

CASE_SMOOTH = "smooth"
CASE_POINT_SINGULARITY = "point_singularity"
CASE_LINE_DISCONTINUITY = "line_discontinuity"
CASES = (CASE_SMOOTH, CASE_POINT_SINGULARITY, CASE_LINE_DISCONTINUITY)


class ProblemError(ValueError):
    """Inadmissible coefficients or unknown case."""


@dataclass(frozen=True)
class Coefficients:
    """Per-region total and scattering cross sections.

    Requires sigma_t > 0, sigma_s >= 0 and a positive absorption margin
    min(sigma_t - sigma_s) > 0 on every region, which makes the continuous
    bilinear form elliptic and the source iteration a contraction.
    """

    by_region: Mapping[int, tuple[float, float]]

    def __post_init__(self):
        if not self.by_region:
            raise ProblemError("at least one coefficient region is required")
        for region, (sigma_t, sigma_s) in self.by_region.items():
            if not (sigma_t > 0.0 and math.isfinite(sigma_t)):
                raise ProblemError(f"region {region}: sigma_t must be positive, got {sigma_t}")
            if not (sigma_s >= 0.0 and math.isfinite(sigma_s)):
                raise ProblemError(f"region {region}: sigma_s must be nonnegative, got {sigma_s}")
            if not sigma_t - sigma_s > 0.0:
                raise ProblemError(
                    f"region {region}: need sigma_t - sigma_s > 0, got {sigma_t - sigma_s}")

    @property
    def margin(self) -> float:
        """Absorption margin c = min over regions of sigma_t - sigma_s."""
        return min(st - ss for (st, ss) in self.by_region.values())

    @property
    def max_contraction(self) -> float:
        """Largest sigma_s / sigma_t, the source-iteration rate bound."""
        return max(ss / st for (st, ss) in self.by_region.values())

    def as_dict(self) -> dict[int, tuple[float, float]]:
        return dict(self.by_region)


@dataclass(frozen=True)
class ProblemData:
    """A manufactured case: coefficients, data, and the exact solution."""

    name: str
    coefficients: Coefficients
    length: float
    f: Callable
    g: Callable
    exact: Callable | None = None
    exact_dz: Callable | None = None
    mu_locus: float | None = None


def _indicator(mu, locus: float):
    """Indicator of mu > locus; on the locus itself the right limit (1) is used."""
    return np.where(np.asarray(mu, dtype=float) >= locus, 1.0, 0.0)


# Angular average of (1 + exp(-mu)) over (1/2, 1), the exact P u factor of
# the smooth case.
_SMOOTH_PU = 0.5 + math.exp(-0.5) - math.exp(-1.0)


def _smooth_u(z, mu):
    z = np.asarray(z, dtype=float)
    return (1.0 + np.exp(-np.asarray(mu, dtype=float))) * _indicator(mu, 0.5) * np.exp(-z * z)


def _smooth_dz(z, mu):
    return -2.0 * np.asarray(z, dtype=float) * _smooth_u(z, mu)


def _smooth_f(z, mu):
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    body = (1.0 + np.exp(-mu)) * _indicator(mu, 0.5) * (mu * mu * (2.0 - 4.0 * z * z) + 1.0)
    return np.exp(-z * z) * (body - 0.5 * _SMOOTH_PU)


def _smooth_g(side, mu):
    mu = np.asarray(mu, dtype=float)
    base = (1.0 + np.exp(-mu)) * _indicator(mu, 0.5)
    if side == SIDE_LEFT:
        return base * np.ones_like(mu)  # du/dz vanishes at z = 0
    return base * math.exp(-1.0) * (1.0 - 2.0 * mu)


def _singular_u(z, mu):
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return (mu * mu + z * z) ** 0.25


def _singular_dz(z, mu):
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = mu * mu + z * z
    out = np.zeros(np.broadcast(z, mu).shape)
    good = s > 0.0
    zb, sb = np.broadcast_arrays(z, s)
    out[good] = 0.5 * zb[good] / sb[good] ** 0.75
    return out


def _singular_f(z, mu):
    # f = -mu^2 u_zz + u with u = (mu^2 + z^2)^(1/4); the flux term is
    # bounded and vanishes in the origin, where the value 0 is used.
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = mu * mu + z * z
    out = np.zeros(np.broadcast(z, mu).shape)
    good = s > 0.0
    zb, mb, sb = np.broadcast_arrays(z, mu, s)
    zg, mg, sg = zb[good], mb[good], sb[good]
    out[good] = (-mg * mg * (0.5 * sg ** -0.75 - 0.75 * zg * zg * sg ** -1.75)
                 + sg ** 0.25)
    return out


def _singular_g(side, mu):
    mu = np.asarray(mu, dtype=float)
    if side == SIDE_LEFT:
        return np.sqrt(mu)  # normal derivative vanishes at z = 0 for mu > 0
    s = mu * mu + 1.0
    return s ** 0.25 + 0.5 * mu * s ** -0.75


_LINE_LOCUS = 1.0 / math.sqrt(2.0)


def _line_u(z, mu):
    z = np.asarray(z, dtype=float)
    return (1.0 + _indicator(mu, _LINE_LOCUS)) * np.exp(-z * z)


def _line_dz(z, mu):
    return -2.0 * np.asarray(z, dtype=float) * _line_u(z, mu)


def _line_f(z, mu):
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return (1.0 + _indicator(mu, _LINE_LOCUS)) * np.exp(-z * z) * (
        mu * mu * (2.0 - 4.0 * z * z) + 1.0)


def _line_g(side, mu):
    mu = np.asarray(mu, dtype=float)
    c = 1.0 + _indicator(mu, _LINE_LOCUS)
    if side == SIDE_LEFT:
        return c * np.ones_like(mu)
    return c * math.exp(-1.0) * (1.0 - 2.0 * mu)


_CASE_TABLE = {
    CASE_SMOOTH: dict(
        coefficients=Coefficients({0: (1.0, 0.5)}),
        f=_smooth_f, g=_smooth_g, exact=_smooth_u, exact_dz=_smooth_dz,
        mu_locus=0.5),
    CASE_POINT_SINGULARITY: dict(
        coefficients=Coefficients({0: (1.0, 0.0)}),
        f=_singular_f, g=_singular_g, exact=_singular_u, exact_dz=_singular_dz,
        mu_locus=None),
    CASE_LINE_DISCONTINUITY: dict(
        coefficients=Coefficients({0: (1.0, 0.0)}),
        f=_line_f, g=_line_g, exact=_line_u, exact_dz=_line_dz,
        mu_locus=_LINE_LOCUS),
}


def make_case(name: str) -> ProblemData:
    """Build the named manufactured case (all three use L = 1)."""
    try:
        spec = _CASE_TABLE[name]
    except KeyError:
        raise ProblemError(f"unknown case {name!r}, expected one of {CASES}") from None
    return ProblemData(name=name, length=1.0, **spec)


def exact_u(case, z, mu):
    """Exact solution value; on the angular discontinuity locus the right limit."""
    return _lookup(case).exact(z, mu)


def source_f(case, z, mu):
    """Volume source of the manufactured case, defined off the locus."""
    return _lookup(case).f(z, mu)


def boundary_g(case, side, mu):
    """Robin boundary data g = u + (mu/sigma_t) dn u on the given side."""
    if side not in (SIDE_LEFT, SIDE_RIGHT):
        raise ProblemError(f"side must be {SIDE_LEFT!r} or {SIDE_RIGHT!r}, got {side!r}")
    return _lookup(case).g(side, mu)


def _lookup(case) -> ProblemData:
    if isinstance(case, ProblemData):
        return case
    return make_case(case)


def recover_odd(u_h, f_minus, z: float, mu: float, element: int | None = None) -> float:
    """Odd part of the intensity, (f_minus - mu du_h/dz) / sigma_t, element-locally.

    ``f_minus`` is the odd source component as a callable of (z, mu), or None
    for zero.  Points on element boundaries are ambiguous; pass ``element``
    to choose a side explicitly.
    """
    if element is None:
        element = u_h.locate(z, mu)
    el = u_h.mesh.element(element)
    sigma_t = u_h.mesh.sigma_t(el)
    du = u_h.eval_on(element, z, mu, deriv=True)
    fm = 0.0 if f_minus is None else float(np.asarray(f_minus(z, mu), dtype=float))
    return (fm - mu * du) / sigma_t
