"""Legendre bases, tensor-product shape functions, Gauss rules, and the
inverse-inequality / discrete-trace constants that fix the face penalty.

All 1D bases are orthonormal Legendre polynomials shifted to the reference
interval [0, 1].  Local spaces on an element are tensor products with degree
``k_z + 1`` in the transport direction and ``k_mu`` in the angular direction,
so the local dimension is ``(k_z + 2) * (k_mu + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh


def _legendre_table(k: int, t: np.ndarray):
    """Values and derivatives of Legendre P_0..P_k at points t in [-1, 1].

    Uses the three-term recurrence for values and the derivative recurrence
    P'_{n+1} = P'_{n-1} + (2n+1) P_n, which is stable on the closed interval.
    """
    t = np.asarray(t, dtype=float)
    p = np.zeros((k + 1,) + t.shape)
    dp = np.zeros_like(p)
    p[0] = 1.0
    if k >= 1:
        p[1] = t
        dp[1] = 1.0
    for n in range(1, k):
        p[n + 1] = ((2 * n + 1) * t * p[n] - n * p[n - 1]) / (n + 1)
        dp[n + 1] = dp[n - 1] + (2 * n + 1) * p[n]
    return p, dp


@dataclass(frozen=True)
class PolyBasis1D:
    """Orthonormal basis of polynomials up to ``degree`` on [0, 1]."""

    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("polynomial degree must be nonnegative")

    @property
    def dim(self) -> int:
        return self.degree + 1

    def eval(self, x) -> np.ndarray:
        """Basis values at points x, shape (dim,) + x.shape."""
        x = np.asarray(x, dtype=float)
        p, _ = _legendre_table(self.degree, 2.0 * x - 1.0)
        scale = np.sqrt(2.0 * np.arange(self.degree + 1) + 1.0)
        return p * scale.reshape((-1,) + (1,) * x.ndim)

    def deriv(self, x) -> np.ndarray:
        """Basis first derivatives at points x, shape (dim,) + x.shape."""
        x = np.asarray(x, dtype=float)
        _, dp = _legendre_table(self.degree, 2.0 * x - 1.0)
        scale = 2.0 * np.sqrt(2.0 * np.arange(self.degree + 1) + 1.0)
        return dp * scale.reshape((-1,) + (1,) * x.ndim)


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points and weights on [0, 1]."""

    points: np.ndarray
    weights: np.ndarray
    order: int  # degree of polynomial exactness

    def map_to(self, lo: float, hi: float):
        """Points and weights mapped to the interval (lo, hi)."""
        h = hi - lo
        return lo + h * self.points, h * self.weights


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with n points on [0, 1], exact up to degree 2n-1."""
    if n < 1:
        raise ValueError("quadrature rule needs at least one point")
    t, w = leggauss(n)
    pts = 0.5 * (t + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(points=pts, weights=wts, order=2 * n - 1)


@lru_cache(maxsize=None)
def compute_C_ie(k: int) -> float:
    """Inverse-inequality constant for polynomials of degree k on an interval.

    Maximal generalized eigenvalue of D v = lambda M v on the unit interval,
    where D and M are the stiffness and mass matrices of any basis of the
    degree-k polynomials.  The value is basis independent; with the
    orthonormal Legendre basis M is the identity up to quadrature roundoff.
    """
    if k < 0:
        raise ValueError("degree must be nonnegative")
    if k == 0:
        return 0.0
    basis = PolyBasis1D(k)
    rule = gauss_rule(k + 2)
    v = basis.eval(rule.points)
    dv = basis.deriv(rule.points)
    d_mat = (dv * rule.weights) @ dv.T
    m_mat = (v * rule.weights) @ v.T
    eigvals = eigh(d_mat, m_mat, eigvals_only=True)
    lam = float(eigvals[-1])
    if not np.isfinite(lam) or lam < 0.0:
        raise ArithmeticError(f"eigenvalue solve for C_ie({k}) broke down")
    return lam


def C_dt(k: int) -> float:
    """Discrete trace constant 1 + 2 sqrt(C_ie(k))."""
    return 1.0 + 2.0 * np.sqrt(compute_C_ie(k))


def stability_alpha(k_z: int) -> float:
    """Smallest penalty parameter guaranteeing coercivity, 1/2 + C_dt(k_z)."""
    return 0.5 + C_dt(k_z)


@dataclass(frozen=True)
class PenaltyConstants:
    """Table of (C_ie, C_dt, alpha) for degrees 0..kmax."""

    kmax: int

    @cached_property
    def C_ie(self) -> dict:
        return {k: compute_C_ie(k) for k in range(self.kmax + 1)}

    @cached_property
    def C_dt(self) -> dict:
        return {k: C_dt(k) for k in range(self.kmax + 1)}

    def alpha(self, k_z: int) -> float:
        return 0.5 + self.C_dt[k_z]

    def rows(self):
        """Rows (k, C_ie, C_dt, alpha), suitable for CSV output."""
        return [(k, self.C_ie[k], self.C_dt[k], self.alpha(k))
                for k in range(self.kmax + 1)]


@dataclass(frozen=True)
class TensorShape:
    """Tensor-product local space: degree k_z + 1 in z, degree k_mu in mu."""

    k_z: int
    k_mu: int

    def __post_init__(self):
        if self.k_z < 0 or self.k_mu < 0:
            raise ValueError("degrees must be nonnegative")

    @property
    def n_z(self) -> int:
        return self.k_z + 2

    @property
    def n_mu(self) -> int:
        return self.k_mu + 1

    @property
    def ndof(self) -> int:
        return self.n_z * self.n_mu

    @cached_property
    def z_basis(self) -> PolyBasis1D:
        return PolyBasis1D(self.k_z + 1)

    @cached_property
    def mu_basis(self) -> PolyBasis1D:
        return PolyBasis1D(self.k_mu)

    def index(self, iz: int, imu: int) -> int:
        return iz * self.n_mu + imu

    def unravel(self, index: int):
        return divmod(index, self.n_mu)

    def eval_shape(self, index: int, zhat: float, muhat: float):
        """Value and reference-z derivative of one local shape function.

        Physical derivatives follow by the chain rule with the factor 1/h_K;
        the basis is orthonormal on the reference square.
        """
        if not 0 <= index < self.ndof:
            raise IndexError(f"shape index {index} out of range 0..{self.ndof - 1}")
        iz, imu = self.unravel(index)
        zh = np.asarray(zhat, dtype=float)
        mh = np.asarray(muhat, dtype=float)
        vz = self.z_basis.eval(zh)[iz]
        dvz = self.z_basis.deriv(zh)[iz]
        vm = self.mu_basis.eval(mh)[imu]
        return vz * vm, dvz * vm
