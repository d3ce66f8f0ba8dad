"""Penalty constants and the inverse inequality they come from.

The face penalty of the symmetric scheme needs alpha_F >= 1/2 + C_dt(k_z),
where C_dt(k) = 1 + 2 sqrt(C_ie(k)) and C_ie(k) is the constant of the
polynomial inverse inequality ||v'|| <= sqrt(C_ie)/h ||v||.  C_ie comes from
a (k+1)-dimensional generalized eigenvalue problem; this script prints the
table and then demonstrates the inequality on random polynomials.
"""

import numpy as np

from slabdg import PenaltyConstants, PolyBasis1D, compute_C_ie, gauss_rule

table = PenaltyConstants(kmax=6)
print(f"{'k':>2} {'C_ie':>12} {'C_dt':>12} {'alpha':>12}")
for k, c_ie, c_dt, alpha in table.rows():
    print(f"{k:>2} {c_ie:>12.6f} {c_dt:>12.6f} {alpha:>12.6f}")

print("\nSharpness check: Rayleigh quotients ||v'||^2 / ||v||^2 on [0, 1]")
rng = np.random.default_rng(1)
for k in (1, 2, 3):
    basis = PolyBasis1D(k)
    rule = gauss_rule(k + 2)
    vals = basis.eval(rule.points)
    ders = basis.deriv(rule.points)
    best = 0.0
    for _ in range(2000):
        c = rng.standard_normal(k + 1)
        v = c @ vals
        dv = c @ ders
        best = max(best, float(np.dot(rule.weights, dv * dv)
                               / np.dot(rule.weights, v * v)))
    print(f"  k={k}: sampled max {best:,.3f} vs C_ie {compute_C_ie(k):,.3f}")
