"""Independent brute-force oracles for the test suite.

Everything here deliberately avoids the package's fast assembly paths: all
integrals are raw Gauss sums over pointwise shape-function evaluations, so
agreement with the production code is meaningful.
"""

import itertools
import math

import numpy as np

from slabdg.basis import TensorShape, gauss_rule
from slabdg.mesh import QuadTreeMesh


def leaf_offsets(mesh, shape):
    ids = sorted(mesh.leaves)
    return ids, {eid: i * shape.ndof for i, eid in enumerate(ids)}


def shape_values(shape, zhat, muhat):
    """All local shape values and reference-z derivatives on a point grid."""
    vals = np.empty((shape.ndof,) + np.broadcast(zhat, muhat).shape)
    ders = np.empty_like(vals)
    for a in range(shape.ndof):
        v, d = shape.eval_shape(a, zhat, muhat)
        vals[a], ders[a] = v, d
    return vals, ders


def dense_assemble(mesh: QuadTreeMesh, shape: TensorShape, lam=1.0, alpha=None):
    """Dense matrix of the penalized bilinear form by direct quadrature.

    Volume, boundary, and face terms are integrated basis pair by basis pair
    with generous Gauss orders.  The scattering term is excluded, matching
    the production operator.
    """
    from slabdg.basis import stability_alpha

    if alpha is None:
        alpha = stability_alpha(shape.k_z)
    ids, offsets = leaf_offsets(mesh, shape)
    n = len(ids) * shape.ndof
    mat = np.zeros((n, n))
    nq = max(shape.n_z, shape.n_mu) + 3
    rule = gauss_rule(nq)

    for eid in ids:
        el = mesh.element(eid)
        st = mesh.sigma_t(el)
        h, l = el.z.length, el.mu.length
        zhat = rule.points[:, None] * np.ones((1, nq))
        muhat = np.ones((nq, 1)) * rule.points[None, :]
        vals, ders = shape_values(shape, zhat, muhat)
        vals = vals / math.sqrt(h * l)
        ders = ders / (h * math.sqrt(h * l))
        mu_phys = el.mu.lo + l * rule.points
        w2 = np.outer(rule.weights * h, rule.weights * l)
        off = offsets[eid]
        for a in range(shape.ndof):
            for b in range(shape.ndof):
                integrand = (mu_phys[None, :] ** 2 / st) * ders[a] * ders[b] \
                    + st * vals[a] * vals[b]
                mat[off + a, off + b] += float(np.sum(w2 * integrand))
        # slab boundary terms, weight mu
        for side, zhat_val in (("left", 0.0), ("right", 1.0)):
            on_boundary = (el.iz == 0) if side == "left" else (el.iz + 1 == (1 << el.level))
            if not on_boundary:
                continue
            tv, _ = shape_values(shape, np.full(nq, zhat_val), rule.points)
            tv = tv / math.sqrt(h * l)
            w_mu = rule.weights * l * mu_phys
            for a in range(shape.ndof):
                for b in range(shape.ndof):
                    mat[off + a, off + b] += float(np.dot(w_mu, tv[a] * tv[b]))

    for face in mesh.interior_vertical_faces():
        el1, el2 = mesh.element(face.left), mesh.element(face.right)
        st1, st2 = mesh.sigma_t(el1), mesh.sigma_t(el2)
        d_f = 1.0 / (1.0 / (st1 * el1.z.length) + 1.0 / (st2 * el2.z.length))
        mu_q, w_q = rule.map_to(face.mu.lo, face.mu.hi)
        wmu = w_q * mu_q
        tr = []
        for el, st, zhat_val in ((el1, st1, 1.0), (el2, st2, 0.0)):
            h, l = el.z.length, el.mu.length
            muhat = (mu_q - el.mu.lo) / l
            v, d = shape_values(shape, np.full(mu_q.size, zhat_val), muhat)
            tr.append((v / math.sqrt(h * l), d / (h * math.sqrt(h * l)) * mu_q / st))
        off1, off2 = offsets[face.left], offsets[face.right]
        both = [(off1, 0), (off2, 1)]
        for (offa, sa), (offb, sb) in itertools.product(both, repeat=2):
            for a in range(shape.ndof):
                jump_a = tr[sa][0][a] * (1.0 if sa == 0 else -1.0)
                flux_a = 0.5 * tr[sa][1][a]
                for b in range(shape.ndof):
                    jump_b = tr[sb][0][b] * (1.0 if sb == 0 else -1.0)
                    flux_b = 0.5 * tr[sb][1][b]
                    val = float(np.dot(wmu, -flux_b * jump_a - lam * flux_a * jump_b
                                       + (alpha / d_f) * jump_a * jump_b))
                    mat[offa + a, offb + b] += val
    return mat


def brute_force_scattering(u, nq=12):
    """(sigma_s P u, v) by full 2D tensor quadrature, one entry per test dof.

    The angular average of u is only piecewise polynomial in z (kinks at
    every leaf boundary), so each test element's z-interval is split at all
    mesh breakpoints before applying Gauss quadrature.
    """
    mesh, shape = u.mesh, u.shape
    ids, offsets = leaf_offsets(mesh, shape)
    rule = gauss_rule(nq)
    out = np.zeros(len(ids) * shape.ndof)
    breaks = sorted({el.z.lo for el in mesh.leaf_elements()}
                    | {el.z.hi for el in mesh.leaf_elements()})

    def p_of(z):
        # angular average of u at one z by summing element integrals
        total = 0.0
        for eid in ids:
            el = mesh.element(eid)
            if not (el.z.lo < z < el.z.hi):
                continue
            mu_q, w_q = rule.map_to(el.mu.lo, el.mu.hi)
            vals = u.eval_on(eid, np.full(mu_q.size, z), mu_q)
            total += float(np.dot(w_q, vals))
        return total

    for eid in ids:
        el = mesh.element(eid)
        ss = mesh.sigma_s(el)
        h, l = el.z.length, el.mu.length
        pieces = [b for b in breaks if el.z.lo < b < el.z.hi]
        edges = [el.z.lo] + pieces + [el.z.hi]
        mu_q, wmu = rule.map_to(el.mu.lo, el.mu.hi)
        muhat = (mu_q[None, :] - el.mu.lo) / l
        off = offsets[eid]
        for z0, z1 in zip(edges, edges[1:]):
            z_q, wz = rule.map_to(z0, z1)
            p_vals = np.array([p_of(z) for z in z_q])
            zhat = (z_q[:, None] - el.z.lo) / h * np.ones((1, nq))
            vals, _ = shape_values(shape, zhat, np.ones((nq, 1)) * muhat)
            vals = vals / math.sqrt(h * l)
            w2 = np.outer(wz, wmu)
            for a in range(shape.ndof):
                out[off + a] += ss * float(np.sum(w2 * p_vals[:, None] * vals[a]))
    return out


def dorfler_brute_force(eta2, theta):
    """Smallest marked set by exhaustive subset search (tiny inputs only)."""
    ids = sorted(eta2)
    total = sum(eta2.values())
    best = None
    for r in range(len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            if sum(eta2[i] for i in combo) > theta * total:
                if best is None or len(combo) < len(best):
                    best = combo
        if best is not None:
            break
    return set(best) if best is not None else set()


def random_adaptive_mesh(rng, levels=2, steps=2, frac=0.3, L=1.0, coefficients=None):
    """Uniform start plus a few random marking rounds (hanging nodes likely)."""
    from slabdg.mesh import build_uniform, refine

    mesh = build_uniform(L, levels, coefficients or {0: (1.0, 0.0)})
    for _ in range(steps):
        ids = list(mesh.leaves)
        k = max(1, int(frac * len(ids)))
        marked = rng.choice(ids, size=k, replace=False)
        mesh = refine(mesh, {int(i) for i in marked})
    return mesh


def random_solution(rng, mesh, shape):
    from slabdg.assembly import DiscreteSolution

    n = len(mesh.leaves) * shape.ndof
    return DiscreteSolution(mesh, shape, rng.standard_normal(n))
