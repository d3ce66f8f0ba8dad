"""A posteriori error estimators and the solve-estimate-mark-refine loop.

Four estimators are provided.  The two hierarchical ones compare the current
solution against an enriched one (higher degree on the same mesh, or the same
degree on a uniformly refined mesh); they localize in the broken H1 norm,

    eta_K = ( ||mu d zeta/dz||_{L2(K)}^2 + ||zeta||_{L2(K)}^2 )^(1/2),

whose squares sum to the global value.  The local-problem estimator replaces
the global fine solve by independent element-local solves of the fine-mesh
residual equation.  The averaging estimator (lowest order only) measures the
distance to a continuous piecewise bilinear reconstruction and needs no
second solve.  Marking is done by the Dörfler bulk criterion.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (DiscreteSolution, NormKind, ScatteringOperator,
                       assemble, assemble_rhs, broken_h1_contributions,
                       embed_degree, error_report, norm, prolong)
from .basis import C_dt, TensorShape, gauss_rule
from .mesh import QuadTreeMesh, build_uniform, dorfler_mark, dump_mesh, refine, \
    uniform_refinement
from .problem import ProblemData
from .solver import source_iteration


class EstimatorKind(enum.Enum):
    P_HIER = "p_hier"
    H_HIER = "h_hier"
    LOCAL_PROBLEM = "local_problem"
    AVERAGING = "averaging"


@dataclass
class EstimateResult:
    """Global estimator value with per-leaf contributions for marking."""

    kind: EstimatorKind
    global_value: float
    contributions: dict
    norm_kind: NormKind
    global_value_vh: float | None = None
    solution: DiscreteSolution | None = None  # the (T, k) solution estimated
    zeta: DiscreteSolution | None = None      # enriched-space difference, if any


def _solve(mesh: QuadTreeMesh, shape: TensorShape, problem: ProblemData,
           alpha_F: float, tol: float = 1e-10):
    system = assemble(mesh, shape, problem.coefficients, lam=1.0, alpha_F=alpha_F)
    u, _ = source_iteration(system, problem, tol=tol)
    return u


def estimate_p(mesh: QuadTreeMesh, k: int, problem: ProblemData,
               tol: float = 1e-10) -> EstimateResult:
    """Hierarchical degree-enrichment estimator zeta = u_{T,k} - u_{T,k+1}.

    Both solves use the penalty 1/2 + C_dt(k+1), valid for either degree.
    """
    alpha = 0.5 + C_dt(k + 1)
    u_k = _solve(mesh, TensorShape(k, k), problem, alpha, tol)
    u_k1 = _solve(mesh, TensorShape(k + 1, k + 1), problem, alpha, tol)
    zeta = embed_degree(u_k, u_k1.shape) - u_k1
    contrib = broken_h1_contributions(zeta)
    total = math.sqrt(math.fsum(v * v for v in contrib.values()))
    return EstimateResult(kind=EstimatorKind.P_HIER, global_value=total,
                          contributions=contrib, norm_kind=NormKind.BROKEN_H1,
                          global_value_vh=norm(zeta, NormKind.VH),
                          solution=u_k, zeta=zeta)


def hierarchy_alphas(k: int) -> tuple[float, float]:
    """(coarse, fine) penalties making a_h the restriction of the refined form.

    Refining halves every h, so D_F halves; the coarse penalty must be twice
    the fine one, and the fine one must itself be coercive.
    """
    alpha_fine = 0.5 + C_dt(k)
    return 2.0 * alpha_fine, alpha_fine


def estimate_h(mesh: QuadTreeMesh, k: int, problem: ProblemData,
               tol: float = 1e-10) -> EstimateResult:
    """Hierarchical mesh-refinement estimator zeta = u_{T',k} - u_{T,k}.

    T' refines every leaf once.  Per-coarse-element contributions sum the
    four children's integrals.
    """
    alpha_coarse, alpha_fine = hierarchy_alphas(k)
    shape = TensorShape(k, k)
    u_c = _solve(mesh, shape, problem, alpha_coarse, tol)
    fine = uniform_refinement(mesh)
    u_f = _solve(fine, shape, problem, alpha_fine, tol)
    zeta = u_f - prolong(u_c, fine)
    contrib = _aggregate_to_parents(mesh, fine, broken_h1_contributions(zeta))
    total = math.sqrt(math.fsum(v * v for v in contrib.values()))
    return EstimateResult(kind=EstimatorKind.H_HIER, global_value=total,
                          contributions=contrib, norm_kind=NormKind.BROKEN_H1,
                          global_value_vh=norm(zeta, NormKind.VH),
                          solution=u_c, zeta=zeta)


def _aggregate_to_parents(coarse: QuadTreeMesh, fine: QuadTreeMesh,
                          fine_contrib: dict) -> dict:
    out = {eid: 0.0 for eid in coarse.leaves}
    for eid, val in fine_contrib.items():
        cur = eid
        while cur not in out:
            cur = fine.element(cur).parent
            if cur is None:
                raise KeyError(f"fine element {eid} has no coarse ancestor")
        out[cur] += val * val
    return {eid: math.sqrt(v) for eid, v in out.items()}


def estimate_local(mesh: QuadTreeMesh, k: int, problem: ProblemData,
                   u_coarse: DiscreteSolution) -> EstimateResult:
    """Element-local approximations of the mesh-refinement estimator.

    ``u_coarse`` must have been solved with the doubled penalty from
    :func:`hierarchy_alphas` so that the coarse form is the restriction of
    the refined one.  For each coarse leaf K the local problem

        a^K(eta_K, v) = (f, v) + <g, v> - a'(u_coarse, v)

    is solved on K's four children with trial and test functions extended by
    zero outside K; the local operator is the corresponding principal
    submatrix of the refined operator (child-child interior faces plus the
    one-sided terms of K's own faces), which is coercive.
    """
    _, alpha_fine = hierarchy_alphas(k)
    shape = TensorShape(k, k)
    fine = uniform_refinement(mesh)
    system = assemble(fine, shape, problem.coefficients, lam=1.0, alpha_F=alpha_fine)
    rhs = assemble_rhs(fine, shape, problem)
    u_on_fine = prolong(u_coarse, fine)

    has_scatter = any(ss != 0.0 for (_, ss) in fine.coefficients.values())
    scatter = ScatteringOperator(fine, shape) if has_scatter else None
    residual = rhs - system.matrix @ u_on_fine.coeffs
    if scatter is not None:
        residual += scatter.load_coeffs(u_on_fine.coeffs)

    eta = DiscreteSolution(fine, shape)
    dofmap = system.dofmap
    nloc = shape.ndof
    matrix = system.matrix
    for eid in mesh.leaf_ids:
        children = fine.element(eid).children
        idx = np.concatenate([np.arange(dofmap.offsets[c], dofmap.offsets[c] + nloc)
                              for c in children])
        local = matrix[np.ix_(idx, idx)].toarray()
        if scatter is not None:
            local -= _local_scattering(fine, shape, children)
        eta.coeffs[idx] = np.linalg.solve(local, residual[idx])

    contrib = _aggregate_to_parents(mesh, fine, broken_h1_contributions(eta))
    total = math.sqrt(math.fsum(v * v for v in contrib.values()))
    return EstimateResult(kind=EstimatorKind.LOCAL_PROBLEM, global_value=total,
                          contributions=contrib, norm_kind=NormKind.BROKEN_H1,
                          global_value_vh=norm(eta, NormKind.VH),
                          solution=u_coarse, zeta=eta)


def _local_scattering(fine: QuadTreeMesh, shape: TensorShape, children) -> np.ndarray:
    """(sigma_s P u, v) between functions supported on one parent element.

    Children sharing a z-half have identical z-intervals, so with the
    orthonormal bases the coupling is sigma_s * sqrt(l_a * l_b) between
    matching iz modes with imu = 0.
    """
    nloc = shape.ndof
    block = np.zeros((4 * nloc, 4 * nloc))
    els = [fine.element(c) for c in children]
    for a, ela in enumerate(els):
        for b_i, elb in enumerate(els):
            if ela.iz != elb.iz:
                continue
            ss = fine.sigma_s(elb)
            coef = ss * math.sqrt(ela.mu.length * elb.mu.length)
            for iz in range(shape.n_z):
                ia = a * nloc + shape.index(iz, 0)
                ib = b_i * nloc + shape.index(iz, 0)
                block[ib, ia] += coef
    return block


def estimate_averaging(mesh: QuadTreeMesh, u_h: DiscreteSolution) -> EstimateResult:
    """Distance to a continuous piecewise bilinear averaging of u_h.

    Only defined for the lowest-order pair k_z = k_mu = 0.  Nodal values are
    patch-area-weighted averages of the one-sided limits over all leaves
    whose closure contains the point; on each leaf the reconstruction is the
    bilinear interpolant of its four corner values and the contribution is
    the L2 distance to u_h.
    """
    if (u_h.shape.k_z, u_h.shape.k_mu) != (0, 0):
        raise ValueError("averaging estimator requires k_z = k_mu = 0")
    patches = mesh.corner_patches()
    values: dict = {}
    for point, ids in patches.items():
        areas = np.array([mesh.element(i).area for i in ids])
        vals = np.array([u_h.eval_on(i, point[0], point[1]) for i in ids])
        values[point] = float(np.dot(areas, vals) / areas.sum())

    # 2x2 Gauss is exact for the squared difference (bidegree <= 2)
    rule = gauss_rule(3)
    xq = rule.points
    contrib = {}
    for eid in mesh.leaf_ids:
        el = mesh.element(eid)
        z0, z1 = el.z.lo, el.z.hi
        m0, m1 = el.mu.lo, el.mu.hi
        v00 = values[(z0, m0)]
        v10 = values[(z1, m0)]
        v01 = values[(z0, m1)]
        v11 = values[(z1, m1)]
        zq = z0 + (z1 - z0) * xq
        mq = m0 + (m1 - m0) * xq
        s = (zq[:, None] - z0) / (z1 - z0)
        t = (mq[None, :] - m0) / (m1 - m0)
        tilde = (v00 * (1 - s) * (1 - t) + v10 * s * (1 - t)
                 + v01 * (1 - s) * t + v11 * s * t)
        uh_vals = u_h.eval_on(eid, zq[:, None], mq[None, :])
        w2 = np.outer(rule.weights, rule.weights) * el.area
        contrib[eid] = math.sqrt(float(np.sum(w2 * (uh_vals - tilde) ** 2)))
    total = math.sqrt(math.fsum(v * v for v in contrib.values()))
    return EstimateResult(kind=EstimatorKind.AVERAGING, global_value=total,
                          contributions=contrib, norm_kind=NormKind.L2,
                          solution=u_h)


@dataclass
class AdaptStep:
    """One record of the adaptive loop's run log."""

    step: int
    n_elements: int
    dofs: int
    estimate: float
    error_broken_h1: float | None
    error_l2: float | None
    seconds: float

    def csv_row(self, theta: float, kind: EstimatorKind) -> str:
        fmt = lambda v: "" if v is None else f"{v:.6e}"
        return (f"{self.step},{self.n_elements},{self.dofs},"
                f"{fmt(self.error_broken_h1)},{fmt(self.error_l2)},"
                f"{self.estimate:.6e},{theta},{kind.value}")


@dataclass
class AdaptiveRun:
    """Run log of a solve-estimate-mark-refine loop."""

    problem: str
    k: int
    kind: EstimatorKind
    theta: float
    steps: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    converged: bool = False

    CSV_HEADER = "step,N,dofs,error_brokenH1,error_L2,estimator,theta,kind"

    def csv_lines(self):
        yield self.CSV_HEADER
        for s in self.steps:
            yield s.csv_row(self.theta, self.kind)

    def mesh_dump(self, step: int) -> str:
        return dump_mesh(self.meshes[step])


def run_estimator(mesh: QuadTreeMesh, k: int, problem: ProblemData,
                  kind: EstimatorKind, tol: float = 1e-10) -> EstimateResult:
    """Solve on the mesh and evaluate the requested estimator."""
    if kind is EstimatorKind.P_HIER:
        return estimate_p(mesh, k, problem, tol)
    if kind is EstimatorKind.H_HIER:
        return estimate_h(mesh, k, problem, tol)
    if kind is EstimatorKind.LOCAL_PROBLEM:
        alpha_coarse, _ = hierarchy_alphas(k)
        u_c = _solve(mesh, TensorShape(k, k), problem, alpha_coarse, tol)
        return estimate_local(mesh, k, problem, u_c)
    if kind is EstimatorKind.AVERAGING:
        if k != 0:
            raise ValueError("averaging estimator requires k = 0")
        u_h = _solve(mesh, TensorShape(0, 0), problem, 0.5 + C_dt(0), tol)
        return estimate_averaging(mesh, u_h)
    raise ValueError(f"unknown estimator kind {kind}")


def adapt_loop(problem: ProblemData, k: int, kind: EstimatorKind,
               theta: float = 0.75, max_dofs: int | None = None,
               max_steps: int | None = None, initial_levels: int = 2,
               tol: float = 1e-10, keep_meshes: bool = True) -> AdaptiveRun:
    """Dörfler-driven adaptive refinement until a dof or step budget is hit.

    Each step solves, estimates, records (element count, dofs, true errors
    when the case has an exact solution, estimator value), then marks and
    refines.  All-zero indicator contributions stop the loop early with the
    converged flag set.
    """
    if max_dofs is None and max_steps is None:
        raise ValueError("need a dof budget or a step budget")
    mesh = build_uniform(problem.length, initial_levels,
                         problem.coefficients.as_dict())
    run = AdaptiveRun(problem=problem.name, k=k, kind=kind, theta=theta)
    step = 0
    while True:
        t0 = time.perf_counter()
        result = run_estimator(mesh, k, problem, kind, tol)
        err_t = err_l2 = None
        if problem.exact is not None:
            report = error_report(result.solution, problem)
            err_t, err_l2 = report["broken_h1"], report["l2"]
        dofs = mesh.n_leaves * TensorShape(k, k).ndof
        run.steps.append(AdaptStep(
            step=step, n_elements=mesh.n_leaves, dofs=dofs,
            estimate=result.global_value, error_broken_h1=err_t,
            error_l2=err_l2, seconds=time.perf_counter() - t0))
        if keep_meshes:
            run.meshes.append(mesh)
        if max_steps is not None and step + 1 >= max_steps:
            break
        if max_dofs is not None and dofs >= max_dofs:
            break
        marked = dorfler_mark(result.contributions, theta)
        if not marked:
            run.converged = True
            break
        mesh = refine(mesh, marked)
        step += 1
    return run


def fit_rate(dofs, values, window: str = "secant") -> float:
    """Observed decay rate of log(value) vs log(dofs).

    ``'secant'`` takes the endpoint-to-endpoint slope, the average rate over
    the whole run; adaptive error curves are staircases (flat treads between
    drops when the refinement front advances a level), which makes windowed
    least-squares fits swing with the phase, so the secant is the stable
    summary.  ``'all'`` and ``'tail'`` are least-squares fits over every
    point or the last half.
    """
    dofs = np.asarray(dofs, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0.0
    dofs, values = dofs[keep], values[keep]
    if dofs.size < 2:
        raise ValueError("need at least two positive points to fit a rate")
    if window == "secant":
        return float((np.log(values[-1]) - np.log(values[0]))
                     / (np.log(dofs[-1]) - np.log(dofs[0])))
    start = 0
    if window == "tail" and dofs.size > 3:
        start = dofs.size // 2
    slope = np.polyfit(np.log(dofs[start:]), np.log(values[start:]), 1)[0]
    return float(slope)
