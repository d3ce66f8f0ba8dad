"""Assembly of the interior-penalty bilinear forms, right-hand sides, the
scattering application, and all mesh-dependent norms and error measures.

The assembled sparse operator realizes the transport part of the scheme:
volume terms (mu^2/sigma_t du, dv) + (sigma_t u, v), the weighted boundary
product, and per interior vertical face the consistency terms

    - int_F ( {{(mu/sigma_t) du}} [[v]] + lambda {{(mu/sigma_t) dv}} [[u]] ) mu dmu

plus the jump penalty (alpha_F / D_F) int_F [[u]][[v]] mu dmu.  The angular
scattering term is never assembled into the matrix; it is applied to
right-hand sides only (see :class:`ScatteringOperator`), matching the source
iteration's lagged treatment.

Local bases are L2-orthonormal on each element, so element mass matrices are
identity blocks, L2 norms of discrete functions are coefficient norms, and
projections between nested spaces reduce to small transfer matrices.  The
jump convention is [[v]] = v_left - v_right with "left" the element of
smaller z.
"""

from __future__ import annotations

import enum
import math
import warnings
from bisect import bisect_left
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .basis import C_dt, TensorShape, gauss_rule, stability_alpha
from .mesh import MeshError, QuadTreeMesh, VerticalFace
from .problem import SIDE_LEFT, SIDE_RIGHT, Coefficients, ProblemData


class AssemblyError(RuntimeError):
    """Assembly failed (degenerate geometry or missing coefficients)."""


class AmbiguousPointError(ValueError):
    """Point evaluation requested on an element boundary."""


@dataclass(frozen=True)
class DofMap:
    """Contiguous per-leaf offsets into the global coefficient vector."""

    offsets: Mapping[int, int]
    n_local: int
    ndof: int

    def slice_of(self, eid: int) -> slice:
        off = self.offsets[eid]
        return slice(off, off + self.n_local)


class NormKind(enum.Enum):
    VH = "Vh"
    STAR = "Star"
    BROKEN_H1 = "BrokenH1"
    L2 = "L2"
    L2_GAMMA_MU = "L2GammaMu"


def _mu_segments(lo: float, hi: float, locus: float | None):
    """Split (lo, hi) at an interior angular discontinuity locus."""
    if locus is not None and lo < locus < hi:
        return ((lo, locus), (locus, hi))
    return ((lo, hi),)


class _Space:
    """Per-(mesh, shape) workspace: leaf ordering, geometry arrays, and the
    element-independent 1D Gram matrices used by all assembly routines."""

    def __init__(self, mesh: QuadTreeMesh, shape: TensorShape):
        self.mesh = mesh
        self.shape = shape
        self.leaf_ids = mesh.leaf_ids
        self.pos = {eid: i for i, eid in enumerate(self.leaf_ids)}
        n = len(self.leaf_ids)
        self.h = np.empty(n)
        self.zlo = np.empty(n)
        self.mulo = np.empty(n)
        self.mulen = np.empty(n)
        self.st = np.empty(n)
        self.ss = np.empty(n)
        for i, eid in enumerate(self.leaf_ids):
            el = mesh.element(eid)
            self.h[i] = el.z.length
            self.zlo[i] = el.z.lo
            self.mulo[i] = el.mu.lo
            self.mulen[i] = el.mu.length
            self.st[i] = mesh.sigma_t(el)
            self.ss[i] = mesh.sigma_s(el)
        if np.any(self.h <= 0.0) or np.any(self.mulen <= 0.0):
            raise AssemblyError("degenerate element in mesh")

        self.n_local = shape.ndof
        self.dofmap = DofMap(
            offsets={eid: i * self.n_local for i, eid in enumerate(self.leaf_ids)},
            n_local=self.n_local, ndof=n * self.n_local)

        zb, mb = shape.z_basis, shape.mu_basis
        rule_z = gauss_rule(shape.n_z + 1)
        dz_vals = zb.deriv(rule_z.points)
        self.Dz = (dz_vals * rule_z.weights) @ dz_vals.T
        rule_m = gauss_rule(shape.n_mu + 1)
        m_vals = mb.eval(rule_m.points)
        wm = rule_m.weights
        self.M1 = (m_vals * (wm * rule_m.points)) @ m_vals.T
        self.M2 = (m_vals * (wm * rule_m.points ** 2)) @ m_vals.T
        self.psi0 = zb.eval(np.array([0.0]))[:, 0]
        self.psi1 = zb.eval(np.array([1.0]))[:, 0]
        self.dpsi0 = zb.deriv(np.array([0.0]))[:, 0]
        self.dpsi1 = zb.deriv(np.array([1.0]))[:, 0]
        self.face_rule = gauss_rule(shape.k_mu + 3)
        self._face_entries = None

    # -- per-element blocks -------------------------------------------------

    def mass_mu_weighted(self, i: int, power: int) -> np.ndarray:
        """Angular Gram matrix with weight mu**power on leaf i (power 1 or 2)."""
        a, l = self.mulo[i], self.mulen[i]
        eye = np.eye(self.shape.n_mu)
        if power == 1:
            return a * eye + l * self.M1
        return a * a * eye + 2.0 * a * l * self.M1 + l * l * self.M2

    def transport_block(self, i: int, weight_sigma: bool = True) -> np.ndarray:
        """Quadratic form of the weighted z-derivative on leaf i."""
        scale = 1.0 / (self.h[i] ** 2)
        if weight_sigma:
            scale /= self.st[i]
        return scale * np.kron(self.Dz, self.mass_mu_weighted(i, 2))

    def boundary_block(self, i: int, side: str) -> np.ndarray:
        psi = self.psi0 if side == SIDE_LEFT else self.psi1
        return np.kron(np.outer(psi, psi), self.mass_mu_weighted(i, 1)) / self.h[i]

    # -- face data ------------------------------------------------------------

    def face_entries(self):
        """Per interior face: global dof indices, jump rows, average-flux rows,
        mu-weighted quadrature weights, and the dimensionless D_F."""
        if self._face_entries is not None:
            return self._face_entries
        out = []
        for face in self.mesh.interior_vertical_faces():
            out.append(self._build_face(face))
        self._face_entries = out
        return out

    def _build_face(self, face: VerticalFace):
        li, ri = self.pos[face.left], self.pos[face.right]
        a, b = face.mu.lo, face.mu.hi
        mu_q, w_q = self.face_rule.map_to(a, b)
        wmu = w_q * mu_q
        nloc, n_mu = self.n_local, self.shape.n_mu

        d_f = 1.0 / (1.0 / (self.st[li] * self.h[li]) + 1.0 / (self.st[ri] * self.h[ri]))

        rows_j = np.empty((2 * nloc, mu_q.size))
        rows_g = np.empty((2 * nloc, mu_q.size))
        for k, (i, psi, dpsi, sign) in enumerate(
                ((li, self.psi1, self.dpsi1, 1.0), (ri, self.psi0, self.dpsi0, -1.0))):
            x_mu = self.shape.mu_basis.eval((mu_q - self.mulo[i]) / self.mulen[i])
            x_mu = x_mu / math.sqrt(self.mulen[i])
            vz = psi / math.sqrt(self.h[i])
            fz = dpsi / (self.h[i] * math.sqrt(self.h[i]) * self.st[i])
            block_j = sign * vz[:, None, None] * x_mu[None, :, :]
            block_g = 0.5 * fz[:, None, None] * (mu_q * x_mu)[None, :, :]
            rows_j[k * nloc:(k + 1) * nloc] = block_j.reshape(nloc, -1)
            rows_g[k * nloc:(k + 1) * nloc] = block_g.reshape(nloc, -1)

        off_l = self.dofmap.offsets[face.left]
        off_r = self.dofmap.offsets[face.right]
        idx = np.concatenate([np.arange(off_l, off_l + nloc), np.arange(off_r, off_r + nloc)])
        return idx, rows_j, rows_g, wmu, d_f

    def block(self, coeffs: np.ndarray, eid: int) -> np.ndarray:
        off = self.dofmap.offsets[eid]
        return coeffs[off:off + self.n_local].reshape(self.shape.n_z, self.shape.n_mu)


def _get_space(mesh: QuadTreeMesh, shape: TensorShape) -> _Space:
    key = ("space", shape.k_z, shape.k_mu)
    space = mesh._cache.get(key)
    if space is None:
        space = _Space(mesh, shape)
        mesh._cache[key] = space
    return space


def build_dofmap(mesh: QuadTreeMesh, shape: TensorShape) -> DofMap:
    return _get_space(mesh, shape).dofmap


class DiscreteSolution:
    """Broken tensor-product polynomial bound to a mesh and degree pair.

    Coefficients are stored in one flat vector ordered by ascending element
    id, (iz, imu)-major within the element.  Because the local bases are
    orthonormal, the Euclidean norm of the vector is the L2(Omega) norm.
    """

    def __init__(self, mesh: QuadTreeMesh, shape: TensorShape, coeffs: np.ndarray | None = None):
        self.mesh = mesh
        self.shape = shape
        self.space = _get_space(mesh, shape)
        self.dofmap = self.space.dofmap
        if coeffs is None:
            coeffs = np.zeros(self.dofmap.ndof)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.dofmap.ndof,):
            raise ValueError(f"coefficient vector must have length {self.dofmap.ndof}")
        self.coeffs = coeffs

    def copy(self) -> "DiscreteSolution":
        return DiscreteSolution(self.mesh, self.shape, self.coeffs.copy())

    def block(self, eid: int) -> np.ndarray:
        """(n_z, n_mu) coefficient block of one leaf (a writable view)."""
        return self.space.block(self.coeffs, eid)

    def __sub__(self, other: "DiscreteSolution") -> "DiscreteSolution":
        self._check_same_space(other)
        return DiscreteSolution(self.mesh, self.shape, self.coeffs - other.coeffs)

    def __add__(self, other: "DiscreteSolution") -> "DiscreteSolution":
        self._check_same_space(other)
        return DiscreteSolution(self.mesh, self.shape, self.coeffs + other.coeffs)

    def _check_same_space(self, other):
        if other.mesh is not self.mesh or other.shape != self.shape:
            raise ValueError("solutions live in different discrete spaces")

    def locate(self, z: float, mu: float) -> int:
        """Leaf whose interior contains (z, mu); boundary points are ambiguous."""
        cached = self.mesh._cache.get("leaf_index")
        if cached is None:
            index = {(el.level, el.iz, el.imu): el.id
                     for el in self.mesh.leaf_elements()}
            levels = sorted({key[0] for key in index})
            cached = (index, levels)
            self.mesh._cache["leaf_index"] = cached
        index, levels = cached
        for level in levels:
            n = 1 << level
            iz = int(z / self.mesh.L * n)
            imu = int(mu * n)
            eid = index.get((level, min(iz, n - 1), min(imu, n - 1)))
            if eid is not None:
                el = self.mesh.element(eid)
                if el.z.lo < z < el.z.hi and el.mu.lo < mu < el.mu.hi:
                    return eid
                raise AmbiguousPointError(
                    f"point ({z}, {mu}) lies on the boundary of element {eid}")
        raise AmbiguousPointError(f"point ({z}, {mu}) lies on an element boundary")

    def eval_on(self, eid: int, z, mu, deriv: bool = False):
        """Evaluate the element polynomial (or its z-derivative) at (z, mu)."""
        el = self.mesh.element(eid)
        i = self.space.pos[eid]
        zh = (np.asarray(z, dtype=float) - el.z.lo) / self.space.h[i]
        mh = (np.asarray(mu, dtype=float) - self.space.mulo[i]) / self.space.mulen[i]
        vz = self.shape.z_basis.deriv(zh) if deriv else self.shape.z_basis.eval(zh)
        vm = self.shape.mu_basis.eval(mh)
        c = self.block(eid)
        scale = 1.0 / math.sqrt(self.space.h[i] * self.space.mulen[i])
        if deriv:
            scale /= self.space.h[i]
        val = scale * np.einsum("i...,ij,j...->...", vz, c, vm)
        return float(val) if val.ndim == 0 else val

    def eval(self, z: float, mu: float) -> float:
        return self.eval_on(self.locate(z, mu), z, mu)

    def eval_dz(self, z: float, mu: float) -> float:
        return self.eval_on(self.locate(z, mu), z, mu, deriv=True)


@dataclass
class AssembledSystem:
    """Sparse operator for the scattering-free form b_h plus metadata."""

    matrix: sp.csr_matrix
    mesh: QuadTreeMesh
    shape: TensorShape
    dofmap: DofMap
    lam: float
    alpha_F: float

    @property
    def ndof(self) -> int:
        return self.dofmap.ndof

    def max_asymmetry(self) -> float:
        diff = (self.matrix - self.matrix.T).tocoo()
        if diff.nnz == 0:
            return 0.0
        scale = max(1.0, float(np.max(np.abs(self.matrix.data))))
        return float(np.max(np.abs(diff.data))) / scale


@dataclass(frozen=True)
class FaceCoupling:
    """Local face matrices split into the four neighbor blocks."""

    face: VerticalFace
    D: float
    LL: np.ndarray
    LR: np.ndarray
    RL: np.ndarray
    RR: np.ndarray


def _normalize_mesh(mesh: QuadTreeMesh, coefficients) -> QuadTreeMesh:
    if coefficients is None:
        return mesh
    if isinstance(coefficients, Coefficients):
        coefficients = coefficients.as_dict()
    if coefficients == mesh.coefficients:
        return mesh
    return mesh.with_coefficients(coefficients)


def assemble(mesh: QuadTreeMesh, shape: TensorShape, coefficients=None,
             lam: float = 1.0, alpha_F: float | None = None) -> AssembledSystem:
    """Assemble the sparse operator of the lambda-family bilinear form.

    ``lam`` = 1, 0, -1 give the symmetric, incomplete, and non-symmetric
    interior-penalty variants.  ``alpha_F`` defaults to the coercivity
    threshold 1/2 + C_dt(k_z); for lam = 1 a smaller value loses the
    guarantee and triggers a warning.  The scattering term is excluded.
    """
    if not -1.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [-1, 1], got {lam}")
    mesh = _normalize_mesh(mesh, coefficients)
    if alpha_F is None:
        alpha_F = stability_alpha(shape.k_z)
    if lam == 1.0 and alpha_F < stability_alpha(shape.k_z) - 1e-12:
        warnings.warn(
            f"alpha_F={alpha_F} is below the coercivity threshold "
            f"{stability_alpha(shape.k_z)} for the symmetric scheme",
            stacklevel=2)
    space = _get_space(mesh, shape)
    nloc = space.n_local
    rows, cols, vals = [], [], []

    eye = np.eye(nloc)
    for i, eid in enumerate(space.leaf_ids):
        el = mesh.element(eid)
        block = space.transport_block(i) + space.st[i] * eye
        if el.iz == 0:
            block = block + space.boundary_block(i, SIDE_LEFT)
        if el.iz + 1 == (1 << el.level):
            block = block + space.boundary_block(i, SIDE_RIGHT)
        off = space.dofmap.offsets[eid]
        idx = np.arange(off, off + nloc)
        rows.append(np.repeat(idx, nloc))
        cols.append(np.tile(idx, nloc))
        vals.append(block.ravel())

    for idx, rows_j, rows_g, wmu, d_f in space.face_entries():
        b_mat = (rows_j * wmu) @ rows_g.T
        block = -b_mat - lam * b_mat.T + (alpha_F / d_f) * ((rows_j * wmu) @ rows_j.T)
        m = idx.size
        rows.append(np.repeat(idx, m))
        cols.append(np.tile(idx, m))
        vals.append(block.ravel())

    n = space.dofmap.ndof
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return AssembledSystem(matrix=matrix, mesh=mesh, shape=shape,
                           dofmap=space.dofmap, lam=lam, alpha_F=alpha_F)


def face_coupling(mesh: QuadTreeMesh, shape: TensorShape, face: VerticalFace,
                  lam: float = 1.0, alpha_F: float | None = None) -> FaceCoupling:
    """Local coupling blocks of a single interior face (debugging aid)."""
    if alpha_F is None:
        alpha_F = stability_alpha(shape.k_z)
    space = _get_space(mesh, shape)
    _, rows_j, rows_g, wmu, d_f = space._build_face(face)
    b_mat = (rows_j * wmu) @ rows_g.T
    block = -b_mat - lam * b_mat.T + (alpha_F / d_f) * ((rows_j * wmu) @ rows_j.T)
    n = space.n_local
    return FaceCoupling(face=face, D=d_f, LL=block[:n, :n], LR=block[:n, n:],
                        RL=block[n:, :n], RR=block[n:, n:])


def assemble_rhs(mesh: QuadTreeMesh, shape: TensorShape, problem: ProblemData) -> np.ndarray:
    """Load vector (f, v) + <g, v> of the discrete problem.

    Volume quadrature uses max(k_z+2, k_mu+1)+2 Gauss points per direction,
    boundary quadrature k_mu+3 points; angular intervals are split at the
    case's discontinuity locus so quadrature points never straddle it.
    """
    mesh = _normalize_mesh(mesh, problem.coefficients)
    space = _get_space(mesh, shape)
    locus = problem.mu_locus
    out = np.zeros(space.dofmap.ndof)

    # data are not polynomials: four extra points make the entries stable to
    # below 1e-12 under quadrature refinement for the shipped cases
    n_q = max(shape.n_z, shape.n_mu) + 6
    rule = gauss_rule(n_q)
    psi_ref = shape.z_basis.eval(rule.points)          # (n_z, n_q)
    for i, eid in enumerate(space.leaf_ids):
        h, zlo = space.h[i], space.zlo[i]
        mulo, mulen = space.mulo[i], space.mulen[i]
        z_q = zlo + h * rule.points
        w_z = h * rule.weights
        block = np.zeros((shape.n_z, shape.n_mu))
        for (c, d) in _mu_segments(mulo, mulo + mulen, locus):
            mu_q = c + (d - c) * rule.points
            w_mu = (d - c) * rule.weights
            chi = shape.mu_basis.eval((mu_q - mulo) / mulen)   # (n_mu, n_q)
            f_vals = problem.f(z_q[:, None], mu_q[None, :])    # (n_q, n_q)
            block += (psi_ref * w_z) @ f_vals @ (chi * w_mu).T
        off = space.dofmap.offsets[eid]
        out[off:off + space.n_local] += block.ravel() / math.sqrt(h * mulen)

    b_rule = gauss_rule(shape.k_mu + 7)
    for bface in mesh.boundary_faces():
        i = space.pos[bface.element]
        psi = space.psi0 if bface.side == SIDE_LEFT else space.psi1
        mulo, mulen = space.mulo[i], space.mulen[i]
        vec = np.zeros(shape.n_mu)
        for (c, d) in _mu_segments(bface.mu.lo, bface.mu.hi, locus):
            mu_q, w_q = b_rule.map_to(c, d)
            chi = shape.mu_basis.eval((mu_q - mulo) / mulen)
            g_vals = problem.g(bface.side, mu_q)
            vec += chi @ (w_q * mu_q * g_vals)
        block = np.outer(psi, vec) / math.sqrt(space.h[i] * mulen)
        off = space.dofmap.offsets[bface.element]
        out[off:off + space.n_local] += block.ravel()
    return out


class ScatteringOperator:
    """Load vector of (sigma_s P u, v) for discrete u, exact for polynomials.

    The angular average P u is a piecewise polynomial in z on the breakpoint
    refinement of all leaf z-intervals; it is tabulated per strip at Gauss
    points and integrated against the angular averages of the test functions.
    """

    def __init__(self, mesh: QuadTreeMesh, shape: TensorShape):
        self.space = space = _get_space(mesh, shape)
        self.shape = shape
        m, boxes = mesh._scaled_boxes()
        xs = sorted({x for box in boxes.values() for x in (box[0], box[1])})
        scale = 1 << m
        z_of = [mesh.L * x / scale for x in xs]
        rule = gauss_rule(shape.n_z)
        self.strips = []  # (wphys, members) with members = list of (leaf pos, Z)
        members_of = [[] for _ in range(len(xs) - 1)]
        for eid, (x0, x1, _, _) in boxes.items():
            i = space.pos[eid]
            s0 = bisect_left(xs, x0)
            s1 = bisect_left(xs, x1)
            for s in range(s0, s1):
                members_of[s].append(i)
        for s, members in enumerate(members_of):
            z0, z1 = z_of[s], z_of[s + 1]
            z_q = z0 + (z1 - z0) * rule.points
            wphys = (z1 - z0) * rule.weights
            entry = []
            for i in members:
                zh = (z_q - space.zlo[i]) / space.h[i]
                z_mat = shape.z_basis.eval(zh) * math.sqrt(space.mulen[i] / space.h[i])
                entry.append((i, z_mat))
            self.strips.append((wphys, entry))

    def load_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        space, n_mu = self.space, self.shape.n_mu
        out = np.zeros_like(coeffs)
        blocks = coeffs.reshape(-1, self.shape.n_z, n_mu)
        out_blocks = out.reshape(-1, self.shape.n_z, n_mu)
        for wphys, entry in self.strips:
            pu = np.zeros(wphys.size)
            for i, z_mat in entry:
                pu += z_mat.T @ blocks[i, :, 0]
            wpu = wphys * pu
            for i, z_mat in entry:
                out_blocks[i, :, 0] += space.ss[i] * (z_mat @ wpu)
        return out

    def load(self, u: DiscreteSolution) -> np.ndarray:
        return self.load_coeffs(u.coeffs)

    def dot(self, u_coeffs: np.ndarray, v_coeffs: np.ndarray) -> float:
        """(sigma_s P u, v) for two coefficient vectors."""
        return float(self.load_coeffs(u_coeffs) @ v_coeffs)


def _get_scattering(mesh: QuadTreeMesh, shape: TensorShape) -> ScatteringOperator:
    key = ("scatter", shape.k_z, shape.k_mu)
    op = mesh._cache.get(key)
    if op is None:
        op = ScatteringOperator(mesh, shape)
        mesh._cache[key] = op
    return op


def apply_scattering(u: DiscreteSolution) -> np.ndarray:
    """Load vector of (sigma_s P u, v) over the test space of u."""
    return _get_scattering(u.mesh, u.shape).load(u)


# -- norms of discrete functions ---------------------------------------------


def _jump_values(space: _Space, coeffs: np.ndarray):
    """Per face: (jump values at quad points, avg flux values, wmu, D_F)."""
    for idx, rows_j, rows_g, wmu, d_f in space.face_entries():
        local = coeffs[idx]
        yield rows_j.T @ local, rows_g.T @ local, wmu, d_f


def _boundary_quadratic(space: _Space, coeffs: np.ndarray) -> float:
    total = 0.0
    for bface in space.mesh.boundary_faces():
        i = space.pos[bface.element]
        block = space.boundary_block(i, bface.side)
        local = coeffs[space.dofmap.slice_of(bface.element)]
        total += float(local @ block @ local)
    return total


def norm(u: DiscreteSolution, kind: NormKind) -> float:
    """Mesh-dependent norm of a discrete function."""
    space = u.space
    c = u.coeffs
    if kind is NormKind.L2:
        return float(np.linalg.norm(c))
    if kind is NormKind.L2_GAMMA_MU:
        return math.sqrt(_boundary_quadratic(space, c))
    if kind is NormKind.BROKEN_H1:
        return math.sqrt(math.fsum(v * v for v in broken_h1_contributions(u).values()))

    # Vh: a_h^e(v, v) plus the penalty-weighted jumps; Star adds the
    # D_F-weighted average fluxes.
    total = 0.0
    for i, eid in enumerate(space.leaf_ids):
        block = u.block(eid)
        m_mu2 = space.mass_mu_weighted(i, 2)
        total += float(np.vdot(block, space.Dz @ block @ m_mu2.T)) / (space.h[i] ** 2 * space.st[i])
        total += space.st[i] * float(np.vdot(block, block))
    if np.any(space.ss != 0.0):
        total -= _get_scattering(u.mesh, u.shape).dot(c, c)
    total += _boundary_quadratic(space, c)
    star_extra = 0.0
    for jumps, fluxes, wmu, d_f in _jump_values(space, c):
        total += float(np.dot(wmu, jumps * jumps)) / d_f
        if kind is NormKind.STAR:
            star_extra += d_f * float(np.dot(wmu, fluxes * fluxes))
    if kind is NormKind.STAR:
        total += star_extra / C_dt(u.shape.k_z)
    elif kind is not NormKind.VH:
        raise ValueError(f"unknown norm kind {kind}")
    return math.sqrt(max(total, 0.0))


def broken_h1_contributions(u: DiscreteSolution) -> dict[int, float]:
    """Per-leaf values ( ||mu du/dz||_K^2 + ||u||_K^2 )^(1/2)."""
    space = u.space
    out = {}
    for i, eid in enumerate(space.leaf_ids):
        block = u.block(eid)
        m_mu2 = space.mass_mu_weighted(i, 2)
        h1 = float(np.vdot(block, space.Dz @ block @ m_mu2.T)) / space.h[i] ** 2
        out[eid] = math.sqrt(h1 + float(np.vdot(block, block)))
    return out


def quadratic_form(system: AssembledSystem, coeffs: np.ndarray,
                   include_scattering: bool = True) -> float:
    """a_h(v, v) for a coefficient vector v (scattering subtracted by default)."""
    val = float(coeffs @ (system.matrix @ coeffs))
    space = _get_space(system.mesh, system.shape)
    if include_scattering and np.any(space.ss != 0.0):
        val -= _get_scattering(system.mesh, system.shape).dot(coeffs, coeffs)
    return val


# -- errors against exact solutions -------------------------------------------


def _error_pieces(u_h: DiscreteSolution, problem: ProblemData, with_star: bool = False):
    """Squared error contributions of u - u_h, term by term.

    Element quadrature uses max(k_z+1, k_mu)+4 Gauss points per direction
    with angular intervals split at the discontinuity locus.  Jumps of the
    exact solution across vertical faces vanish by continuity in z, so the
    face jump terms reduce to the discrete jumps.
    """
    if problem.exact is None:
        raise ValueError(f"case {problem.name!r} provides no exact solution")
    shape, space = u_h.shape, u_h.space
    mesh = u_h.mesh
    locus = problem.mu_locus
    n_q = max(shape.k_z + 1, shape.k_mu) + 4
    rule = gauss_rule(n_q)
    psi = shape.z_basis.eval(rule.points)
    dpsi = shape.z_basis.deriv(rule.points)

    vol_l2 = vol_l2w = vol_h1 = vol_h1w = 0.0
    for i, eid in enumerate(space.leaf_ids):
        h, zlo = space.h[i], space.zlo[i]
        mulo, mulen = space.mulo[i], space.mulen[i]
        st = space.st[i]
        z_q = zlo + h * rule.points
        w_z = h * rule.weights
        block = u_h.block(eid)
        scale = 1.0 / math.sqrt(h * mulen)
        for (c, d) in _mu_segments(mulo, mulo + mulen, locus):
            mu_q = c + (d - c) * rule.points
            w_mu = (d - c) * rule.weights
            chi = shape.mu_basis.eval((mu_q - mulo) / mulen)
            u_ex = problem.exact(z_q[:, None], mu_q[None, :])
            du_ex = problem.exact_dz(z_q[:, None], mu_q[None, :])
            u_d = scale * (psi.T @ block @ chi)
            du_d = (scale / h) * (dpsi.T @ block @ chi)
            w2 = np.outer(w_z, w_mu)
            e2 = float(np.sum(w2 * (u_ex - u_d) ** 2))
            de2 = float(np.sum(w2 * (mu_q[None, :] ** 2) * (du_ex - du_d) ** 2))
            vol_l2 += e2
            vol_l2w += st * e2
            vol_h1 += de2
            vol_h1w += de2 / st

    boundary = 0.0
    for bface in mesh.boundary_faces():
        i = space.pos[bface.element]
        side_z = 0.0 if bface.side == SIDE_LEFT else mesh.L
        psi_b = space.psi0 if bface.side == SIDE_LEFT else space.psi1
        mulo, mulen = space.mulo[i], space.mulen[i]
        block = u_h.block(bface.element)
        scale = 1.0 / math.sqrt(space.h[i] * mulen)
        for (c, d) in _mu_segments(bface.mu.lo, bface.mu.hi, locus):
            mu_q, w_q = rule.map_to(c, d)
            chi = shape.mu_basis.eval((mu_q - mulo) / mulen)
            u_ex = problem.exact(side_z, mu_q)
            u_d = scale * (psi_b @ block @ chi)
            boundary += float(np.dot(w_q * mu_q, (u_ex - u_d) ** 2))

    scatter = 0.0
    if np.any(space.ss != 0.0):
        scatter = _scattering_error_term(u_h, problem, n_q)

    jumps_term = star_term = 0.0
    for face, (idx, rows_j, rows_g, wmu, d_f) in zip(
            mesh.interior_vertical_faces(), space.face_entries()):
        local = u_h.coeffs[idx]
        jumps = rows_j.T @ local
        jumps_term += float(np.dot(wmu, jumps * jumps)) / d_f
        if with_star:
            # The exact flux is z-continuous, so its face average equals the
            # trace value (taken with each neighbor's sigma_t).
            mu_q, _ = space.face_rule.map_to(face.mu.lo, face.mu.hi)
            li, ri = space.pos[face.left], space.pos[face.right]
            du_ex = problem.exact_dz(face.z_f, mu_q)
            avg_ex = 0.5 * mu_q * du_ex * (1.0 / space.st[li] + 1.0 / space.st[ri])
            avg_e = avg_ex - rows_g.T @ local
            star_term += d_f * float(np.dot(wmu, avg_e * avg_e)) / C_dt(shape.k_z)

    return dict(vol_l2=vol_l2, vol_l2w=vol_l2w, vol_h1=vol_h1, vol_h1w=vol_h1w,
                boundary=boundary, scatter=scatter, jumps=jumps_term, star=star_term)


def error_report(u_h: DiscreteSolution, problem: ProblemData) -> dict[str, float]:
    """L2, broken-H1, and Vh errors of u - u_h from one quadrature pass."""
    t = _error_pieces(u_h, problem)
    return {
        "l2": math.sqrt(t["vol_l2"]),
        "broken_h1": math.sqrt(t["vol_h1"] + t["vol_l2"]),
        "vh": math.sqrt(max(t["vol_h1w"] + t["vol_l2w"] - t["scatter"]
                            + t["boundary"] + t["jumps"], 0.0)),
    }


def error_vs_exact(u_h: DiscreteSolution, problem: ProblemData, kind: NormKind) -> float:
    """Norm of u - u_h by element-wise quadrature with locus splitting."""
    if kind is NormKind.STAR:
        t = _error_pieces(u_h, problem, with_star=True)
        return math.sqrt(max(t["vol_h1w"] + t["vol_l2w"] - t["scatter"]
                             + t["boundary"] + t["jumps"] + t["star"], 0.0))
    t = _error_pieces(u_h, problem)
    if kind is NormKind.L2:
        return math.sqrt(t["vol_l2"])
    if kind is NormKind.BROKEN_H1:
        return math.sqrt(t["vol_h1"] + t["vol_l2"])
    if kind is NormKind.L2_GAMMA_MU:
        return math.sqrt(t["boundary"])
    if kind is NormKind.VH:
        return math.sqrt(max(t["vol_h1w"] + t["vol_l2w"] - t["scatter"]
                             + t["boundary"] + t["jumps"], 0.0))
    raise ValueError(f"unknown norm kind {kind}")


def _scattering_error_term(u_h: DiscreteSolution, problem: ProblemData, n_q: int) -> float:
    """(sigma_s P e, e) for e = u - u_h, via the strip decomposition in z."""
    mesh, shape, space = u_h.mesh, u_h.shape, u_h.space
    locus = problem.mu_locus
    m, boxes = mesh._scaled_boxes()
    xs = sorted({x for box in boxes.values() for x in (box[0], box[1])})
    scale = 1 << m
    rule = gauss_rule(n_q)
    members_of = [[] for _ in range(len(xs) - 1)]
    for eid, (x0, x1, _, _) in boxes.items():
        i = space.pos[eid]
        s0 = bisect_left(xs, x0)
        s1 = bisect_left(xs, x1)
        for s in range(s0, s1):
            members_of[s].append(i)
    total = 0.0
    leaf_ids = space.leaf_ids
    for s, members in enumerate(members_of):
        z0 = mesh.L * xs[s] / scale
        z1 = mesh.L * xs[s + 1] / scale
        z_q = z0 + (z1 - z0) * rule.points
        wphys = (z1 - z0) * rule.weights
        p_e = np.zeros(n_q)
        weighted = np.zeros(n_q)
        for i in members:
            eid = leaf_ids[i]
            block = u_h.block(eid)
            zh = (z_q - space.zlo[i]) / space.h[i]
            row = shape.z_basis.eval(zh).T @ block[:, 0]
            int_uh = math.sqrt(space.mulen[i] / space.h[i]) * row
            mulo, mulen = space.mulo[i], space.mulen[i]
            int_u = np.zeros(n_q)
            for (c, d) in _mu_segments(mulo, mulo + mulen, locus):
                mu_q = c + (d - c) * rule.points
                w_mu = (d - c) * rule.weights
                int_u += problem.exact(z_q[:, None], mu_q[None, :]) @ w_mu
            p_e += int_u - int_uh
            weighted += space.ss[i] * (int_u - int_uh)
        total += float(np.dot(wphys, p_e * weighted))
    return total


# -- transfer between nested spaces -------------------------------------------


def _transfer_1d(basis, pos: int) -> np.ndarray:
    """Child-basis coefficients of a parent basis function on one half interval."""
    rule = gauss_rule(basis.dim + 1)
    child_vals = basis.eval(rule.points)
    parent_vals = basis.eval(0.5 * (rule.points + pos))
    return ((child_vals * rule.weights) @ parent_vals.T) / math.sqrt(2.0)


def prolongation_matrix(coarse: QuadTreeMesh, fine: QuadTreeMesh,
                        shape: TensorShape) -> sp.csr_matrix:
    """Exact embedding of the coarse broken space into a refined one.

    ``fine`` must have been produced from ``coarse`` by refine calls, so each
    coarse leaf is either still a leaf or an ancestor of fine leaves.
    """
    cs = _get_space(coarse, shape)
    fs = _get_space(fine, shape)
    t_z = [_transfer_1d(shape.z_basis, pos) for pos in (0, 1)]
    t_mu = [_transfer_1d(shape.mu_basis, pos) for pos in (0, 1)]
    eye_z = np.eye(shape.n_z)
    eye_mu = np.eye(shape.n_mu)
    nloc = shape.ndof
    rows, cols, vals = [], [], []
    for eid in cs.leaf_ids:
        c_off = cs.dofmap.offsets[eid]
        stack = [(eid, eye_z, eye_mu)]
        while stack:
            cur, tz_acc, tmu_acc = stack.pop()
            if cur not in fine.elements:
                raise MeshError(f"element {cur} missing from the fine mesh")
            el = fine.element(cur)
            if el.is_leaf:
                f_off = fs.dofmap.offsets[cur]
                block = np.kron(tz_acc, tmu_acc)
                rows.append(np.repeat(np.arange(f_off, f_off + nloc), nloc))
                cols.append(np.tile(np.arange(c_off, c_off + nloc), nloc))
                vals.append(block.ravel())
            else:
                children = el.children
                k = 0
                for dz in (0, 1):
                    for dmu in (0, 1):
                        stack.append((children[k], t_z[dz] @ tz_acc, t_mu[dmu] @ tmu_acc))
                        k += 1
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fs.dofmap.ndof, cs.dofmap.ndof)).tocsr()


def prolong(u: DiscreteSolution, fine: QuadTreeMesh) -> DiscreteSolution:
    """Represent a coarse solution exactly on a refinement of its mesh."""
    mat = prolongation_matrix(u.mesh, fine, u.shape)
    return DiscreteSolution(fine, u.shape, mat @ u.coeffs)


def embed_degree(u: DiscreteSolution, shape: TensorShape) -> DiscreteSolution:
    """Zero-pad a solution into a higher-degree space on the same mesh."""
    old = u.shape
    if shape.k_z < old.k_z or shape.k_mu < old.k_mu:
        raise ValueError("target space must contain the source space")
    out = DiscreteSolution(u.mesh, shape)
    for eid in u.mesh.leaf_ids:
        out.block(eid)[:old.n_z, :old.n_mu] = u.block(eid)
    return out


def export_coo(system: AssembledSystem) -> str:
    """Matrix in 'row col value' coordinate text format."""
    coo = system.matrix.tocoo()
    lines = [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
    return "\n".join(lines) + "\n"
