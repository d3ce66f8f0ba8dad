"""Quad-tree partitions of the phase-space rectangle (0, L) x (0, 1).

Elements are axis-aligned rectangles addressed by integer quad-tree
coordinates ``(level, iz, imu)``: an element at refinement level ``l`` covers
``[iz, iz+1] * L / 2**l`` in z and ``[imu, imu+1] / 2**l`` in mu.  Adjacency,
overlap, and node queries are carried out on the integers, so face and node
enumeration is exact for arbitrary level jumps between neighbors.  Hanging
nodes need no special treatment beyond interval intersection; no 2:1 balance
is enforced.

Only vertical faces (constant z) are represented.  The operator assembled on
these meshes contains no angular derivative, so nothing couples across
horizontal element boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping


class MeshError(ValueError):
    """Invalid mesh construction or query."""


@dataclass(frozen=True)
class Interval:
    """Nonempty open interval (lo, hi) with finite endpoints."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise MeshError(f"interval endpoints must be finite, got ({self.lo}, {self.hi})")
        if not self.lo < self.hi:
            raise MeshError(f"interval must satisfy lo < hi, got ({self.lo}, {self.hi})")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass(frozen=True)
class Element:
    """Axis-aligned phase-space rectangle with refinement genealogy.

    ``region`` identifies the coefficient region; children inherit it from
    the parent so cross sections stay constant on every element.
    """

    id: int
    level: int
    iz: int
    imu: int
    z: Interval
    mu: Interval
    region: int = 0
    parent: int | None = None
    children: tuple[int, int, int, int] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def h(self) -> float:
        """Local mesh size in the z direction."""
        return self.z.length

    @property
    def area(self) -> float:
        return self.z.length * self.mu.length


@dataclass(frozen=True)
class VerticalFace:
    """Interior interface {z_f} x mu between a left and a right element.

    ``left`` is the element whose z interval ends at ``z_f``, ``right`` the
    one starting there; jumps are taken left minus right.  ``mu`` is the
    intersection of the two angular intervals and is nonempty.
    """

    z_f: float
    mu: Interval
    left: int
    right: int


@dataclass(frozen=True)
class BoundaryFace:
    """Face of a leaf on the slab boundary; side 'left' is z=0, 'right' is z=L."""

    side: str
    mu: Interval
    element: int


@dataclass(frozen=True)
class RegularNode:
    """Mesh vertex that is a corner of every leaf containing it."""

    z: float
    mu: float
    patch: tuple[int, ...]


class QuadTreeMesh:
    """Quad-tree partition of (0, L) x (0, 1) into rectangular elements.

    The element store keeps interior nodes as well as leaves; ids are stable
    across refinement (children get fresh ids, parents are retained), which
    the hierarchical error estimators rely on.  Instances are immutable:
    :func:`refine` returns a new mesh, and all queries are cached read-only
    views safe for concurrent use.
    """

    def __init__(self, L: float, elements: dict[int, Element], leaves: set[int],
                 coefficients: Mapping[int, tuple[float, float]], next_id: int):
        if not (math.isfinite(L) and L > 0.0):
            raise MeshError(f"slab width must be positive, got {L}")
        self.L = float(L)
        self.elements = elements
        self.leaves = frozenset(leaves)
        self.coefficients = dict(coefficients)
        self._next_id = next_id
        self._cache: dict[str, object] = {}

    # -- basic queries ----------------------------------------------------

    def element(self, eid: int) -> Element:
        return self.elements[eid]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        ids = self._cache.get("leaf_ids")
        if ids is None:
            ids = tuple(sorted(self.leaves))
            self._cache["leaf_ids"] = ids
        return ids

    def leaf_elements(self) -> list[Element]:
        return [self.elements[i] for i in self.leaf_ids]

    @property
    def max_level(self) -> int:
        return max(self.elements[i].level for i in self.leaves)

    def sigma_t(self, elem: Element) -> float:
        try:
            return self.coefficients[elem.region][0]
        except KeyError:
            raise MeshError(f"no coefficients for region {elem.region}") from None

    def sigma_s(self, elem: Element) -> float:
        try:
            return self.coefficients[elem.region][1]
        except KeyError:
            raise MeshError(f"no coefficients for region {elem.region}") from None

    def with_coefficients(self, coefficients: Mapping[int, tuple[float, float]]) -> "QuadTreeMesh":
        """Same partition with a different region -> (sigma_t, sigma_s) map."""
        return QuadTreeMesh(self.L, self.elements, set(self.leaves), coefficients, self._next_id)

    # -- integer geometry helpers ------------------------------------------

    def _scaled_boxes(self):
        """Leaf boxes in integer units of L / 2**max_level (exact arithmetic)."""
        boxes = self._cache.get("boxes")
        if boxes is None:
            m = self.max_level
            boxes = {}
            for eid in self.leaf_ids:
                el = self.elements[eid]
                w = 1 << (m - el.level)
                boxes[eid] = (el.iz * w, (el.iz + 1) * w, el.imu * w, (el.imu + 1) * w)
            self._cache["boxes"] = (m, boxes)
        return self._cache["boxes"]

    def _point(self, xi: int, yi: int, m: int):
        scale = 1 << m
        return self.L * xi / scale, yi / scale

    # -- face enumeration ---------------------------------------------------

    def interior_vertical_faces(self) -> tuple[VerticalFace, ...]:
        """All interior vertical faces, sorted by (z_f, mu.lo).

        One face per maximal angular overlap between z-adjacent leaf pairs;
        zero-length overlaps are excluded and horizontal adjacencies produce
        no faces.
        """
        faces = self._cache.get("ifaces")
        if faces is not None:
            return faces
        m, boxes = self._scaled_boxes()
        right_edges: dict[int, list] = {}
        left_edges: dict[int, list] = {}
        for eid, (x0, x1, y0, y1) in boxes.items():
            right_edges.setdefault(x1, []).append((y0, y1, eid))
            left_edges.setdefault(x0, []).append((y0, y1, eid))
        scale = 1 << m
        out = []
        for x, lefts in right_edges.items():
            rights = left_edges.get(x)
            if rights is None or x == 0 or x == scale:
                continue
            for (a0, a1, ida) in lefts:
                for (b0, b1, idb) in rights:
                    lo, hi = max(a0, b0), min(a1, b1)
                    if lo < hi:
                        out.append(VerticalFace(
                            z_f=self.L * x / scale,
                            mu=Interval(lo / scale, hi / scale),
                            left=ida, right=idb))
        out.sort(key=lambda f: (f.z_f, f.mu.lo))
        faces = tuple(out)
        self._cache["ifaces"] = faces
        return faces

    def boundary_faces(self) -> tuple[BoundaryFace, ...]:
        """Faces of leaves on z=0 ('left') and z=L ('right'), sorted by (side, mu.lo)."""
        faces = self._cache.get("bfaces")
        if faces is not None:
            return faces
        out = []
        for eid in self.leaf_ids:
            el = self.elements[eid]
            if el.iz == 0:
                out.append(BoundaryFace(side="left", mu=el.mu, element=eid))
            if el.iz + 1 == (1 << el.level):
                out.append(BoundaryFace(side="right", mu=el.mu, element=eid))
        out.sort(key=lambda f: (f.side, f.mu.lo))
        faces = tuple(out)
        self._cache["bfaces"] = faces
        return faces

    # -- node queries --------------------------------------------------------

    def _node_tables(self):
        tables = self._cache.get("nodes")
        if tables is not None:
            return tables
        m, boxes = self._scaled_boxes()
        corner_leaves: dict[tuple[int, int], list[int]] = {}
        vert_edges: dict[int, list] = {}
        horiz_edges: dict[int, list] = {}
        for eid, (x0, x1, y0, y1) in boxes.items():
            for p in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
                corner_leaves.setdefault(p, []).append(eid)
            vert_edges.setdefault(x0, []).append((y0, y1, eid))
            vert_edges.setdefault(x1, []).append((y0, y1, eid))
            horiz_edges.setdefault(y0, []).append((x0, x1, eid))
            horiz_edges.setdefault(y1, []).append((x0, x1, eid))
        tables = (m, corner_leaves, vert_edges, horiz_edges)
        self._cache["nodes"] = tables
        return tables

    def regular_nodes(self) -> tuple[RegularNode, ...]:
        """Vertices that are corners of every incident leaf (hanging nodes excluded)."""
        nodes = self._cache.get("regular_nodes")
        if nodes is not None:
            return nodes
        m, corner_leaves, vert_edges, horiz_edges = self._node_tables()
        out = []
        for (x, y) in sorted(corner_leaves):
            hanging = any(y0 < y < y1 for (y0, y1, _) in vert_edges.get(x, ()))
            if not hanging:
                hanging = any(x0 < x < x1 for (x0, x1, _) in horiz_edges.get(y, ()))
            if hanging:
                continue
            z, mu = self._point(x, y, m)
            out.append(RegularNode(z=z, mu=mu, patch=tuple(sorted(corner_leaves[(x, y)]))))
        nodes = tuple(out)
        self._cache["regular_nodes"] = nodes
        return nodes

    def corner_patches(self):
        """For every leaf-corner point, all leaves whose closure contains it.

        Keys are physical (z, mu) pairs; at regular nodes the patch equals
        the corner patch, at hanging corners it additionally contains the
        coarse neighbors whose edge the point sits on.  Used by the
        averaging estimator.
        """
        patches = self._cache.get("corner_patches")
        if patches is not None:
            return patches
        m, corner_leaves, vert_edges, horiz_edges = self._node_tables()
        patches = {}
        for (x, y) in corner_leaves:
            ids = set(corner_leaves[(x, y)])
            for (y0, y1, eid) in vert_edges.get(x, ()):
                if y0 <= y <= y1:
                    ids.add(eid)
            for (x0, x1, eid) in horiz_edges.get(y, ()):
                if x0 <= x <= x1:
                    ids.add(eid)
            patches[self._point(x, y, m)] = tuple(sorted(ids))
        self._cache["corner_patches"] = patches
        return patches


def build_uniform(L: float, levels: int,
                  coefficients: Mapping[int, tuple[float, float]] | None = None) -> QuadTreeMesh:
    """Uniform mesh of 4**levels congruent elements on (0, L) x (0, 1)."""
    if not (math.isfinite(L) and L > 0.0):
        raise MeshError(f"slab width must be positive, got {L}")
    if levels < 1:
        raise MeshError("levels must be at least 1")
    if coefficients is None:
        coefficients = {0: (1.0, 0.0)}
    n = 1 << levels
    elements = {}
    eid = 0
    for iz in range(n):
        for imu in range(n):
            elements[eid] = Element(
                id=eid, level=levels, iz=iz, imu=imu,
                z=Interval(L * iz / n, L * (iz + 1) / n),
                mu=Interval(imu / n, (imu + 1) / n))
            eid += 1
    return QuadTreeMesh(L, elements, set(elements), coefficients, eid)


def refine(mesh: QuadTreeMesh, marked: Iterable[int]) -> QuadTreeMesh:
    """Replace each marked leaf by its four congruent half-scale children.

    Returns a new mesh; ids of unmarked elements are unchanged and marked
    parents are kept as interior nodes of the tree.
    """
    marked = set(marked)
    if not marked:
        return mesh
    bad = marked - mesh.leaves
    if bad:
        raise MeshError(f"cannot refine non-leaf ids {sorted(bad)}")
    elements = dict(mesh.elements)
    leaves = set(mesh.leaves)
    eid = mesh._next_id
    for pid in sorted(marked):
        parent = elements[pid]
        n2 = 1 << (parent.level + 1)
        child_ids = []
        for dz in (0, 1):
            for dmu in (0, 1):
                iz, imu = 2 * parent.iz + dz, 2 * parent.imu + dmu
                elements[eid] = Element(
                    id=eid, level=parent.level + 1, iz=iz, imu=imu,
                    z=Interval(mesh.L * iz / n2, mesh.L * (iz + 1) / n2),
                    mu=Interval(imu / n2, (imu + 1) / n2),
                    region=parent.region, parent=pid)
                child_ids.append(eid)
                eid += 1
        elements[pid] = replace(parent, children=tuple(child_ids))
        leaves.discard(pid)
        leaves.update(child_ids)
    return QuadTreeMesh(mesh.L, elements, leaves, mesh.coefficients, eid)


def uniform_refinement(mesh: QuadTreeMesh) -> QuadTreeMesh:
    """Refine every leaf once (the hierarchical h-estimator's fine mesh)."""
    return refine(mesh, mesh.leaves)


def interior_vertical_faces(mesh: QuadTreeMesh) -> tuple[VerticalFace, ...]:
    return mesh.interior_vertical_faces()


def boundary_faces(mesh: QuadTreeMesh) -> tuple[BoundaryFace, ...]:
    return mesh.boundary_faces()


def sub_elements(mesh: QuadTreeMesh, face: VerticalFace):
    """Sub-elements E^1, E^2 of a face: neighbor z-extent times face mu-extent.

    Each is contained in its element, strictly when the neighbor is coarser
    in mu (hanging node).
    """
    left = mesh.element(face.left)
    right = mesh.element(face.right)
    return (left.z, face.mu), (right.z, face.mu)


def regular_nodes(mesh: QuadTreeMesh) -> tuple[RegularNode, ...]:
    return mesh.regular_nodes()


def dorfler_mark(eta: Mapping[int, float], theta: float) -> set[int]:
    """Smallest set of leaves whose squared indicators exceed theta times the total.

    Ties in eta are broken by ascending element id so marking is
    deterministic.  An all-zero input returns the empty set.
    """
    if not 0.0 < theta <= 1.0:
        raise MeshError(f"Dörfler parameter must lie in (0, 1], got {theta}")
    eta2 = {}
    for eid, val in eta.items():
        if val < 0.0 or not math.isfinite(val):
            raise MeshError(f"indicator for element {eid} must be finite and nonnegative")
        eta2[eid] = val * val
    total = math.fsum(eta2.values())
    if total <= 0.0:
        return set()
    marked: set[int] = set()
    acc = 0.0
    for eid in sorted(eta2, key=lambda i: (-eta2[i], i)):
        if acc > theta * total:
            break
        marked.add(eid)
        acc += eta2[eid]
    return marked


def dump_mesh(mesh: QuadTreeMesh) -> str:
    """Plain-text leaf listing: ``id level z_lo z_hi mu_lo mu_hi region`` per line."""
    lines = []
    for eid in mesh.leaf_ids:
        el = mesh.element(eid)
        lines.append(f"{el.id} {el.level} {el.z.lo:.17g} {el.z.hi:.17g} "
                     f"{el.mu.lo:.17g} {el.mu.hi:.17g} {el.region}")
    return "\n".join(lines) + "\n"
