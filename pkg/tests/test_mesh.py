import itertools

import numpy as np
import pytest

from conftest import single_element_mesh
from oracles import dorfler_brute_force, random_adaptive_mesh
from slabdg.mesh import (Interval, MeshError, build_uniform, dorfler_mark,
                         dump_mesh, interior_vertical_faces, refine,
                         regular_nodes, sub_elements, uniform_refinement)


class TestInterval:
    def test_invalid(self):
        with pytest.raises(MeshError):
            Interval(1.0, 1.0)
        with pytest.raises(MeshError):
            Interval(0.0, float("inf"))


class TestBuildUniform:
    def test_16_elements(self):
        mesh = build_uniform(1.0, 2)
        assert mesh.n_leaves == 16
        for el in mesh.leaf_elements():
            assert el.z.length == pytest.approx(0.25)
            assert el.mu.length == pytest.approx(0.25)

    def test_four_leaves(self):
        assert build_uniform(1.0, 1).n_leaves == 4

    def test_rectangular_domain(self):
        mesh = build_uniform(2.0, 2)
        assert mesh.n_leaves == 16
        areas = [el.area for el in mesh.leaf_elements()]
        assert all(a == pytest.approx(0.5 * 0.25) for a in areas)
        assert sum(areas) == pytest.approx(2.0, rel=1e-12)

    def test_invalid_args(self):
        with pytest.raises(MeshError):
            build_uniform(0.0, 2)
        with pytest.raises(MeshError):
            build_uniform(-1.0, 2)
        with pytest.raises(MeshError):
            build_uniform(1.0, 0)


def seven_leaf_mesh():
    """4-leaf mesh with the lower-left leaf refined once."""
    mesh = build_uniform(1.0, 1)
    lower_left = next(el.id for el in mesh.leaf_elements()
                      if el.iz == 0 and el.imu == 0)
    return refine(mesh, {lower_left}), lower_left


class TestRefine:
    def test_single_mark(self):
        mesh, parent = seven_leaf_mesh()
        assert mesh.n_leaves == 7
        assert not mesh.element(parent).is_leaf
        children = mesh.element(parent).children
        assert len(children) == 4
        for c in children:
            assert mesh.element(c).parent == parent
            assert mesh.element(c).level == 2

    def test_mark_all(self):
        mesh = build_uniform(1.0, 2)
        fine = refine(mesh, mesh.leaves)
        assert fine.n_leaves == 64
        assert uniform_refinement(mesh).n_leaves == 64

    def test_mark_nothing(self):
        mesh = build_uniform(1.0, 2)
        assert refine(mesh, set()) is mesh

    def test_non_leaf_rejected(self):
        mesh, parent = seven_leaf_mesh()
        with pytest.raises(MeshError):
            refine(mesh, {parent})
        with pytest.raises(MeshError):
            refine(mesh, {10_000})

    def test_ids_stable(self):
        mesh = build_uniform(1.0, 2)
        marked = {mesh.leaf_ids[3]}
        fine = refine(mesh, marked)
        for eid in mesh.leaf_ids:
            if eid not in marked:
                assert fine.element(eid) == mesh.element(eid)

    def test_region_inherited(self):
        mesh = build_uniform(1.0, 1, {0: (1.0, 0.0), 7: (2.0, 0.5)})
        from dataclasses import replace
        eid = mesh.leaf_ids[0]
        mesh.elements[eid] = replace(mesh.element(eid), region=7)
        fine = refine(mesh, {eid})
        for c in fine.element(eid).children:
            assert fine.element(c).region == 7
            assert fine.sigma_t(fine.element(c)) == 2.0


class TestPartitionProperty:
    def test_random_refinements(self, rng):
        mesh = random_adaptive_mesh(rng, levels=2, steps=4, frac=0.25)
        assert mesh.n_leaves <= 1000
        areas = sum(el.area for el in mesh.leaf_elements())
        assert areas == pytest.approx(1.0, rel=1e-12)
        # pairwise disjoint interiors via exact integer boxes
        m, boxes = mesh._scaled_boxes()
        for (x0, x1, y0, y1), (a0, a1, b0, b1) in itertools.combinations(boxes.values(), 2):
            assert x1 <= a0 or a1 <= x0 or y1 <= b0 or b1 <= y0


class TestInteriorFaces:
    def test_uniform_16(self):
        faces = interior_vertical_faces(build_uniform(1.0, 2))
        assert len(faces) == 12  # 3 interior z-lines x 4 angular rows

    def test_seven_leaf(self):
        mesh, _ = seven_leaf_mesh()
        faces = interior_vertical_faces(mesh)
        # hand enumeration: 2 child-child faces at z=0.25, 2 hanging faces of
        # the refined column against the coarse right neighbor, 1 coarse face
        assert len(faces) == 5
        at_half = [f for f in faces if f.z_f == pytest.approx(0.5)]
        assert len(at_half) == 3

    def test_single_element(self):
        mesh = single_element_mesh()
        assert interior_vertical_faces(mesh) == ()

    def test_canonical_order(self, rng):
        mesh = random_adaptive_mesh(rng, steps=3)
        faces = interior_vertical_faces(mesh)
        keys = [(f.z_f, f.mu.lo) for f in faces]
        assert keys == sorted(keys)

    def test_left_right_orientation(self, rng):
        mesh = random_adaptive_mesh(rng, steps=2)
        for f in interior_vertical_faces(mesh):
            el_l, el_r = mesh.element(f.left), mesh.element(f.right)
            assert el_l.z.hi == pytest.approx(f.z_f)
            assert el_r.z.lo == pytest.approx(f.z_f)

    def test_face_partition_property(self, rng):
        # faces on each vertical side are disjoint and cover the overlap
        mesh = random_adaptive_mesh(rng, steps=3)
        faces = interior_vertical_faces(mesh)
        by_side = {}
        for f in faces:
            by_side.setdefault(("r", f.left), []).append(f.mu)
            by_side.setdefault(("l", f.right), []).append(f.mu)
        for (_, eid), intervals in by_side.items():
            ivs = sorted((iv.lo, iv.hi) for iv in intervals)
            for (a0, a1), (b0, b1) in zip(ivs, ivs[1:]):
                assert a1 <= b0 + 1e-15  # disjoint
            el = mesh.element(eid)
            assert ivs[0][0] >= el.mu.lo - 1e-15
            assert ivs[-1][1] <= el.mu.hi + 1e-15


class TestSubElements:
    def test_conforming(self):
        mesh = build_uniform(1.0, 2)
        face = interior_vertical_faces(mesh)[0]
        (z1, mu1), (z2, mu2) = sub_elements(mesh, face)
        assert mu1 == mesh.element(face.left).mu
        assert mu2 == mesh.element(face.right).mu

    def test_hanging(self):
        mesh, parent = seven_leaf_mesh()
        hang = [f for f in interior_vertical_faces(mesh)
                if f.z_f == pytest.approx(0.5) and f.mu.length < 0.5]
        assert len(hang) == 2
        for f in hang:
            (_, mu1), (z2, mu2) = sub_elements(mesh, f)
            el2 = mesh.element(f.right)
            assert mu2.length == pytest.approx(0.25)
            assert el2.mu.length == pytest.approx(0.5)  # strict inclusion
            # sub-element has half the coarse neighbor's area
            assert z2.length * mu2.length == pytest.approx(0.5 * el2.area)


class TestRegularNodes:
    def test_uniform_16(self):
        nodes = regular_nodes(build_uniform(1.0, 2))
        assert len(nodes) == 25  # 5x5 lattice

    def test_seven_leaf_hanging_excluded(self):
        mesh, _ = seven_leaf_mesh()
        nodes = regular_nodes(mesh)
        coords = {(round(n.z, 10), round(n.mu, 10)) for n in nodes}
        assert (0.5, 0.25) not in coords
        assert (0.25, 0.5) not in coords
        assert len(nodes) == 12

    def test_single_element(self):
        nodes = regular_nodes(single_element_mesh())
        assert len(nodes) == 4
        for n in nodes:
            assert n.patch == (0,)

    def test_patch_membership(self, rng):
        mesh = random_adaptive_mesh(rng, steps=2)
        for node in regular_nodes(mesh):
            for eid in node.patch:
                el = mesh.element(eid)
                corners = {(el.z.lo, el.mu.lo), (el.z.hi, el.mu.lo),
                           (el.z.lo, el.mu.hi), (el.z.hi, el.mu.hi)}
                assert any(abs(node.z - c[0]) < 1e-14 and abs(node.mu - c[1]) < 1e-14
                           for c in corners)


class TestDorflerMarking:
    def test_two_largest(self):
        eta2 = {0: 4.0, 1: 3.0, 2: 2.0, 3: 1.0}
        eta = {k: v ** 0.5 for k, v in eta2.items()}
        got = dorfler_mark(eta, 0.5)
        assert got == dorfler_brute_force(eta2, 0.5) == {0, 1}

    def test_theta_one_marks_all(self):
        eta = {i: 1.0 + i for i in range(5)}
        assert dorfler_mark(eta, 1.0) == set(range(5))

    def test_tie_break(self):
        eta = {i: 1.0 for i in range(4)}
        # 3 is not > 3, so all four are needed
        assert dorfler_mark(eta, 0.75) == {0, 1, 2, 3}

    def test_all_zero(self):
        assert dorfler_mark({0: 0.0, 1: 0.0}, 0.5) == set()

    def test_matches_brute_force(self, rng):
        for _ in range(25):
            n = int(rng.integers(3, 9))
            eta = {i: float(rng.uniform(0, 2)) for i in range(n)}
            theta = float(rng.uniform(0.1, 1.0))
            got = dorfler_mark(eta, theta)
            best = dorfler_brute_force({i: v * v for i, v in eta.items()}, theta)
            assert len(got) == len(best)
            tot = sum(v * v for v in eta.values())
            assert sum(eta[i] ** 2 for i in got) > theta * tot

    def test_minimality_removal_violates(self, rng):
        eta = {i: float(rng.uniform(0.1, 2)) for i in range(12)}
        theta = 0.6
        got = dorfler_mark(eta, theta)
        tot = sum(v * v for v in eta.values())
        smallest = min(got, key=lambda i: (eta[i], i))
        rest = sum(eta[i] ** 2 for i in got if i != smallest)
        assert not rest > theta * tot

    def test_monotone_in_theta(self, rng):
        eta = {i: float(rng.uniform(0, 2)) for i in range(15)}
        previous = set()
        for theta in (0.2, 0.4, 0.6, 0.8, 1.0):
            marked = dorfler_mark(eta, theta)
            assert previous <= marked
            previous = marked

    def test_invalid_inputs(self):
        with pytest.raises(MeshError):
            dorfler_mark({0: 1.0}, 0.0)
        with pytest.raises(MeshError):
            dorfler_mark({0: 1.0}, 1.1)
        with pytest.raises(MeshError):
            dorfler_mark({0: -1.0}, 0.5)


class TestDump:
    def test_format_and_order(self):
        mesh, _ = seven_leaf_mesh()
        lines = dump_mesh(mesh).strip().splitlines()
        assert len(lines) == 7
        ids = []
        for line in lines:
            parts = line.split()
            assert len(parts) == 7
            ids.append(int(parts[0]))
            z_lo, z_hi, mu_lo, mu_hi = map(float, parts[2:6])
            assert z_lo < z_hi and mu_lo < mu_hi
        assert ids == sorted(ids)
