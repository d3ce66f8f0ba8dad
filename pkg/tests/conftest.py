import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slabdg.mesh import Element, Interval, QuadTreeMesh
from slabdg.problem import Coefficients, ProblemData


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def single_element_mesh(coefficients=None, L=1.0):
    """One level-0 element covering the whole phase-space rectangle."""
    el = Element(id=0, level=0, iz=0, imu=0,
                 z=Interval(0.0, L), mu=Interval(0.0, 1.0))
    return QuadTreeMesh(L, {0: el}, {0}, coefficients or {0: (1.0, 0.0)}, 1)


def affine_case():
    """Manufactured problem whose exact solution 1 + z lies in every V_h."""
    def f(z, mu):
        return 1.0 + np.asarray(z, dtype=float) + 0.0 * np.asarray(mu, dtype=float)

    def g(side, mu):
        mu = np.asarray(mu, dtype=float)
        return 1.0 - mu if side == "left" else 2.0 + mu

    def exact(z, mu):
        return 1.0 + np.asarray(z, dtype=float) + 0.0 * np.asarray(mu, dtype=float)

    def exact_dz(z, mu):
        return np.ones(np.broadcast(np.asarray(z), np.asarray(mu)).shape)

    return ProblemData(name="affine", coefficients=Coefficients({0: (1.0, 0.0)}),
                       length=1.0, f=f, g=g, exact=exact, exact_dz=exact_dz)
