"""Phase-space interior-penalty DG solver for slab-geometry radiative transfer.

The package is organized along the pipeline: quad-tree meshes (:mod:`.mesh`),
polynomial bases and penalty constants (:mod:`.basis`), manufactured problem
data (:mod:`.problem`), operator and norm assembly (:mod:`.assembly`), the
source-iteration solver (:mod:`.solver`), a posteriori estimators and the
adaptive loop (:mod:`.estimators`), and a study-running CLI (:mod:`.cli`).
"""

from .assembly import (AssembledSystem, DiscreteSolution, DofMap, NormKind,
                       ScatteringOperator, apply_scattering, assemble,
                       assemble_rhs, broken_h1_contributions, embed_degree,
                       error_report, error_vs_exact, norm, prolong)
from .basis import (C_dt, PenaltyConstants, PolyBasis1D, QuadratureRule,
                    TensorShape, compute_C_ie, gauss_rule, stability_alpha)
from .estimators import (AdaptiveRun, EstimateResult, EstimatorKind,
                         adapt_loop, estimate_averaging, estimate_h,
                         estimate_local, estimate_p, fit_rate)
from .mesh import (BoundaryFace, Element, Interval, MeshError, QuadTreeMesh,
                   RegularNode, VerticalFace, build_uniform, dorfler_mark,
                   dump_mesh, interior_vertical_faces, refine, regular_nodes,
                   sub_elements, uniform_refinement)
from .problem import (CASES, Coefficients, ProblemData, boundary_g, exact_u,
                      make_case, recover_odd, source_f)
from .solver import (InnerSolver, NonSPDError, SolveReport, inner_solve,
                     source_iteration)

__version__ = "0.1.0"
