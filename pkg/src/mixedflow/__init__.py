"""Mixed P1-P1 finite element solver for slightly compressible porous-media
flow whose momentum law spans the pre-Darcy, Darcy and post-Darcy regimes."""

from .constitutive import (CoefficientVector, GeneralizedPolynomial,
                           LemmaConstants, PowerSpec, lemma_witness)
from .mesh_fem import (QuadratureRule, ScalarP1Space, StructuredTriMesh,
                       VectorP1Space, build_mesh, element_divergence,
                       interpolate, l2_project, norm)
from .assembly import (Assembler, DiscretizationOptions, ExactSolution,
                       ProblemData, SystemState, initial_state)
from .solver import (LinearSolveFailure, LinearSolver, MarchConfig,
                     NewtonConfig, NonConvergence, march, newton_solve)
from .analysis import (InequalityReport, LevelResult, StabilityEnergy,
                       final_time_errors, gronwall_check, inequality_suite,
                       rates, stability_energy)
from .harness import (StudyConfig, builtin_problem, run_convergence,
                      run_dependence, run_single, run_verify)

__version__ = "0.1.0"
