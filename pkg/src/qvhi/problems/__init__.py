"""Concrete instances: synthetic generators and P1 semipermeability models."""

from .fem import (FEMSpace, MaterialLaw, Mesh, assemble_embedding, assemble_operator,
                  assemble_trace, build_mesh, error_norms, linear_iso, lumped_load,
                  nonlinear_demo, write_mesh)
from .models import (AssembledProblem, build_boundary_problem, build_interior_problem,
                     check_hypotheses, constraint_family, smallness_threshold, write_nodal_csv)
from .synthetic import synthetic_instance
