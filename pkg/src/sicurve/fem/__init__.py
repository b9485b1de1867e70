from .bidomain import (
    BidomainField,
    BidomainParams,
    BidomainSystem,
    assemble_bidomain,
    mass_matrix,
    p1_gradients,
    stiffness_matrix,
)
from .emi import EmiField, EmiParams, EmiSystem, assemble_emi, tet_facet_incidence
from .linsys import (AssemblyError, CholeskyFactor, LinearSystem,
                     NotPositiveDefiniteError, SolverError, check_symmetry)

__all__ = [
    "AssemblyError",
    "CholeskyFactor",
    "NotPositiveDefiniteError",
    "BidomainField",
    "BidomainParams",
    "BidomainSystem",
    "EmiField",
    "EmiParams",
    "EmiSystem",
    "LinearSystem",
    "SolverError",
    "assemble_bidomain",
    "assemble_emi",
    "check_symmetry",
    "mass_matrix",
    "p1_gradients",
    "stiffness_matrix",
    "tet_facet_incidence",
]
