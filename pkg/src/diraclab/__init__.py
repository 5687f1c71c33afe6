"""diraclab: spectral invariants of model Dirac operators on cylinders.

Finite tangential structure, Lagrangian boundary conditions, transfer-matrix
spectra, regularized eta/zeta invariants and determinant identities, wrapped
in a small service and CLI.
"""

from .symplectic import (
    TangentialStructure,
    GrassmannianPoint,
    UnitaryPhi,
    CauchyData,
    standard_structure,
    extend_with_kernel,
    doubled_structure,
    aps_projection,
    phi_of,
    projection_of_phi,
    random_lagrangian,
    fredholm_index,
    symplectic_form,
    calderon_graph_projection,
)

__version__ = "0.1.0"
