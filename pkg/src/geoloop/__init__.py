"""Geodesic loops, odular operations and Jacobi fields of an affine connection."""
from .errors import (CatalogLookupError, DomainExitError, EvaluationDomainError, GeoloopError,
                     NoConvergenceError, NumericsError, RangeError)
from .geo import (GeodesicPath, Numerics, exp_map, integrate_geodesic, log_map, parallel_transport)
from .jacobi import (JacobiField, VariationGrid, infinitesimal_variation, jacobi_residual, jacobi_solve,
                     natural_fields, variation_alpha, variation_beta, verify_jacobi_generates_structure,
                     verify_jacobi_variation, verify_transported_variation)
from .loops import (LoopContext, OdularStructure, canonical_scalar, canonical_sum, fundamental_fields_left,
                    fundamental_fields_right, lambda_, left_divide, loop_exponential, loop_L,
                    monoassociativity_residual, omega, reconstruct_connection, right_divide,
                    verify_connection_recovery, verify_structure_rebuild)
from .manifold import (CATALOG_NAMES, Connection, TangentVector, catalog, curvature_operator, eval_gamma,
                       grid_connection, polynomial_connection, riemann, torsion)
from .report import ResidualReport

__version__ = "0.1.0"
