"""Band structure of periodic Schrödinger operators and Darboux embedding of
bound states into spectral gaps of the Lamé potential."""

__version__ = "0.1.0"

from .errors import GapforgeError, NumericalError, PreconditionError  # noqa: E402
from .elliptic import (EllipticValues, PotentialSpec, complete_elliptic_K,  # noqa: E402
                       jacobi_elliptic, lame_potential)
from .spectral import (BandStructure, BlochPair, Monodromy, SolutionTrace,  # noqa: E402
                       bloch_pair, classify, find_band_edges, integrate, monodromy)
from .darboux import (DarbouxResult, TransformationFunction, beta_from_u,  # noqa: E402
                      map_eigenfunction_1, map_eigenfunction_2, missing_state_1,
                      missing_state_2, riccati_residual, transform_potential_1,
                      transform_potential_2)
from .gapstates import (EmbeddingResult, EmbeddingSpec, build_gap_pair,  # noqa: E402
                        check_darboux_invariance, embed_first_order, embed_second_order,
                        normalize_state, select_nodeless_below)

__all__ = [
    "GapforgeError", "NumericalError", "PreconditionError",
    "EllipticValues", "PotentialSpec", "complete_elliptic_K", "jacobi_elliptic", "lame_potential",
    "BandStructure", "BlochPair", "Monodromy", "SolutionTrace", "bloch_pair", "classify",
    "find_band_edges", "integrate", "monodromy",
    "DarbouxResult", "TransformationFunction", "beta_from_u", "map_eigenfunction_1",
    "map_eigenfunction_2", "missing_state_1", "missing_state_2", "riccati_residual",
    "transform_potential_1", "transform_potential_2",
    "EmbeddingResult", "EmbeddingSpec", "build_gap_pair", "check_darboux_invariance",
    "embed_first_order", "embed_second_order", "normalize_state", "select_nodeless_below",
]
