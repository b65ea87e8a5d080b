"""vsalab: vector-symbolic algebra and a desk-scale transformer laboratory."""

from .algebra import Permutation, bind, permute, superpose, unbind
from .hvcore import DEFAULT_DIM, Hypervector, SeededRng, VsaModel, derive_seed, normalize, random_hv, similarity

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DIM",
    "Hypervector",
    "Permutation",
    "SeededRng",
    "VsaModel",
    "bind",
    "derive_seed",
    "normalize",
    "permute",
    "random_hv",
    "similarity",
    "superpose",
    "unbind",
]
