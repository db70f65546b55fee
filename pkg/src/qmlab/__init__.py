"""Equal-norm microstate expansions, counting probabilities and EPRB locality checks."""

from .errors import QMLabError
from .expansion import EquiampExpansion, expand_adapted, expand_generic
from .hilbert import Projector, Resolution, StateVector, Unitary, born

__version__ = "0.1.0"

__all__ = [
    "EquiampExpansion",
    "Projector",
    "QMLabError",
    "Resolution",
    "StateVector",
    "Unitary",
    "born",
    "expand_adapted",
    "expand_generic",
]
