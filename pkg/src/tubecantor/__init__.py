"""Desk-scale random Cantor sets with small tube content."""
__version__ = "0.1.0"

from .geometry import Cube, Tube  # noqa: E402
from .construction import ConstructionParams, ParentFamily, build_generation  # noqa: E402
from .cantor import CantorSchedule, CantorSet, build_cantor  # noqa: E402

__all__ = [
    "Cube", "Tube", "ConstructionParams", "ParentFamily", "build_generation",
    "CantorSchedule", "CantorSet", "build_cantor", "__version__",
]
