"""Structured-grid simulator for a diffuse-interface tumor growth model.

Four coupled balances on a uniform 2-D grid: a phase-field equation for the
tumor fraction with a logarithmic mixing potential, a Darcy law for the
tissue velocity with capillary forcing, an upwind transport law for the
viable-cell fraction, and a quasi-static nutrient balance.  Every a priori
bound the model analysis provides is mirrored by a runtime diagnostic.
"""

from .fields import (
    BoundaryCondition,
    BoundarySpec,
    FaceVectorField,
    GridSpec,
    ScalarField,
)
from .physics import ModelParams, PotentialSpec

__all__ = [
    "BoundaryCondition",
    "BoundarySpec",
    "FaceVectorField",
    "GridSpec",
    "ScalarField",
    "ModelParams",
    "PotentialSpec",
]

__version__ = "0.1.0"
