"""Registro robusto sim(3)/SE(3) entre mapas de profundidade de keyframes."""
from app.alignment.energy import (
    AlignmentProblem, CauchyKernel, energy_inverse_depth, energy_point_to_plane, energy_photometric,
)
from app.alignment.solver import AlignmentResult, AlignmentSettings, align, align_multi, build_pyramid

__all__ = [
    "AlignmentProblem", "AlignmentResult", "AlignmentSettings", "CauchyKernel",
    "align", "align_multi", "build_pyramid",
    "energy_inverse_depth", "energy_point_to_plane", "energy_photometric",
]
