"""Spiral-wave drift on curved anisotropic surfaces.

Builds the diffusion-induced metric and Ricci curvature scalar for a surface
with a fiber field, evolves Barkley-model spiral waves on it with a
divergence-form nine-point stencil, and checks the observed drift of the
rotation center against integrated and closed-form drift laws, including
fitting the mobility coefficients (q0, q1, q2).
"""

from .geometry import (
    ConstantFiber,
    FiberFrame,
    GeometryError,
    Grid,
    LinearFiber,
    MetricField,
    ParaboloidShape,
    PlaneShape,
    SurfaceSpec,
    TabulatedFiber,
    TabulatedShape,
    christoffel_and_ricci,
    diffusion_tensor_3d,
    fiber_frame,
    induced_metric,
    ricci_decomposition,
)

__version__ = "0.1.0"
