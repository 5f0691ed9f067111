"""Numerical verification lab for Michael-Simon-Sobolev inequalities.

Builds quadrature meshes of submanifolds in model ambient spaces, solves
discrete optimal transport to ambient target domains, propagates matrix
Jacobi/Riccati comparisons along the transport geodesics, and evaluates
the resulting Sobolev-type inequalities with exact constants.
"""

from . import geometry, submanifold, fields, transport, jacobi, inequalities

__all__ = [
    "geometry",
    "submanifold",
    "fields",
    "transport",
    "jacobi",
    "inequalities",
]

__version__ = "0.1.0"
