"""Mesh-free detection of hidden voids and inclusions.

Coordinate networks for displacements/stresses (or temperature/flux) are
trained against PDE residuals, sparse boundary measurements, and an
eikonal-regularized level-set density field whose 0.5 contour is the
recovered material boundary.
"""

__version__ = "0.1.0"
