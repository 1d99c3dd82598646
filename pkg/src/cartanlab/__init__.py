"""Numerical laboratory for minimal graphs and p-harmonic functions on
rotationally symmetric Cartan-Hadamard manifolds.

Submodules: :mod:`~cartanlab.manifold` (warped metrics), :mod:`~cartanlab.criteria`
(integral solvability tests), :mod:`~cartanlab.barriers` (explicit barriers and
the gradient bound), :mod:`~cartanlab.solver` (finite-volume Dirichlet solver),
:mod:`~cartanlab.experiments` (Harnack chain and Liouville runs) and
:mod:`~cartanlab.cli`.
"""

__version__ = "0.1.0"
