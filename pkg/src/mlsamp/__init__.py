"""Single- and multilevel sampling of elliptic PDEs with random coefficients.

Estimates the spatially varying mean of the solution of an elliptic
equation with a random diffusion coefficient, using Monte Carlo or
sparse-grid stochastic collocation in the stochastic variables, with
optimal coordination of per-level sample sizes across a hierarchy of
nested finite element meshes.
"""

__version__ = "0.1.0"
