"""Spinor perturbation theory toolkit: Clifford/fiber algebra, model manifolds,
stochastic heat-semigroup estimators, dense reference solvers and the
integrability criteria for Dirac scattering."""

__version__ = "0.1.0"
