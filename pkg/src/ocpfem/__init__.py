"""Finite element solvers for tracking-type optimal control of the Poisson equation."""

__version__ = "0.1.0"
