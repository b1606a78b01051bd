"""Desk-scale lab for the multiplicative stochastic heat equation.

Subpackages: noise (white-noise grids), kernel (heat kernel and overlap
integrals), solver (propagator fields, log-transform profiles, metrics),
chaos (truncated series oracle), polymer (quenched path measures),
verify (statistical test harness), cli (command line front end).
"""

__version__ = "0.1.0"
