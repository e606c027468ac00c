"""Kinetic Monte Carlo for a heat-conduction chain with stochastic energy exchanges."""
__version__ = "0.1.0"
