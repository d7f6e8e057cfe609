"""Kinetic simulator for the perturbed Boltzmann equation on the torus in the diffusive scaling."""

__version__ = "0.1.0"
