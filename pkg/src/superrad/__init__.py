"""Superradiance of disordered atom arrays in a 1D waveguide."""
