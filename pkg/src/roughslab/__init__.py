"""Rough-slab scattering toolkit: FDTD characterization, compact angular
scattering models, and diffuse-aware indoor ray tracing at mm-wave."""

__version__ = "0.1.0"
