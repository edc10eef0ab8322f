"""Coupled cardiac electromechanics on embedded triangle meshes."""

__version__ = "0.1.0"
