"""Numerical verification of Hubbard-Stratonovich integral identities for matrix symmetry classes."""

__version__ = "0.1.0"
