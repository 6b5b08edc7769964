"""Optimal control of semilinear parabolic equations with box and mixed constraints."""
from ._backend import available_backends, get_backend, set_backend

__version__ = "0.1.0"
