"""Primal-dual training of safe policies for constrained MDPs."""

__version__ = "0.1.0"
