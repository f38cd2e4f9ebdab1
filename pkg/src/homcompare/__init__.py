"""
Comparison of Fourier-Galerkin and finite-element homogenisation.

Both discretisations produce guaranteed upper bounds on the effective
conductivity of a periodic cell, so their accuracy, cost and solver
behaviour can be compared on the same footing.
"""

__version__ = "0.1.0"
