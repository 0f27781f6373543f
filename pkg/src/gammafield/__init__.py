"""Chi-squared random fields with long-range dependence.

Laguerre analysis of subordinating functions, simulation of long-memory
Gaussian and chi-squared fields, spectra of the Riesz-kernel operator, and
the rank-one and rank-two limit laws of normalized field integrals.
"""

__version__ = "0.1.0"
