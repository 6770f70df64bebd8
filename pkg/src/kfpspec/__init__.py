"""Spectral and scattering numerics for Kramers-Fokker-Planck operators with long-range potentials.

Submodules are imported on demand: ``hermite``, ``fiber``, ``fullop``,
``resolvent``, ``bs``, ``decay``, ``semigroup`` and ``cli``.
"""

__version__ = "0.1.0"
