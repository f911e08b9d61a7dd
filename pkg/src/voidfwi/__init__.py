"""Void reconstruction by full waveform inversion of scaled scalar-wave models.

Voids are parametrized by a dimensionless scaling field gamma acting on
density, wave speed, both, or each separately. A priori known geometry is
immersed through a finite-cell indicator field alpha.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
