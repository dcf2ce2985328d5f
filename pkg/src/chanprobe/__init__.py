"""Channel quantumness tests from two-state ensembles.

Decides whether quadrature or tomography data observed behind a channel
certify effective entanglement (PPT test on expectation-value matrices), and
builds the measure-and-re-prepare strategies that bound the classical domain.
"""

__version__ = "0.1.0"

from .numerics import ContractError, DensityMatrix, Operator, TOL  # noqa: F401
