"""Boundary-driven non-compact spin-chain particle processes.

Submodules
----------
fock
    Truncated lowest-weight sl(2) modules.
process
    Rates, generators and stationary laws of the particle chain.
simulate
    Exact Gillespie simulation and ensemble statistics.
levy
    Continuum generators on polynomials and Levy jump simulation.
duality
    Duality functions, dual walkers and stationary correlations.
qism
    Lax, R- and K-matrices, transfer matrices and Hamiltonian extraction.
cli
    The ``madm`` command line.
"""

__version__ = "0.1.0"

from .process import ChainSpec, StateSpaceTooLarge  # noqa: E402

__all__ = ["ChainSpec", "StateSpaceTooLarge", "__version__"]
