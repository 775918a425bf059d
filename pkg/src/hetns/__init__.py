"""Numerical toolkit for compressible Navier-Stokes flows with heterogeneous pressure laws.

Modules: ``grid`` and ``fields`` (periodic grids, operators, I/O), ``kernels``
(mollifiers, compactness kernels), ``pressure`` (laws, energies, hypothesis
checks), ``solver`` (regularized flow, fixed point, cascade), ``weights``
(penalized transport weight), ``diagnostics`` (compactness functionals,
energy ledgers) and ``cli``.
"""
__version__ = "0.1.0"
