"""
Stationary points of the spin-polarized XLDA energy functional for H2:
finite-element SCF, constrained Hessian stability, continuation and the
large-alpha soliton limit.
"""
__version__ = "0.3.0"

__author__ = "h2-xlda developers"
__email__ = "h2-xlda@users.noreply.github.com"

__url__ = "https://github.com/h2-xlda/h2-xlda"
__license__ = "BSD License"
