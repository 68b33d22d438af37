# numba is optional: the symmetric Gauss-Seidel smoother and the direct
# boundary Coulomb sum fall back to scipy/numpy when it is missing.

HAS_NUMBA = True
try:
    import numba  # noqa: F401
except ImportError:
    HAS_NUMBA = False

HAS_PARALLEL_NUMBA = False
if HAS_NUMBA:
    import numba

    if getattr(numba, "prange", None) is not None:
        HAS_PARALLEL_NUMBA = True
