"""Select the compiled kernel module when it is importable."""
try:
    from . import _ckernels as kernels
except ImportError:  # extension not built
    from . import _pykernels as kernels

BACKEND = kernels.BACKEND
