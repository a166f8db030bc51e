"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it has been built. Set
``HVFAE_KERNELS=python`` to force the numpy implementation.

Only the pairwise Gaussian kernels are dispatched to the extension: the Gram
matrix and softplus are already BLAS or ufunc bound and run faster in numpy
(see ``benchmarks/bench_kernels.py``).
"""

import os

from hvfae._kernels import _pykernels

BACKEND = "python"

if os.environ.get("HVFAE_KERNELS", "").lower() != "python":
    try:
        from hvfae._kernels import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

pairwise_gauss_logpdf = _impl.pairwise_gauss_logpdf
pairwise_gauss_logpdf_grad = _impl.pairwise_gauss_logpdf_grad
rbf_gram = _pykernels.rbf_gram
rbf_gram_grad = _pykernels.rbf_gram_grad
softplus_sigmoid = _pykernels.softplus_sigmoid

__all__ = [
    "BACKEND",
    "pairwise_gauss_logpdf",
    "pairwise_gauss_logpdf_grad",
    "rbf_gram",
    "rbf_gram_grad",
    "softplus_sigmoid",
]
