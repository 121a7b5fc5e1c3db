"""Numeric kernel backend selection.

The compiled Cython backend is used when available; set RDECOMP_PURE_PYTHON=1
to force the numpy fallback. `BACKEND` records which one was picked.
"""

import os

if os.environ.get("RDECOMP_PURE_PYTHON", "") == "1":
    from rdecomp._kernels import _py_kernels as _impl

    BACKEND = "python"
else:
    try:
        from rdecomp._kernels import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        from rdecomp._kernels import _py_kernels as _impl

        BACKEND = "python"

matmul = _impl.matmul
tanh_vjp = _impl.tanh_vjp
sigmoid_vjp = _impl.sigmoid_vjp
softmax_rows = _impl.softmax_rows
softmax_rows_vjp = _impl.softmax_rows_vjp
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_vjp = _impl.layer_norm_rows_vjp
gae = _impl.gae
