"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``GSMOOTH_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("GSMOOTH_PURE_PYTHON", "0") != "1":
   try:
      from . import _kernels as _impl
      BACKEND = "cython"
   except ImportError:
      _impl = _kernels_py
else:
   _impl = _kernels_py

import numpy as np


def pivoted_cholesky(A, tol=0.0):
   """Return ``(R, piv, rank)`` with ``A[piv][:, piv] = R.T @ R`` on the leading ``rank`` rows."""
   return _impl.pivoted_cholesky(np.ascontiguousarray(A, dtype=np.float64), float(tol))


def chol_deriv(R, dA):
   """Derivative of upper-triangular ``R`` (``A = R.T @ R``) in the direction ``dA``."""
   return _impl.chol_deriv(np.ascontiguousarray(R, dtype=np.float64),
                           np.ascontiguousarray(dA, dtype=np.float64))


def tweedie_series(y, phi, p, drop=37.0):
   """Series part of the Tweedie log density; see ``_kernels.tweedie_series``."""
   y = np.ascontiguousarray(y, dtype=np.float64)
   phi = np.ascontiguousarray(np.broadcast_to(phi, y.shape), dtype=np.float64)
   p = np.ascontiguousarray(np.broadcast_to(p, y.shape), dtype=np.float64)
   return _impl.tweedie_series(y, phi, p, float(drop))
