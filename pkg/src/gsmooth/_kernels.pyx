# cython: language_level=3
"""Compiled hot loops.

Every routine here has a pure numpy twin in ``_kernels_py`` with the same
signature; ``gsmooth.kernels`` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, lgamma, fabs, ceil, floor

cnp.import_array()


def pivoted_cholesky(const double[:, ::1] A, double tol):
   """Diagonally pivoted Cholesky ``A[piv][:, piv] = R.T @ R``.

   Stops once the largest remaining diagonal is ``<= tol``; rows of ``R``
   past ``rank`` are left zero.
   """
   cdef Py_ssize_t n = A.shape[0]
   cdef Py_ssize_t i, j, k, best, tmp_i
   cdef double dmax, s, piv_val
   W_arr = np.array(A, dtype=np.float64, copy=True)
   R_arr = np.zeros((n, n), dtype=np.float64)
   piv_arr = np.arange(n, dtype=np.intp)
   cdef double[:, ::1] W = W_arr
   cdef double[:, ::1] R = R_arr
   cdef Py_ssize_t[::1] piv = piv_arr
   cdef Py_ssize_t rank = 0
   cdef double t
   for k in range(n):
      best = k
      dmax = W[k, k]
      for i in range(k + 1, n):
         if W[i, i] > dmax:
            dmax = W[i, i]
            best = i
      if not (dmax > tol):
         break
      if best != k:
         # symmetric swap of rows/cols k and best in W, and columns of R
         for j in range(n):
            t = W[k, j]; W[k, j] = W[best, j]; W[best, j] = t
         for j in range(n):
            t = W[j, k]; W[j, k] = W[j, best]; W[j, best] = t
         for j in range(k):
            t = R[j, k]; R[j, k] = R[j, best]; R[j, best] = t
         tmp_i = piv[k]; piv[k] = piv[best]; piv[best] = tmp_i
      piv_val = sqrt(W[k, k])
      R[k, k] = piv_val
      for j in range(k + 1, n):
         R[k, j] = W[k, j] / piv_val
      for i in range(k + 1, n):
         s = R[k, i]
         for j in range(i, n):
            W[i, j] -= s * R[k, j]
            W[j, i] = W[i, j]
      rank += 1
   return R_arr, piv_arr, rank


def chol_deriv(const double[:, ::1] R, const double[:, ::1] dA):
   """Derivative of the upper Cholesky factor given the derivative of ``A``."""
   cdef Py_ssize_t n = R.shape[0]
   cdef Py_ssize_t i, j, k
   cdef double b
   dR_arr = np.zeros((n, n), dtype=np.float64)
   cdef double[:, ::1] dR = dR_arr
   for i in range(n):
      b = dA[i, i]
      for k in range(i):
         b -= 2.0 * dR[k, i] * R[k, i]
      dR[i, i] = 0.5 * b / R[i, i]
      for j in range(i + 1, n):
         b = dA[i, j]
         for k in range(i):
            b -= dR[k, i] * R[k, j] + R[k, i] * dR[k, j]
         dR[i, j] = (b - R[i, j] * dR[i, i]) / R[i, i]
   return dR_arr


cdef double _digamma(double x) nogil:
   cdef double r = 0.0, f, x2
   while x < 12.0:
      r -= 1.0 / x
      x += 1.0
   f = 1.0 / (x * x)
   x2 = f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132)))))
   return r + log(x) - 0.5 / x - x2


cdef double _trigamma(double x) nogil:
   cdef double r = 0.0, f
   while x < 12.0:
      r += 1.0 / (x * x)
      x += 1.0
   f = 1.0 / (x * x)
   return r + 1.0 / x + f / 2.0 + (1.0 / x) * f * (1.0 / 6 - f * (1.0 / 30 - f * (1.0 / 42 - f * (1.0 / 30))))


def tweedie_series(const double[::1] y, const double[::1] phi, const double[::1] p, double drop=37.0):
   """Log of the Tweedie density series and its derivatives.

   For each ``y > 0`` returns ``log w`` with ``w = sum_j W_j`` plus first and
   second derivatives with respect to ``log phi`` and ``p``. Columns of the
   result: value, d_rho, d_p, d_rho_rho, d_rho_p, d_p_p.
   """
   cdef Py_ssize_t n = y.shape[0]
   out_arr = np.zeros((n, 6), dtype=np.float64)
   cdef double[:, ::1] out = out_arr
   cdef Py_ssize_t i
   cdef long j, jlo, jhi, jm
   cdef double yi, ph, pp, a, a1, a1p, logy, lphi, jmax, ref, lw, w, dr, dp, drp, dpp, ja
   cdef double s0, s_r, s_p, s_rr, s_rp, s_pp, omp, lpm1
   for i in range(n):
      yi = y[i]; ph = phi[i]; pp = p[i]
      if yi <= 0:
         continue
      a = (2.0 - pp) / (1.0 - pp)
      omp = 1.0 - pp
      lpm1 = log(pp - 1.0)
      logy = log(yi)
      lphi = log(ph)
      a1 = a * lpm1 - lphi / (pp - 1.0) - log(2.0 - pp)
      jmax = exp((2.0 - pp) * logy) / (ph * (2.0 - pp))
      jm = <long> floor(jmax + 0.5)
      if jm < 1:
         jm = 1
      ref = jm * a1 - lgamma(jm + 1.0) - lgamma(-jm * a) - jm * a * logy
      s0 = 0; s_r = 0; s_p = 0; s_rr = 0; s_rp = 0; s_pp = 0
      # upward sweep from jm, then downward from jm-1
      j = jm
      while True:
         ja = -j * a
         lw = j * a1 - lgamma(j + 1.0) - lgamma(ja) - j * a * logy
         if lw < ref - drop and j > jm:
            break
         if lw > ref:
            # rescale running sums to keep the reference at the maximum
            w = exp(ref - lw)
            s0 *= w; s_r *= w; s_p *= w; s_rr *= w; s_rp *= w; s_pp *= w
            ref = lw
         w = exp(lw - ref)
         dr = -j / (pp - 1.0)
         dp = j * (lpm1 / (omp * omp) + a / (pp - 1.0) + lphi / (omp * omp) + 1.0 / (2.0 - pp)) \
            + j * _digamma(ja) / (omp * omp) - j * logy / (omp * omp)
         drp = j / ((pp - 1.0) * (pp - 1.0))
         dpp = j * (2.0 / ((pp - 1.0) * omp * omp) - a / ((pp - 1.0) * (pp - 1.0))
                    + 2.0 * lpm1 / (omp * omp * omp) + 2.0 * lphi / (omp * omp * omp)
                    + 1.0 / ((2.0 - pp) * (2.0 - pp))) \
            - j * j * _trigamma(ja) / (omp * omp * omp * omp) \
            + 2.0 * j * _digamma(ja) / (omp * omp * omp) - 2.0 * j * logy / (omp * omp * omp)
         s0 += w
         s_r += w * dr
         s_p += w * dp
         s_rr += w * dr * dr
         s_rp += w * (dr * dp + drp)
         s_pp += w * (dp * dp + dpp)
         j += 1
      j = jm - 1
      while j >= 1:
         ja = -j * a
         lw = j * a1 - lgamma(j + 1.0) - lgamma(ja) - j * a * logy
         if lw < ref - drop:
            break
         if lw > ref:
            w = exp(ref - lw)
            s0 *= w; s_r *= w; s_p *= w; s_rr *= w; s_rp *= w; s_pp *= w
            ref = lw
         w = exp(lw - ref)
         dr = -j / (pp - 1.0)
         dp = j * (lpm1 / (omp * omp) + a / (pp - 1.0) + lphi / (omp * omp) + 1.0 / (2.0 - pp)) \
            + j * _digamma(ja) / (omp * omp) - j * logy / (omp * omp)
         drp = j / ((pp - 1.0) * (pp - 1.0))
         dpp = j * (2.0 / ((pp - 1.0) * omp * omp) - a / ((pp - 1.0) * (pp - 1.0))
                    + 2.0 * lpm1 / (omp * omp * omp) + 2.0 * lphi / (omp * omp * omp)
                    + 1.0 / ((2.0 - pp) * (2.0 - pp))) \
            - j * j * _trigamma(ja) / (omp * omp * omp * omp) \
            + 2.0 * j * _digamma(ja) / (omp * omp * omp) - 2.0 * j * logy / (omp * omp * omp)
         s0 += w
         s_r += w * dr
         s_p += w * dp
         s_rr += w * dr * dr
         s_rp += w * (dr * dp + drp)
         s_pp += w * (dp * dp + dpp)
         j -= 1
      out[i, 0] = ref + log(s0)
      out[i, 1] = s_r / s0
      out[i, 2] = s_p / s0
      out[i, 3] = s_rr / s0 - out[i, 1] * out[i, 1]
      out[i, 4] = s_rp / s0 - out[i, 1] * out[i, 2]
      out[i, 5] = s_pp / s0 - out[i, 2] * out[i, 2]
   return out_arr
