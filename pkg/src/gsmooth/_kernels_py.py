"""Pure numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np
from scipy.special import gammaln, polygamma, psi


def pivoted_cholesky(A, tol):
   A = np.array(A, dtype=np.float64, copy=True)
   n = A.shape[0]
   R = np.zeros((n, n))
   piv = np.arange(n)
   rank = 0
   for k in range(n):
      d = np.diag(A)[k:]
      best = k + int(np.argmax(d))
      if not (A[best, best] > tol):
         break
      if best != k:
         A[[k, best], :] = A[[best, k], :]
         A[:, [k, best]] = A[:, [best, k]]
         R[:k, [k, best]] = R[:k, [best, k]]
         piv[[k, best]] = piv[[best, k]]
      r = np.sqrt(A[k, k])
      R[k, k] = r
      R[k, k + 1:] = A[k, k + 1:] / r
      row = R[k, k + 1:]
      A[k + 1:, k + 1:] -= np.outer(row, row)
      rank += 1
   return R, piv, rank


def chol_deriv(R, dA):
   n = R.shape[0]
   dR = np.zeros((n, n))
   for i in range(n):
      Ri = R[:i, i]
      dRi = dR[:i, i]
      b = dA[i, i] - 2.0 * dRi @ Ri
      dR[i, i] = 0.5 * b / R[i, i]
      if i + 1 < n:
         b = dA[i, i + 1:] - dRi @ R[:i, i + 1:] - Ri @ dR[:i, i + 1:]
         dR[i, i + 1:] = (b - R[i, i + 1:] * dR[i, i]) / R[i, i]
   return dR


def _terms(j, a, a1, logy, lphi, pp):
   omp = 1.0 - pp
   lpm1 = np.log(pp - 1.0)
   ja = -j * a
   lw = j * a1 - gammaln(j + 1.0) - gammaln(ja) - j * a * logy
   dr = -j / (pp - 1.0)
   dg = psi(ja)
   dp = (j * (lpm1 / omp**2 + a / (pp - 1.0) + lphi / omp**2 + 1.0 / (2.0 - pp))
         + j * dg / omp**2 - j * logy / omp**2)
   drp = j / (pp - 1.0)**2
   dpp = (j * (2.0 / ((pp - 1.0) * omp**2) - a / (pp - 1.0)**2 + 2.0 * lpm1 / omp**3
               + 2.0 * lphi / omp**3 + 1.0 / (2.0 - pp)**2)
          - j * j * polygamma(1, ja) / omp**4 + 2.0 * j * dg / omp**3
          - 2.0 * j * logy / omp**3)
   return lw, dr, dp, drp, dpp


def tweedie_series(y, phi, p, drop=37.0):
   y = np.asarray(y, dtype=np.float64)
   n = y.shape[0]
   out = np.zeros((n, 6))
   for i in range(n):
      yi, ph, pp = y[i], phi[i], p[i]
      if yi <= 0:
         continue
      a = (2.0 - pp) / (1.0 - pp)
      logy, lphi = np.log(yi), np.log(ph)
      a1 = a * np.log(pp - 1.0) - lphi / (pp - 1.0) - np.log(2.0 - pp)
      jm = max(1, int(np.floor(yi**(2.0 - pp) / (ph * (2.0 - pp)) + 0.5)))
      ref = jm * a1 - gammaln(jm + 1.0) - gammaln(-jm * a) - jm * a * logy
      # grow the window geometrically until both ends fall below the cut
      hi = jm + 16
      while True:
         lw_hi = hi * a1 - gammaln(hi + 1.0) - gammaln(-hi * a) - hi * a * logy
         if lw_hi < ref - drop:
            break
         hi = 2 * hi
      lo = jm
      while lo > 1:
         lo2 = max(1, lo - max(16, lo // 2))
         lw_lo = lo2 * a1 - gammaln(lo2 + 1.0) - gammaln(-lo2 * a) - lo2 * a * logy
         lo = lo2
         if lw_lo < ref - drop:
            break
      j = np.arange(lo, hi + 1, dtype=np.float64)
      lw, dr, dp, drp, dpp = _terms(j, a, a1, logy, lphi, pp)
      top = lw.max()
      keep = lw >= top - drop
      w = np.exp(lw[keep] - top)
      dr, dp, drp, dpp = dr[keep], dp[keep], drp[keep], dpp[keep]
      s0 = w.sum()
      g_r = (w * dr).sum() / s0
      g_p = (w * dp).sum() / s0
      out[i, 0] = top + np.log(s0)
      out[i, 1] = g_r
      out[i, 2] = g_p
      out[i, 3] = (w * dr * dr).sum() / s0 - g_r * g_r
      out[i, 4] = (w * (dr * dp + drp)).sum() / s0 - g_r * g_p
      out[i, 5] = (w * (dp * dp + dpp)).sum() / s0 - g_p * g_p
   return out
