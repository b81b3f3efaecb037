"""Ordered categorical family with a logistic latent variable.

Class ``r`` (1..R) is observed when the latent ``mu + e`` lies between cut
points ``alpha_{r-1}`` and ``alpha_r``.  With ``alpha_1 = -1`` and
``alpha_{r+1} = alpha_r + exp(theta_r)`` the cut points are ordered whatever
the ``R - 2`` free parameters.  Probabilities are formed as
``F(b) (1 - F(a)) (1 - exp(a - b))`` which is free of cancellation for any
position of ``mu`` relative to the cut points.
"""

import numpy as np
from scipy.special import expit

from .base import ExtendedFamily, FamilyDataError, compose, log_derivs


def _softplus(x):
   return np.logaddexp(0.0, x)


def _poly(k, F, G):
   # F^(k) = F (1 - F) P_k(F) for the logistic cdf; G = 1 - F
   if k == 1:
      return np.ones_like(F)
   if k == 2:
      return G - F
   v = F * G
   if k == 3:
      return 1.0 - 6.0 * v
   return (G - F) * (1.0 - 12.0 * v)


class OCat(ExtendedFamily):
   name = "ocat"
   default_link = "identity"

   def __init__(self, R=3, link=None):
      super().__init__(link)
      if R < 3:
         raise ValueError("ocat needs at least 3 categories")
      self.R = int(R)
      self.n_theta = self.R - 2

   def validate(self, y):
      if np.any(y != np.round(y)) or np.any(y < 1) or np.any(y > self.R):
         raise FamilyDataError(f"ocat response must be integer labels 1..{self.R}")

   def cuts(self, theta):
      a = np.empty(self.R + 1)
      a[0], a[-1] = -np.inf, np.inf
      a[1] = -1.0
      for r in range(2, self.R):
         a[r] = a[r - 1] + np.exp(theta[r - 2])
      return a

   def init_mu(self, y):
      a = self.cuts(np.zeros(self.n_theta))
      r = y.astype(int)
      lo = np.where(r == 1, a[1] - 1.0, a[np.maximum(r - 1, 1)])
      hi = np.where(r == self.R, a[self.R - 1] + 1.0, a[np.minimum(r, self.R - 1)])
      return 0.5 * (lo + hi)

   def probs(self, mu, theta):
      """``n x R`` matrix of class probabilities."""
      a = self.cuts(theta)
      mu = np.asarray(mu, dtype=float)
      out = np.empty((len(mu), self.R))
      for r in range(1, self.R + 1):
         out[:, r - 1] = np.exp(self._logp(np.full(len(mu), r), mu, a))
      return out

   def _logp(self, r, mu, a):
      x0 = a[r - 1] - mu
      x1 = a[r] - mu
      out = np.empty_like(mu)
      lo, hi = r == 1, r == self.R
      mid = ~(lo | hi)
      out[lo] = -_softplus(-x1[lo])
      out[hi] = -_softplus(x0[hi])
      d = x0[mid] - x1[mid]
      out[mid] = -_softplus(-x1[mid]) - _softplus(x0[mid]) + np.log(-np.expm1(d))
      return out

   def _ratios(self, r, mu, a):
      """``F^(k)(x1) / f`` and ``F^(k)(x0) / f`` for k = 1..4."""
      n = len(mu)
      x0 = a[r - 1] - mu
      x1 = a[r] - mu
      lo, hi = r == 1, r == self.R
      mid = ~(lo | hi)
      F1, G1 = expit(x1), expit(-x1)
      F0, G0 = expit(x0), expit(-x0)
      s1 = np.zeros(n)
      s0 = np.zeros(n)
      # s1 = (1 - F1) / f * F1, s0 = F0 / f * (1 - F0), before the polynomial factors
      s1[lo] = G1[lo]
      s0[hi] = F0[hi]
      if np.any(mid):
         em = -np.expm1(x0[mid] - x1[mid])
         s1[mid] = np.exp(_softplus(x0[mid]) - _softplus(x1[mid])) / em
         s0[mid] = np.exp(_softplus(-x1[mid]) - _softplus(-x0[mid])) / em
      F1 = np.where(hi, 1.0, F1)
      G1 = np.where(hi, 0.0, G1)
      F0 = np.where(lo, 0.0, F0)
      G0 = np.where(lo, 1.0, G0)
      rho1 = {k: s1 * _poly(k, F1, G1) for k in range(1, 5)}
      rho0 = {k: s0 * _poly(k, F0, G0) for k in range(1, 5)}
      return rho1, rho0

   def _saturated(self, r, theta):
      """Saturated log likelihood and its derivative w.r.t. the width parameter."""
      n = len(r)
      ls = np.zeros(n)
      d1 = np.zeros(n)
      d2 = np.zeros(n)
      mid = (r > 1) & (r < self.R)
      if np.any(mid):
         u = np.exp(theta[r[mid] - 2]) / 2.0
         # log(F(u) - F(-u)) = log tanh(u / 2)
         ls[mid] = np.log(-np.expm1(-u)) - np.log1p(np.exp(-u))
         A = 2.0 * u * np.exp(-u) / (-np.expm1(-2.0 * u))
         small = u < 1e-3
         w = np.where(small, -u**2 / 3.0 + u**4 / 45.0,
                      1.0 - u * (1.0 + np.exp(-2 * u)) / (-np.expm1(-2 * u)))
         d1[mid] = A
         d2[mid] = A * w
      return ls, d1, d2, mid

   def ls(self, y, theta, phi, full):
      r = y.astype(int)
      ls, s1, s2, mid = self._saturated(r, np.asarray(theta, dtype=float))
      n, m = len(y), self.n_theta
      lt = np.zeros((n, m))
      ltt = np.zeros((n, m, m))
      i = np.nonzero(mid)[0]
      lt[i, r[i] - 2] = s1[i]
      ltt[i, r[i] - 2, r[i] - 2] = s2[i]
      return ls, lt, ltt

   def dev(self, y, mu, theta, full):
      theta = np.asarray(theta, dtype=float)
      r = y.astype(int)
      a = self.cuts(theta)
      n, m = len(mu), self.n_theta
      l0 = self._logp(r, mu, a)
      rho1, rho0 = self._ratios(r, mu, a)

      def kappa(c):
         p, q, s = c.count(0), c.count(1), c.count(2)
         if q and s:
            return 0.0
         sg = -1.0 if p % 2 else 1.0
         if q == 0 and s == 0:
            return sg * (rho1[p] - rho0[p])
         if q == 0:
            return sg * rho1[p + s]
         return -sg * rho0[p + q]

      cache = {}

      def outer(c):
         if c not in cache:
            cache[c] = log_derivs(kappa, c)
         return cache[c]

      et = np.exp(theta)
      # a0 = alpha_{r-1} depends on theta_t (t = 1..m) when t <= r - 2; a1 when t <= r - 1
      on0 = [(r - 2 >= t) & (r > 1) for t in range(1, m + 1)]
      on1 = [(r - 1 >= t) & (r < self.R) for t in range(1, m + 1)]

      def inner(c, blk):
         if c == 0:
            return 1.0 if blk == (0,) else None
         if 0 in blk or len(set(blk)) != 1:
            return None
         t = blk[0]
         mask = on0[t - 1] if c == 1 else on1[t - 1]
         return np.where(mask, et[t - 1], 0.0)

      def d(idx):
         return compose(outer, inner, idx, 3) * np.ones(n)

      lm = {k: d((0,) * k) for k in range(1, 5 if full else 3)}
      ls, s1, s2, mid = self._saturated(r, theta)
      out = {"D": 2.0 * (ls - l0), "Dm": -2.0 * lm[1], "Dmm": -2.0 * lm[2]}
      if not full:
         return out
      out["Dmmm"] = -2.0 * lm[3]
      out["Dmmmm"] = -2.0 * lm[4]
      keys = {"Dt": 0, "Dmt": 1, "Dmmt": 2, "Dmmmt": 3}
      for key, p in keys.items():
         out[key] = np.column_stack([-2.0 * d((0,) * p + (t,)) for t in range(1, m + 1)])
      for key, p in (("Dtt", 0), ("Dmtt", 1), ("Dmmtt", 2)):
         A = np.zeros((n, m, m))
         for t in range(1, m + 1):
            for u in range(t, m + 1):
               A[:, t - 1, u - 1] = A[:, u - 1, t - 1] = -2.0 * d((0,) * p + (t, u))
         out[key] = A
      # saturated part depends on the width parameter of the observed class only
      for i in np.nonzero(mid)[0]:
         t = r[i] - 2
         out["Dt"][i, t] += 2.0 * s1[i]
         out["Dtt"][i, t, t] += 2.0 * s2[i]
      return out
