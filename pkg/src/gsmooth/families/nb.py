"""Negative binomial family; ``theta`` is the log of the size parameter."""

import numpy as np
from scipy.special import gammaln, polygamma, psi, xlogy

from .base import ExtendedFamily, FamilyDataError


def _v_minus_log1p(v):
   # v - log(1 + v), accurate near zero
   small = np.abs(v) < 1e-3
   out = np.empty_like(v)
   vs = v[small]
   out[small] = vs**2 / 2 - vs**3 / 3 + vs**4 / 4 - vs**5 / 5
   vb = v[~small]
   out[~small] = vb - np.log1p(vb)
   return out


class NegBin(ExtendedFamily):
   name = "nb"
   n_theta = 1
   default_link = "log"

   def validate(self, y):
      if np.any(y < 0) or np.any(y != np.round(y)):
         raise FamilyDataError("nb response must be non-negative integers")

   def init_theta(self, y):
      m, v = np.mean(y), np.var(y)
      k = m * m / (v - m) if v > m * 1.05 else 100.0
      return np.array([np.log(np.clip(k, 1e-2, 1e4))])

   def init_mu(self, y):
      return y + 0.1 * np.mean(y) + 0.1

   def dev(self, y, mu, theta, full):
      k = np.exp(theta[0])
      km = k + mu
      D = 2.0 * (xlogy(y, y) - xlogy(y, mu) - (y + k) * np.log((y + k) / km))
      out = {"D": D,
             "Dm": 2.0 * ((y + k) / km - y / mu),
             "Dmm": 2.0 * (y / mu**2 - (y + k) / km**2)}
      if not full:
         return out
      out["Dmmm"] = 4.0 * ((y + k) / km**3 - y / mu**3)
      out["Dmmmm"] = 12.0 * (y / mu**4 - (y + k) / km**4)
      v = (y - mu) / km
      Dk = 2.0 * _v_minus_log1p(v)
      Dkk = -2.0 * (y - mu)**2 / (km**2 * (k + y))
      Dmk = 2.0 * (mu - y) / km**2
      Dmkk = -4.0 * (mu - y) / km**3
      Dmmk = 2.0 * (k - mu + 2 * y) / km**3
      Dmmkk = -4.0 * (k - 2 * mu + 3 * y) / km**4
      Dmmmk = -4.0 * (2 * k - mu + 3 * y) / km**4
      out["Dt"] = (k * Dk)[:, None]
      out["Dtt"] = (k * Dk + k * k * Dkk)[:, None, None]
      out["Dmt"] = (k * Dmk)[:, None]
      out["Dmtt"] = (k * Dmk + k * k * Dmkk)[:, None, None]
      out["Dmmt"] = (k * Dmmk)[:, None]
      out["Dmmtt"] = (k * Dmmk + k * k * Dmmkk)[:, None, None]
      out["Dmmmt"] = (k * Dmmmk)[:, None]
      return out

   def ls(self, y, theta, phi, full):
      k = np.exp(theta[0])
      pos = y > 0
      ls = np.zeros_like(y)
      yp = y[pos]
      ls[pos] = (gammaln(yp + k) - gammaln(k) - gammaln(yp + 1) + xlogy(k, k) + xlogy(yp, yp)
                 - (yp + k) * np.log(k + yp))
      lk = np.zeros_like(y)
      lkk = np.zeros_like(y)
      lk[pos] = psi(yp + k) - psi(k) + np.log(k / (k + yp))
      lkk[pos] = polygamma(1, yp + k) - polygamma(1, k) + 1.0 / k - 1.0 / (k + yp)
      return ls, (k * lk)[:, None], (k * lk + k * k * lkk)[:, None, None]
