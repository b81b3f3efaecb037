"""Tweedie family with power ``p`` in ``(a, b)``, ``p = (a + b e^theta) / (1 + e^theta)``.

The normalizing series of the density is summed from its largest term outwards
by ``gsmooth.kernels.tweedie_series``.
"""

import numpy as np
from scipy.special import expit

from .. import kernels
from .base import ExtendedFamily, FamilyDataError


def _g(x, c, p):
   """``x^(c-p)/(c-p)`` and its first two ``p`` derivatives (zero where ``x == 0``)."""
   q = c - p
   pos = x > 0
   L = np.where(pos, np.log(np.where(pos, x, 1.0)), 0.0)
   e = np.where(pos, np.exp(q * L), 0.0)
   g = e / q
   gp = -e * (L / q - 1.0 / q**2)
   gpp = e * (L * L / q - 2.0 * L / q**2 + 2.0 / q**3)
   return g, gp, gpp


class Tweedie(ExtendedFamily):
   name = "tw"
   n_theta = 1
   has_scale = True
   default_link = "log"

   def __init__(self, link=None, a=1.01, b=1.99):
      super().__init__(link)
      if not (1.0 < a < b < 2.0):
         raise ValueError("Tweedie power bounds must satisfy 1 < a < b < 2")
      self.a, self.b = a, b

   def validate(self, y):
      if np.any(y < 0):
         raise FamilyDataError("tweedie response must be non-negative")

   def init_mu(self, y):
      return y + 0.1 * np.mean(y) + 0.1

   def power(self, theta):
      s = expit(theta)
      d = self.b - self.a
      return self.a + d * s, d * s * (1 - s), d * s * (1 - s) * (1 - 2 * s)

   def dev(self, y, mu, theta, full):
      p, pt, ptt = self.power(theta[0])
      g1y, g1y_p, g1y_pp = _g(y, 1.0, p)
      g2y, g2y_p, g2y_pp = _g(y, 2.0, p)
      g1m, g1m_p, g1m_pp = _g(mu, 1.0, p)
      g2m, g2m_p, g2m_pp = _g(mu, 2.0, p)
      mp = mu**-p
      D = 2.0 * (y * g1y - g2y - y * g1m + g2m)
      out = {"D": np.maximum(D, 0.0),
             "Dm": 2.0 * mp * (mu - y),
             "Dmm": 2.0 * (p * y * mp / mu + (1 - p) * mp)}
      if not full:
         return out
      L = np.log(mu)
      out["Dmmm"] = 2.0 * (-p * (p + 1) * y * mp / mu**2 - p * (1 - p) * mp / mu)
      out["Dmmmm"] = 2.0 * (p * (p + 1) * (p + 2) * y * mp / mu**3
                            + p * (p + 1) * (1 - p) * mp / mu**2)
      Dp = 2.0 * (y * g1y_p - g2y_p - y * g1m_p + g2m_p)
      Dpp = 2.0 * (y * g1y_pp - g2y_pp - y * g1m_pp + g2m_pp)
      Dmp = -2.0 * (mu - y) * L * mp
      Dmpp = 2.0 * (mu - y) * L * L * mp
      Dmmp = 2.0 * (y * mp / mu - p * y * mp / mu * L - mp - (1 - p) * mp * L)
      Dmmpp = 2.0 * (-2 * y * L * mp / mu + p * y * L * L * mp / mu + 2 * L * mp
                     + (1 - p) * L * L * mp)
      Dmmmp = 2.0 * mp / mu**2 * (mu * (p * (1 - p) * L + 2 * p - 1)
                                   + y * (p * (p + 1) * L - 2 * p - 1))

      def th1(xp):
         return (xp * pt)[:, None]

      def th2(xp, xpp):
         return (xpp * pt * pt + xp * ptt)[:, None, None]

      out.update(Dt=th1(Dp), Dtt=th2(Dp, Dpp), Dmt=th1(Dmp), Dmtt=th2(Dmp, Dmpp),
                 Dmmt=th1(Dmmp), Dmmtt=th2(Dmmp, Dmmpp), Dmmmt=th1(Dmmmp))
      return out

   def ls(self, y, theta, phi, full):
      p, pt, ptt = self.power(theta[0])
      n = len(y)
      ser = kernels.tweedie_series(y, phi, p)
      g1, g1p, g1pp = _g(y, 1.0, p)
      g2, g2p, g2pp = _g(y, 2.0, p)
      T, Tp, Tpp = y * g1 - g2, y * g1p - g2p, y * g1pp - g2pp
      pos = y > 0
      logy = np.where(pos, np.log(np.where(pos, y, 1.0)), 0.0)
      ls = np.where(pos, ser[:, 0] - logy + T / phi, 0.0)
      l_s = np.where(pos, ser[:, 1] - T / phi, 0.0)
      l_p = np.where(pos, ser[:, 2] + Tp / phi, 0.0)
      l_ss = np.where(pos, ser[:, 3] + T / phi, 0.0)
      l_ps = np.where(pos, ser[:, 4] - Tp / phi, 0.0)
      l_pp = np.where(pos, ser[:, 5] + Tpp / phi, 0.0)
      lt = np.column_stack([l_p * pt, l_s])
      ltt = np.empty((n, 2, 2))
      ltt[:, 0, 0] = l_pp * pt * pt + l_p * ptt
      ltt[:, 0, 1] = ltt[:, 1, 0] = l_ps * pt
      ltt[:, 1, 1] = l_ss
      return ls, lt, ltt
