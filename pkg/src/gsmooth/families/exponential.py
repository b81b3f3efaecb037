"""Gaussian, Poisson and binomial families in deviance form."""

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .base import EtaDerivs, ExtendedFamily, FamilyDataError


def _softplus(x):
   return np.logaddexp(0.0, x)


class Gaussian(ExtendedFamily):
   name = "gaussian"
   has_scale = True
   default_link = "identity"

   def dev(self, y, mu, theta, full):
      r = y - mu
      z = np.zeros_like(r)
      out = {"D": r * r, "Dm": -2.0 * r, "Dmm": np.full_like(r, 2.0)}
      if full:
         out.update(Dmmm=z, Dmmmm=z)
      return out

   def ls(self, y, theta, phi, full):
      n = len(y)
      ls = np.full(n, -0.5 * np.log(2 * np.pi * phi))
      ls_t = np.full((n, 1), -0.5)
      return ls, ls_t, np.zeros((n, 1, 1))

   def init_mu(self, y):
      return np.full_like(y, np.mean(y), dtype=float)


class Poisson(ExtendedFamily):
   name = "poisson"
   default_link = "log"

   def validate(self, y):
      if np.any(y < 0) or np.any(y != np.round(y)):
         raise FamilyDataError("poisson response must be non-negative integers")

   def dev(self, y, mu, theta, full):
      out = {"D": 2.0 * (xlogy(y, y) - xlogy(y, mu) - (y - mu)),
             "Dm": 2.0 * (1.0 - y / mu),
             "Dmm": 2.0 * y / mu**2}
      if full:
         out.update(Dmmm=-4.0 * y / mu**3, Dmmmm=12.0 * y / mu**4)
      return out

   def ls(self, y, theta, phi, full):
      n = len(y)
      return xlogy(y, y) - y - gammaln(y + 1.0), np.zeros((n, 0)), np.zeros((n, 0, 0))

   def canonical(self, y, eta, full):
      if self.link.name != "log":
         return None
      mu = np.exp(np.clip(eta, -700, 700))
      d = EtaDerivs(l=y * eta - mu - gammaln(y + 1.0), l1=(y - mu)[:, None],
                    l2=-mu[:, None, None])
      if full:
         d.l3 = -mu[:, None, None, None]
         d.l4 = -mu[:, None, None, None, None]
      return d

   def init_mu(self, y):
      return y + 0.1 * np.mean(y) + 0.1


class Binomial(ExtendedFamily):
   """Proportions ``y`` in [0, 1]; prior weights act as numbers of trials."""

   name = "binomial"
   default_link = "logit"

   def validate(self, y):
      if np.any(y < 0) or np.any(y > 1):
         raise FamilyDataError("binomial response must lie in [0, 1]")

   def dev(self, y, mu, theta, full):
      a, b = 1.0 / mu, 1.0 / (1.0 - mu)
      out = {"D": 2.0 * (xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu)),
             "Dm": 2.0 * (-y * a + (1 - y) * b),
             "Dmm": 2.0 * (y * a**2 + (1 - y) * b**2)}
      if full:
         out.update(Dmmm=4.0 * (-y * a**3 + (1 - y) * b**3),
                    Dmmmm=12.0 * (y * a**4 + (1 - y) * b**4))
      return out

   def ls(self, y, theta, phi, full):
      n = len(y)
      return xlogy(y, y) + xlogy(1 - y, 1 - y), np.zeros((n, 0)), np.zeros((n, 0, 0))

   def canonical(self, y, eta, full):
      if self.link.name != "logit":
         return None
      mu = expit(eta)
      v = mu * expit(-eta)
      d = EtaDerivs(l=y * eta - _softplus(eta), l1=(y - mu)[:, None], l2=-v[:, None, None])
      if full:
         d.l3 = (-v * (1 - 2 * mu))[:, None, None, None]
         d.l4 = (-v * (1 - 6 * v))[:, None, None, None, None]
      return d

   def init_mu(self, y):
      return (y + 0.5) / 2.0
