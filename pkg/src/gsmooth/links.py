"""Link functions ``eta = h(mu)`` with derivatives of ``h`` up to fourth order."""

import numpy as np


class Link:
   """Base class; ``derivs`` returns ``(h', h'', h''', h'''')`` as functions of ``mu``."""

   name = ""

   def link(self, mu):
      raise NotImplementedError

   def inv(self, eta):
      raise NotImplementedError

   def derivs(self, mu):
      raise NotImplementedError

   def valid_mu(self, mu):
      return np.all(np.isfinite(mu))


class Identity(Link):
   name = "identity"

   def link(self, mu):
      return np.asarray(mu, dtype=float)

   def inv(self, eta):
      return np.asarray(eta, dtype=float)

   def derivs(self, mu):
      one = np.ones_like(mu, dtype=float)
      z = np.zeros_like(mu, dtype=float)
      return one, z, z, z


class Log(Link):
   name = "log"

   def link(self, mu):
      return np.log(mu)

   def inv(self, eta):
      return np.exp(np.clip(eta, -700, 700))

   def derivs(self, mu):
      r = 1.0 / mu
      return r, -r**2, 2 * r**3, -6 * r**4

   def valid_mu(self, mu):
      return np.all(mu > 0)


class Logit(Link):
   name = "logit"

   def link(self, mu):
      return np.log(mu) - np.log1p(-mu)

   def inv(self, eta):
      eta = np.clip(eta, -700, 700)
      return 1.0 / (1.0 + np.exp(-eta))

   def derivs(self, mu):
      a = 1.0 / mu
      b = 1.0 / (1.0 - mu)
      return a + b, b**2 - a**2, 2 * (a**3 + b**3), 6 * (b**4 - a**4)

   def valid_mu(self, mu):
      return np.all((mu > 0) & (mu < 1))


class Cloglog(Link):
   name = "cloglog"

   def link(self, mu):
      return np.log(-np.log1p(-mu))

   def inv(self, eta):
      return -np.expm1(-np.exp(np.clip(eta, -700, 700)))

   def derivs(self, mu):
      u = 1.0 - mu
      L = np.log1p(-mu)
      uL = u * L
      h1 = -1.0 / uL
      h2 = (-L - 1.0) / uL**2
      h3 = -(2 * L**2 + 3 * L + 2) / uL**3
      h4 = (-6 * L**3 - 11 * L**2 - 12 * L - 6) / uL**4
      return h1, h2, h3, h4

   def valid_mu(self, mu):
      return np.all((mu > 0) & (mu < 1))


LINKS = {"identity": Identity, "log": Log, "logit": Logit, "cloglog": Cloglog}


def get_link(name):
   try:
      return LINKS[name]()
   except KeyError:
      raise ValueError(f"unknown link '{name}'") from None
