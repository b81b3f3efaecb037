"""Beta regression; ``theta`` is the log precision.

The deviance is taken as ``-2 l`` with zero saturated log likelihood.
"""

import numpy as np
from scipy.special import gammaln, polygamma, psi

from .base import ExtendedFamily, FamilyDataError


class Beta(ExtendedFamily):
   name = "beta"
   minus_two_loglik = True
   n_theta = 1
   default_link = "logit"

   def validate(self, y):
      if np.any(y <= 0) or np.any(y >= 1):
         raise FamilyDataError("beta response must lie strictly inside (0, 1)")

   def init_theta(self, y):
      m, v = np.mean(y), np.var(y)
      return np.array([np.log(max(m * (1 - m) / max(v, 1e-12) - 1.0, 0.1))])

   def init_mu(self, y):
      return 0.5 * (y + np.mean(y))

   def dev(self, y, mu, theta, full):
      phi = np.exp(theta[0])
      a, b = mu * phi, (1.0 - mu) * phi
      ly, l1y = np.log(y), np.log1p(-y)
      lr = ly - l1y
      psa, psb = psi(a), psi(b)
      p1a, p1b = polygamma(1, a), polygamma(1, b)
      l = (gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1) * ly + (b - 1) * l1y)
      out = {"D": -2.0 * l,
             "Dm": 2.0 * phi * (psa - psb - lr),
             "Dmm": 2.0 * phi**2 * (p1a + p1b)}
      if not full:
         return out
      p2a, p2b = polygamma(2, a), polygamma(2, b)
      p3a, p3b = polygamma(3, a), polygamma(3, b)
      om = mu - 1.0
      out["Dmmm"] = 2.0 * phi**3 * (p2a - p2b)
      out["Dmmmm"] = 2.0 * phi**4 * (p3a + p3b)
      Dt = 2.0 * phi * (-mu * ly + mu * psa + om * l1y - om * psb - psi(phi))
      Dtt = 2.0 * phi * (mu**2 * phi * p1a - mu * ly + mu * psa + om**2 * phi * p1b
                         + om * l1y - om * psb - phi * polygamma(1, phi) - psi(phi))
      Dmt = 2.0 * phi * (mu * phi * p1a + om * phi * p1b - lr + psa - psb)
      Dmtt = 2.0 * phi * (mu**2 * phi**2 * p2a + 3 * mu * phi * p1a - om**2 * phi**2 * p2b
                          + 3 * om * phi * p1b - lr + psa - psb)
      Dmmt = 2.0 * phi**2 * (mu * phi * p2a - om * phi * p2b + 2 * p1a + 2 * p1b)
      Dmmtt = 2.0 * phi**2 * (mu**2 * phi**2 * p3a + 5 * mu * phi * p2a + om**2 * phi**2 * p3b
                              - 5 * om * phi * p2b + 4 * p1a + 4 * p1b)
      Dmmmt = 2.0 * phi**3 * (mu * phi * p3a + om * phi * p3b + 3 * p2a - 3 * p2b)
      out.update(Dt=Dt[:, None], Dtt=Dtt[:, None, None], Dmt=Dmt[:, None],
                 Dmtt=Dmtt[:, None, None], Dmmt=Dmmt[:, None], Dmmtt=Dmmtt[:, None, None],
                 Dmmmt=Dmmmt[:, None])
      return out
