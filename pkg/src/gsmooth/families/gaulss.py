"""Gaussian location-scale model: mean and standard deviation each get a predictor."""

import numpy as np

from .base import GamlssFamily


class GauLss(GamlssFamily):
   name = "gaulss"
   K = 2
   default_links = ("identity", "log")

   def init_eta(self, y):
      sd = max(float(np.std(y)), 1e-8)
      return np.array([float(np.mean(y)), self.links[1].link(sd)])

   def mu_derivs(self, y, mus, full):
      mu, sig = mus
      r = y - mu
      s1 = 1.0 / sig
      s2, r2 = s1 * s1, r * r
      out = {
         (0, 0): -np.log(sig) - 0.5 * np.log(2 * np.pi) - 0.5 * r2 * s2,
         (1, 0): r * s2,
         (0, 1): -s1 + r2 * s2 * s1,
         (2, 0): -s2,
         (1, 1): -2 * r * s2 * s1,
         (0, 2): s2 - 3 * r2 * s2 * s2,
      }
      if not full:
         return out
      z = np.zeros_like(r)
      s3, s4 = s2 * s1, s2 * s2
      out.update({
         (3, 0): z,
         (2, 1): 2 * s3,
         (1, 2): 6 * r * s4,
         (0, 3): -2 * s3 + 12 * r2 * s4 * s1,
         (4, 0): z,
         (3, 1): z,
         (2, 2): -6 * s4,
         (1, 3): -24 * r * s4 * s1,
         (0, 4): 6 * s4 - 60 * r2 * s4 * s2,
      })
      return out
