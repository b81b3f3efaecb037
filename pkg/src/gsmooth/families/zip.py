"""Zero-inflated Poisson models.

Both share the hurdle structure: ``P(y = 0) = exp(-F)`` with ``F = exp(eta)``
the presence rate, and, given presence, a zero-truncated Poisson count with
mean parameter ``E = exp(gamma)``.  The location-scale version gives ``eta``
and ``gamma`` their own linear predictors.  The extended version ties them
through ``eta = theta_1 + exp(theta_2) gamma``.

Derivatives are computed from ``u(E) = E / (exp(E) - 1)`` and its recursions,
which stay accurate from ``E`` near zero up to overflow of ``exp(gamma)``.
"""

import numpy as np
from scipy.special import gammaln

from .base import ExtendedFamily, FamilyDataError, GamlssFamily, compose


def _one_minus_u(E, em1):
   # 1 - E/(e^E - 1) = (e^E - 1 - E)/(e^E - 1), series numerator for small E
   small = E < 1e-2
   Es = np.where(small, E, 0.0)
   num = Es * Es * (0.5 + Es * (1.0 / 6 + Es * (1.0 / 24 + Es * (1.0 / 120 + Es / 720))))
   with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
      series = np.where(Es > 0, num / np.where(Es > 0, em1, 1.0), 0.0)
      direct = (em1 - E) / em1
   return np.where(small, series, direct)


def trunc_terms(x):
   """``G(x) = log(exp(exp(x)) - 1)`` and its first four derivatives.

   Returns ``(G, G1, G2, G3, G4, u, u1, u2, u3)`` where ``G^(k) = E + u_{k-1}``.
   """
   x = np.asarray(x, dtype=float)
   E = np.exp(np.minimum(x, 700.0))
   big = E > 700
   with np.errstate(over="ignore"):
      em1 = np.expm1(np.where(big, 0.0, E))
   u = np.where(big, 0.0, E / np.where(big | (em1 == 0), 1.0, em1))
   u = np.where(E == 0, 1.0, u)
   omu = np.where(big, 1.0, _one_minus_u(E, em1))
   c = omu - E
   u1 = u * c
   u2 = u1 * c - u * (E + u1)
   u3 = u2 * c - 2.0 * u1 * (E + u1) - u * (E + u2)
   tiny = E < 1e-8
   with np.errstate(divide="ignore"):
      G = np.where(x > 0, E + np.log1p(-np.exp(-E)), np.log(np.where(tiny, 1.0, em1)))
   G = np.where(tiny, x + E / 2, G)
   return G, E + u, E + u1, E + u2, E + u3, u, u1, u2, u3


def _check_counts(y):
   if np.any(y < 0) or np.any(y != np.round(y)):
      raise FamilyDataError("zero-inflated Poisson response must be non-negative integers")


def _pieces(y, eta, gamma):
   """Per-observation derivatives of ``l`` w.r.t. ``eta`` (orders 0..4) and ``gamma``."""
   pos = y > 0
   F = np.exp(np.minimum(eta, 700.0))
   Ge, _, _, _, _, ue, ue1, ue2, ue3 = trunc_terms(eta)
   Gg, Gg1, Gg2, Gg3, Gg4, _, _, _, _ = trunc_terms(gamma)
   le = [np.where(pos, Ge - F, -F), np.where(pos, ue, -F), np.where(pos, ue1, -F),
         np.where(pos, ue2, -F), np.where(pos, ue3, -F)]
   ycnt = np.where(pos, y, 0.0)
   lg = [np.where(pos, ycnt * gamma - Gg - gammaln(ycnt + 1), 0.0),
         np.where(pos, ycnt - Gg1, 0.0), np.where(pos, -Gg2, 0.0),
         np.where(pos, -Gg3, 0.0), np.where(pos, -Gg4, 0.0)]
   return le, lg


class ZipLss(GamlssFamily):
   """Linear predictors ``(gamma, eta)``: log truncated-Poisson mean, log presence rate."""

   name = "ziplss"
   K = 2
   default_links = ("identity", "identity")

   def validate(self, y):
      _check_counts(y)

   def init_eta(self, y):
      pos = y > 0
      g = np.log(max(np.mean(y[pos]), 1.0)) if np.any(pos) else 0.0
      p = np.clip(np.mean(pos), 0.05, 0.95)
      return np.array([g, np.log(-np.log1p(-p))])

   def mu_derivs(self, y, mus, full):
      gamma, eta = mus
      le, lg = _pieces(y, eta, gamma)
      top = 4 if full else 2
      out = {(0, 0): le[0] + lg[0]}
      for k in range(1, top + 1):
         out[(k, 0)] = lg[k]
         out[(0, k)] = le[k]
      z = np.zeros_like(gamma)
      for a in range(1, top):
         for b in range(1, top + 1 - a):
            out[(a, b)] = z
      return out

   def response_mean(self, mus):
      gamma, eta = mus
      E = np.exp(gamma)
      p = -np.expm1(-np.exp(eta))
      return p * E / -np.expm1(-E)


class ZiP(ExtendedFamily):
   """Single predictor ``gamma``; presence ``eta = theta_1 + exp(theta_2) gamma``."""

   name = "ziP"
   minus_two_loglik = True
   n_theta = 2
   default_link = "identity"

   def validate(self, y):
      _check_counts(y)

   def init_mu(self, y):
      return np.log(np.maximum(y, 0.0) + 0.1 * np.mean(y) + 0.1)

   def _eta(self, gamma, theta, blk):
      # derivative of eta = theta_1 + exp(theta_2) gamma; labels 0 gamma, 1 theta_1, 2 theta_2
      e2 = np.exp(theta[1])
      if blk == (1,):
         return 1.0
      if 1 in blk or blk.count(0) > 1:
         return None
      if 0 in blk:
         return e2
      return gamma * e2

   def dev(self, y, mu, theta, full):
      theta = np.asarray(theta, dtype=float)
      gamma = mu
      eta = theta[0] + np.exp(theta[1]) * gamma
      le, lg = _pieces(y, eta, gamma)
      n = len(y)

      def outer(c):
         # inner variables: 0 eta, 1 gamma; no mixed derivatives
         if 0 in c and 1 in c:
            return 0.0
         return le[len(c)] if 0 in c else lg[len(c)]

      def inner(c, blk):
         if c == 0:
            return self._eta(gamma, theta, blk)
         return 1.0 if blk == (0,) else None

      def d(idx):
         return -2.0 * compose(outer, inner, idx, 2) * np.ones(n)

      out = {"D": -2.0 * (le[0] + lg[0]), "Dm": d((0,)), "Dmm": d((0, 0))}
      if not full:
         return out
      out["Dmmm"] = d((0, 0, 0))
      out["Dmmmm"] = d((0, 0, 0, 0))
      for key, p in (("Dt", 0), ("Dmt", 1), ("Dmmt", 2), ("Dmmmt", 3)):
         out[key] = np.column_stack([d((0,) * p + (t,)) for t in (1, 2)])
      for key, p in (("Dtt", 0), ("Dmtt", 1), ("Dmmtt", 2)):
         A = np.zeros((n, 2, 2))
         for t in (1, 2):
            for u in (t, 2):
               A[:, t - 1, u - 1] = A[:, u - 1, t - 1] = d((0,) * p + (t, u))
         out[key] = A
      return out
