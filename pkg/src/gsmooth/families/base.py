"""Likelihood contracts and the machinery shared by all families.

Everything the fitting code needs from a likelihood is exposed through a
``Point`` object: the log likelihood and its derivatives with respect to the
coefficients at one coefficient vector, together with the derivatives mixed
with any extra likelihood parameters (``theta``, possibly including a log
scale parameter) and the trace contractions used by the marginal likelihood
Hessian.

Likelihoods whose observations depend on ``K`` linear predictors only through
``eta_i = (eta_i^1, ..., eta_i^K)`` share one implementation,
:class:`SeparableModel`, which works from per-observation derivatives with
respect to the linear predictors.  Those are obtained from derivatives with
respect to the distribution parameters by :func:`eta_mu_transform`.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from ..links import get_link


class LinkError(ArithmeticError):
   """Link derivative too close to zero to transform derivatives."""


class FamilyDataError(ValueError):
   """Response values incompatible with the family."""


# ---------------------------------------------------------------- combinatorics


@lru_cache(maxsize=None)
def set_partitions(n):
   """All partitions of ``range(n)`` as tuples of tuples."""
   if n == 0:
      return ((),)
   out = []
   for part in set_partitions(n - 1):
      # new element in its own block, or appended to an existing block
      out.append(part + ((n - 1,),))
      for i in range(len(part)):
         out.append(part[:i] + (part[i] + (n - 1,),) + part[i + 1:])
   return tuple(out)


_FACT = [1, 1, 2, 6, 24]


def log_derivs(kappa, idx):
   """Derivative of ``log f`` from normalized derivatives ``kappa(block) = f_block / f``.

   ``idx`` is a tuple of variable labels; uses the moment to cumulant relation
   over set partitions.
   """
   total = 0.0
   for part in set_partitions(len(idx)):
      nb = len(part)
      term = (-1) ** (nb - 1) * _FACT[nb - 1]
      for blk in part:
         term = term * kappa(tuple(sorted(idx[i] for i in blk)))
      total = total + term
   return total


def compose(outer, inner, idx, n_inner):
   """Multivariate chain rule for ``f(u(v))`` up to fourth order.

   ``outer(c)`` returns the derivative of ``f`` w.r.t. the inner variables in
   sorted tuple ``c``; ``inner(c, blk)`` the derivative of inner variable ``c``
   w.r.t. the outer variables listed in ``blk`` (``None`` when identically
   zero).  ``idx`` lists outer variable labels.
   """
   total = 0.0
   for part in set_partitions(len(idx)):
      blocks = [tuple(sorted(idx[i] for i in blk)) for blk in part]
      for cs in product(range(n_inner), repeat=len(blocks)):
         term = 1.0
         for c, blk in zip(cs, blocks):
            d = inner(c, blk)
            if d is None:
               term = None
               break
            term = term * d
         if term is None:
            continue
         total = total + outer(tuple(sorted(cs))) * term
   return total


# ---------------------------------------------------------------- eta / mu transform


def eta_coefficients(h1, h2, h3, h4):
   """Coefficients ``c[r][i]`` with ``d^r l / d eta^r = sum_i c[r][i] d^i l / d mu^i``."""
   h1 = np.asarray(h1, dtype=float)
   if np.any(np.abs(h1) < 1e-300):
      raise LinkError("link derivative vanishes; cannot transform derivatives")
   r1 = 1.0 / h1
   # grouped through q = h''/h'^2, which stays bounded where h' is tiny (q = -1 for log)
   q = h2 * r1**2
   c = {0: {0: 1.0}}
   c[1] = {1: r1}
   c[2] = {1: -q * r1, 2: r1**2}
   c[3] = {1: 3 * q**2 * r1 - h3 * r1**4, 2: -3 * q * r1**2, 3: r1**3}
   c[4] = {1: -(15 * q**3 * r1 - 10 * q * h3 * r1**4 + h4 * r1**5),
           2: 15 * q**2 * r1**2 - 4 * h3 * r1**5,
           3: -6 * q * r1**3,
           4: r1**4}
   return c


def eta_mu_transform(mu_derivs, link_derivs):
   """Convert derivatives w.r.t. distribution parameters into ``eta`` derivatives.

   ``mu_derivs`` maps count patterns ``(c_1, ..., c_K)`` (number of
   differentiations w.r.t. each parameter) to arrays whose leading axis is the
   observation; trailing axes (e.g. extra parameters) pass through.
   ``link_derivs`` is a list with one ``(h', h'', h''', h'''')`` tuple per
   parameter.  Each parameter depends on its own predictor only, so the mixed
   transform is the tensor product of the univariate rules.
   """
   coefs = [eta_coefficients(*h) for h in link_derivs]
   out = {}
   for pat in mu_derivs:
      total = 0.0
      ok = True
      ranges = [sorted(coefs[a][c].keys()) for a, c in enumerate(pat)]
      for sub in product(*ranges):
         if sub not in mu_derivs:
            ok = False
            break
         f = 1.0
         for a, (c, i) in enumerate(zip(pat, sub)):
            f = f * coefs[a][c][i]
         d = mu_derivs[sub]
         f = np.reshape(f, np.shape(f) + (1,) * (np.ndim(d) - np.ndim(f)))
         total = total + f * d
      if ok:
         out[pat] = total
   return out


# ---------------------------------------------------------------- derivative containers


@dataclass
class EtaDerivs:
   """Per-observation derivatives w.r.t. the linear predictors and ``theta``.

   Shapes: ``l (n)``, ``l1 (n,K)``, ``l2 (n,K,K)``, ``l3 (n,K,K,K)``,
   ``l4 (n,K,K,K,K)``, ``lt (n,m)``, ``ltt (n,m,m)``, ``l1t (n,K,m)``,
   ``l1tt (n,K,m,m)``, ``l2t (n,K,K,m)``, ``l2tt (n,K,K,m,m)``,
   ``l3t (n,K,K,K,m)``.  Unneeded entries may be ``None``.
   """
   l: np.ndarray
   l1: np.ndarray = None
   l2: np.ndarray = None
   l3: np.ndarray = None
   l4: np.ndarray = None
   lt: np.ndarray = None
   ltt: np.ndarray = None
   l1t: np.ndarray = None
   l1tt: np.ndarray = None
   l2t: np.ndarray = None
   l2tt: np.ndarray = None
   l3t: np.ndarray = None


def symmetric_from_patterns(d, n, K, extra=()):
   """Fill full symmetric arrays ``l1..l4`` from count-pattern dictionaries."""
   arrays = {}
   for order in range(1, 5):
      shape = (n,) + (K,) * order + tuple(extra)
      if not any(sum(p) == order for p in d):
         arrays[order] = None
         continue
      A = np.zeros(shape)
      for idx in product(range(K), repeat=order):
         pat = tuple(idx.count(a) for a in range(K))
         if pat in d:
            A[(slice(None),) + idx] = d[pat]
      arrays[order] = A
   return arrays


# ---------------------------------------------------------------- separable model


class SeparableModel:
   """Log likelihood ``sum_i w_i l_i(eta_i, theta)`` with ``eta^a = X^a beta^a + o^a``.

   Subclasses implement ``eta_derivs(eta, full)`` returning :class:`EtaDerivs`
   (``eta`` has shape ``(n, K)``); with ``full=False`` only ``l``, ``l1``,
   ``l2`` are required.
   """

   n_theta = 0

   def __init__(self, Xs, offsets, col_ranges, P, weights=None):
      self.Xs = [np.asarray(X, dtype=float) for X in Xs]
      self.offsets = [np.zeros(X.shape[0]) if o is None else np.asarray(o, dtype=float)
                      for X, o in zip(self.Xs, offsets)]
      self.cols = list(col_ranges)
      self.P = P
      self.K = len(self.Xs)
      self.n = self.Xs[0].shape[0]
      self.w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
      self.theta = np.zeros(self.n_theta)
      self._cache = {}

   def set_theta(self, theta):
      theta = np.asarray(theta, dtype=float).copy()
      if theta.shape != (self.n_theta,):
         raise ValueError("wrong number of extra parameters")
      if not np.array_equal(theta, self.theta):
         self._cache.clear()
      self.theta = theta

   def etas(self, beta):
      return np.column_stack([X @ beta[c0:c1] + o for X, (c0, c1), o
                              in zip(self.Xs, self.cols, self.offsets)])

   def point(self, beta, full=False):
      key = (beta.tobytes(), full)
      pt = self._cache.get(key)
      if pt is None:
         if len(self._cache) > 8:
            self._cache.clear()
         eta = self.etas(beta)
         pt = SeparablePoint(self, beta, eta, self.eta_derivs(eta, full))
         self._cache[key] = pt
      return pt

   def loglik(self, beta):
      return self.point(beta).l

   def eta_derivs(self, eta, full):
      raise NotImplementedError

   # helpers mapping eta-space arrays to coefficient space
   def _vec(self, V):
      """``V (n, K[, ...])`` -> ``(P[, ...])`` via ``X^a' V[:, a]``."""
      out = np.zeros((self.P,) + V.shape[2:])
      for a, (X, (c0, c1)) in enumerate(zip(self.Xs, self.cols)):
         out[c0:c1] = np.tensordot(X, V[:, a], axes=(0, 0))
      return out

   def _quad(self, W):
      """``W (n, K, K)`` -> ``P x P`` via ``X^a' diag(W[:, a, b]) X^b``."""
      H = np.zeros((self.P, self.P))
      for a in range(self.K):
         Xa, (a0, a1) = self.Xs[a], self.cols[a]
         for b in range(a, self.K):
            Xb, (b0, b1) = self.Xs[b], self.cols[b]
            blk = Xa.T @ (W[:, a, b][:, None] * Xb)
            H[a0:a1, b0:b1] = blk
            if b != a:
               H[b0:b1, a0:a1] = blk.T
      return H

   def _dirs(self, V):
      """Coefficient directions ``V (P[, q])`` -> eta directions ``(n, K[, q])``."""
      if V.ndim == 1:
         return np.column_stack([X @ V[c0:c1] for X, (c0, c1) in zip(self.Xs, self.cols)])
      return np.stack([X @ V[c0:c1] for X, (c0, c1) in zip(self.Xs, self.cols)], axis=1)


class SeparablePoint:
   def __init__(self, model, beta, eta, d):
      self.model = model
      self.beta = beta
      self.eta = eta
      self.d = d
      w = model.w
      self.w = w
      self.l = float(np.sum(w * d.l))
      self._B = None

   # -- coefficient derivatives
   def grad(self):
      return self.model._vec(self.w[:, None] * self.d.l1)

   def hess(self):
      return self.model._quad(self.w[:, None, None] * self.d.l2)

   def third(self, v):
      dv = self.model._dirs(v)
      W = np.einsum("iabc,ic->iab", self.d.l3, dv)
      return self.model._quad(self.w[:, None, None] * W)

   def third_vv(self, u, v):
      du, dv = self.model._dirs(u), self.model._dirs(v)
      return self.model._vec(self.w[:, None] * np.einsum("iabc,ib,ic->ia", self.d.l3, du, dv))

   # -- extra parameters
   def lt(self):
      m = self.model.n_theta
      return np.zeros(m) if m == 0 else self.w @ self.d.lt

   def ltt(self):
      m = self.model.n_theta
      return np.zeros((m, m)) if m == 0 else np.einsum("i,itu->tu", self.w, self.d.ltt)

   def lbt(self):
      m = self.model.n_theta
      if m == 0:
         return np.zeros((self.model.P, 0))
      return self.model._vec(self.w[:, None, None] * self.d.l1t)

   def lbtt(self):
      m = self.model.n_theta
      if m == 0:
         return np.zeros((self.model.P, 0, 0))
      return self.model._vec(self.w[:, None, None, None] * self.d.l1tt)

   def lbbt(self):
      m = self.model.n_theta
      return np.array([self.model._quad(self.w[:, None, None] * self.d.l2t[..., t])
                       for t in range(m)]).reshape(m, self.model.P, self.model.P)

   # -- trace contractions tr(B d^2 l / d beta d beta ...) without P x P x P arrays
   def trace_setup(self, B):
      m = self.model
      Dg = np.zeros((m.n, m.K, m.K))
      for a in range(m.K):
         Xa, (a0, a1) = m.Xs[a], m.cols[a]
         for b in range(m.K):
            Xb, (b0, b1) = m.Xs[b], m.cols[b]
            Dg[:, a, b] = np.einsum("ij,ij->i", Xa @ B[a0:a1, b0:b1], Xb)
      self._B = self.w[:, None, None] * Dg

   def tr3(self, W):
      dW = self.model._dirs(W)
      return np.einsum("iab,iabc,icq->q", self._B, self.d.l3, dW)

   def tr4(self, W):
      dW = self.model._dirs(W)
      G = np.einsum("iab,iabcd->icd", self._B, self.d.l4)
      return np.einsum("icd,icp,idq->pq", G, dW, dW)

   def tr3t(self, W):
      if self.model.n_theta == 0:
         return np.zeros((W.shape[1], 0))
      dW = self.model._dirs(W)
      return np.einsum("iab,iabct,icq->qt", self._B, self.d.l3t, dW)

   def tr2t(self):
      if self.model.n_theta == 0:
         return np.zeros(0)
      return np.einsum("iab,iabt->t", self._B, self.d.l2t)

   def tr2tt(self):
      if self.model.n_theta == 0:
         return np.zeros((0, 0))
      return np.einsum("iab,iabtu->tu", self._B, self.d.l2tt)


# ---------------------------------------------------------------- extended families


class ExtendedFamily:
   """Single-predictor family described by its deviance.

   Subclasses supply ``dev(y, mu, theta, full)`` returning a dict with keys
   ``D, Dm, Dmm`` (and with ``full`` also ``Dmmm, Dmmmm, Dt, Dmt, Dmmt, Dmmmt,
   Dtt, Dmtt, Dmmtt``; theta axes trailing) and ``ls(y, theta, phi, full)``
   returning the saturated log likelihood and its derivatives w.r.t.
   ``(theta, log phi)`` (log phi only when the scale is estimated).  The log
   likelihood is ``l = ls - D / (2 phi)``.
   """

   name = ""
   n_theta = 0
   has_scale = False
   default_link = "identity"
   K = 1

   def __init__(self, link=None):
      self.link = get_link(link or self.default_link)

   def validate(self, y):
      pass

   def init_mu(self, y):
      return np.full_like(y, np.mean(y), dtype=float)

   def init_theta(self, y):
      return np.zeros(self.n_theta)

   def canonical(self, y, eta, full):
      """Optional direct eta-derivatives of ``l`` for canonical links (or ``None``)."""
      return None

   def dev(self, y, mu, theta, full):
      raise NotImplementedError

   def ls(self, y, theta, phi, full):
      n = len(y)
      m = self.n_theta + (1 if self.has_scale else 0)
      return np.zeros(n), np.zeros((n, m)), np.zeros((n, m, m))

   def deviance(self, y, mu, theta):
      # derivative entries are discarded here and may be 0/0 where y = mu = 0
      with np.errstate(divide="ignore", invalid="ignore"):
         return self.dev(y, mu, theta, False)["D"]

   def make_model(self, design, theta=None, phi=1.0):
      return ExtendedModel(self, design.y, design.Xs, design.offsets, design.col_ranges,
                           design.P, design.weights, theta, phi)


class ExtendedModel(SeparableModel):
   """Log likelihood of an :class:`ExtendedFamily`; ``theta`` includes ``log phi`` last
   when the scale is estimated."""

   def __init__(self, family, y, Xs, offsets, col_ranges, P, weights=None, theta=None, phi=1.0):
      self.family = family
      self.n_theta = family.n_theta + (1 if family.has_scale else 0)
      super().__init__(Xs, offsets, col_ranges, P, weights)
      self.y = np.asarray(y, dtype=float)
      family.validate(self.y)
      th = np.zeros(family.n_theta) if theta is None else np.asarray(theta, dtype=float)
      if family.has_scale:
         th = np.append(th, np.log(phi))
      self.set_theta(th)

   @property
   def phi(self):
      return float(np.exp(self.theta[-1])) if self.family.has_scale else 1.0

   @property
   def family_theta(self):
      return self.theta[:self.family.n_theta]

   def eta_derivs(self, eta, full):
      fam = self.family
      eta = eta[:, 0]
      mt = fam.n_theta
      m = self.n_theta
      phi = self.phi
      th = self.family_theta
      n = len(eta)
      can = None if (mt > 0 or fam.has_scale) else fam.canonical(self.y, eta, full)
      if can is not None:
         return can
      mu = fam.link.inv(eta)
      dd = fam.dev(self.y, mu, th, full)
      ls, ls_t, ls_tt = fam.ls(self.y, th, phi, full)
      c = -0.5 / phi
      lm = {0: ls + c * dd["D"], 1: c * dd["Dm"], 2: c * dd["Dmm"]}
      if full:
         lm[3] = c * dd["Dmmm"]
         lm[4] = c * dd["Dmmmm"]
      hd = fam.link.derivs(mu)
      coefs = eta_coefficients(*hd)
      top = 4 if full else 2
      le = {r: sum(coefs[r][i] * lm[i] for i in coefs[r]) for r in range(1, top + 1)}
      out = EtaDerivs(l=lm[0], l1=le[1][:, None], l2=le[2][:, None, None])
      if not full:
         return out
      out.l3 = le[3][:, None, None, None]
      out.l4 = le[4][:, None, None, None, None]
      # mixed with theta (and log phi): mu-derivative order r, theta axes trailing
      lt = np.zeros((n, m))
      ltt = np.zeros((n, m, m))
      lmt = {r: np.zeros((n, m)) for r in (1, 2, 3)}
      lmtt = {r: np.zeros((n, m, m)) for r in (1, 2)}
      if mt:
         lt[:, :mt] = c * dd["Dt"]
         ltt[:, :mt, :mt] = c * dd["Dtt"]
         lmt[1][:, :mt] = c * dd["Dmt"]
         lmt[2][:, :mt] = c * dd["Dmmt"]
         lmt[3][:, :mt] = c * dd["Dmmmt"]
         lmtt[1][:, :mt, :mt] = c * dd["Dmtt"]
         lmtt[2][:, :mt, :mt] = c * dd["Dmmtt"]
      if fam.has_scale:
         s = mt
         # d/d log phi of -D/(2 phi) is +D/(2 phi); second derivative -D/(2 phi)
         lt[:, s] = -c * dd["D"]
         ltt[:, s, s] = c * dd["D"]
         for r, key in ((1, "Dm"), (2, "Dmm"), (3, "Dmmm")):
            lmt[r][:, s] = -c * dd[key]
         for r, key in ((1, "Dm"), (2, "Dmm")):
            lmtt[r][:, s, s] = c * dd[key]
         if mt:
            ltt[:, :mt, s] = ltt[:, s, :mt] = -c * dd["Dt"]
            lmtt[1][:, :mt, s] = lmtt[1][:, s, :mt] = -c * dd["Dmt"]
            lmtt[2][:, :mt, s] = lmtt[2][:, s, :mt] = -c * dd["Dmmt"]
      lt = lt + ls_t
      ltt = ltt + ls_tt
      ct = {r: sum(coefs[r][i][:, None] * lmt[i] for i in coefs[r] if i > 0) for r in (1, 2, 3)}
      ctt = {r: sum(coefs[r][i][:, None, None] * lmtt[i] for i in coefs[r] if i > 0)
             for r in (1, 2)}
      out.lt = lt
      out.ltt = ltt
      out.l1t = ct[1][:, None, :]
      out.l2t = ct[2][:, None, None, :]
      out.l3t = ct[3][:, None, None, None, :]
      out.l1tt = ctt[1][:, None, :, :]
      out.l2tt = ctt[2][:, None, None, :, :]
      return out

   def mu(self, beta):
      return self.family.link.inv(self.etas(beta)[:, 0])

   def deviance(self, beta):
      return float(np.sum(self.w * self.family.deviance(self.y, self.mu(beta), self.family_theta)))


# ---------------------------------------------------------------- GAMLSS families


class GamlssFamily:
   """Family with ``K`` distribution parameters, each with its own link.

   Subclasses supply ``mu_derivs(y, mus, full)`` returning a dict from count
   patterns to per-observation derivatives of ``l`` (the zero pattern is the
   log likelihood), up to total order 2 or, with ``full``, 4.
   """

   name = ""
   K = 2
   n_theta = 0
   has_scale = False
   default_links = ("identity", "log")

   def __init__(self, links=None):
      self.links = [get_link(nm) for nm in (links or self.default_links)]

   def validate(self, y):
      pass

   def init_eta(self, y):
      raise NotImplementedError

   def mu_derivs(self, y, mus, full):
      raise NotImplementedError

   def make_model(self, design, theta=None, phi=1.0):
      return GamlssModel(self, design.y, design.Xs, design.offsets, design.col_ranges,
                         design.P, design.weights)


class GamlssModel(SeparableModel):
   def __init__(self, family, y, Xs, offsets, col_ranges, P, weights=None):
      self.family = family
      super().__init__(Xs, offsets, col_ranges, P, weights)
      if self.K != family.K:
         raise ValueError(f"{family.name} needs {family.K} linear predictors, got {self.K}")
      self.y = np.asarray(y, dtype=float)
      family.validate(self.y)

   def eta_derivs(self, eta, full):
      fam = self.family
      mus = [lk.inv(eta[:, a]) for a, lk in enumerate(fam.links)]
      md = fam.mu_derivs(self.y, mus, full)
      hd = [lk.derivs(mu) for lk, mu in zip(fam.links, mus)]
      ed = eta_mu_transform({p: v for p, v in md.items() if sum(p) > 0}, hd)
      arr = symmetric_from_patterns(ed, len(eta), fam.K)
      return EtaDerivs(l=md[(0,) * fam.K], l1=arr[1], l2=arr[2], l3=arr[3], l4=arr[4])
