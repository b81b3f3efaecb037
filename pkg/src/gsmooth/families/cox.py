"""Cox proportional hazards partial likelihood with Breslow ties.

Observations are sorted by decreasing time so that every risk set is a prefix
and all risk-set sums are cumulative sums read off at the end of each tied
group.  Nothing of size ``n x P x P`` is formed: Hessians go through
``X' diag(.) X`` products, and the trace contractions needed by the marginal
likelihood Hessian work with the model matrix multiplied by a square root of
the supplied matrix, so only its leading-diagonal contributions are summed.
"""

from dataclasses import dataclass

import numpy as np

from .base import FamilyDataError


class CoxPH:
   name = "coxph"
   K = 1
   n_theta = 0
   has_scale = False

   def validate(self, time, status):
      if np.any(~np.isfinite(time)):
         raise FamilyDataError("survival times must be finite")
      if np.any((status != 0) & (status != 1)):
         raise FamilyDataError("event indicator must be 0 or 1")
      if not np.any(status == 1):
         raise FamilyDataError("all observations censored: partial likelihood is degenerate")

   def make_model(self, design, theta=None, phi=1.0):
      if "status" not in design.extra:
         raise FamilyDataError("coxph needs an event indicator column")
      if design.weights is not None:
         raise FamilyDataError("coxph does not accept prior weights")
      return CoxModel(self, design.y, design.extra["status"], design.Xs[0],
                      design.offsets[0], design.P)


class CoxModel:
   n_theta = 0
   K = 1

   def __init__(self, family, time, status, X, offset, P):
      time = np.asarray(time, dtype=float)
      status = np.asarray(status, dtype=float)
      family.validate(time, status)
      self.family = family
      self.n = len(time)
      self.P = P
      self.order = np.argsort(-time, kind="stable")
      self.t = time[self.order]
      self.delta = status[self.order]
      self.X = np.asarray(X, dtype=float)[self.order]
      self.off = np.zeros(self.n) if offset is None else np.asarray(offset, dtype=float)[self.order]
      ends = np.r_[np.nonzero(np.diff(self.t) != 0)[0], self.n - 1]
      starts = np.r_[0, ends[:-1] + 1]
      d = np.add.reduceat(self.delta, starts)
      keep = d > 0
      self.ends = ends[keep]
      self.d = d[keep]
      self.times = self.t[self.ends]
      self.theta = np.zeros(0)
      self._cache = {}

   def set_theta(self, theta):
      if len(theta):
         raise ValueError("coxph has no extra parameters")

   def risk(self, z):
      """Risk-set sums of per-observation values ``z`` (leading axis n)."""
      return np.cumsum(z, axis=0)[self.ends]

   def spread(self, e):
      """Per-observation sums over event groups whose risk set contains it."""
      full = np.zeros((self.n,) + np.shape(e)[1:])
      full[self.ends] = e
      return np.cumsum(full[::-1], axis=0)[::-1]

   def eta(self, beta):
      return self.X @ beta + self.off

   def point(self, beta, full=False):
      key = beta.tobytes()
      pt = self._cache.get(key)
      if pt is None:
         if len(self._cache) > 8:
            self._cache.clear()
         pt = CoxPoint(self, beta)
         self._cache[key] = pt
      return pt

   def loglik(self, beta):
      return self.point(beta).l


class CoxPoint:
   def __init__(self, model, beta):
      m = model
      self.model = m
      self.beta = beta
      eta = m.eta(beta)
      shift = float(np.max(eta))
      self.w = np.exp(eta - shift)
      self.g = m.risk(self.w)
      self.l = float(m.delta @ eta - m.d @ (np.log(self.g) + shift))
      self.c = m.spread(m.d / self.g)
      self.b = m.risk(self.w[:, None] * m.X)

   def grad(self):
      m = self.model
      return m.X.T @ (m.delta - self.w * self.c)

   def hess(self):
      m = self.model
      X = m.X
      D2 = m.d / self.g**2
      return (self.b.T * D2) @ self.b - X.T @ ((self.w * self.c)[:, None] * X)

   def third(self, v):
      m = self.model
      X = m.X
      u = X @ v
      wu = self.w * u
      gu = m.risk(wu)
      bu = m.risk(wu[:, None] * X)
      D2 = m.d / self.g**2
      c2 = m.spread(m.d * gu / self.g**2)
      bb = (bu.T * D2) @ self.b
      return (-(X.T @ ((wu * self.c - self.w * c2)[:, None] * X))
              + bb + bb.T - 2.0 * (self.b.T * (m.d * gu / self.g**3)) @ self.b)

   def third_vv(self, u, v):
      return self.third(u) @ v

   # no extra likelihood parameters
   def lt(self):
      return np.zeros(0)

   def ltt(self):
      return np.zeros((0, 0))

   def lbt(self):
      return np.zeros((self.model.P, 0))

   def lbtt(self):
      return np.zeros((self.model.P, 0, 0))

   def lbbt(self):
      return np.zeros((0, self.model.P, self.model.P))

   def tr3t(self, W):
      return np.zeros((W.shape[1], 0))

   def tr2t(self):
      return np.zeros(0)

   def tr2tt(self):
      return np.zeros((0, 0))

   # -- traces tr(B d^k H) via tr(B H) = sum_j f(|b~_j|^2, g_j, A_j)
   def trace_setup(self, B):
      m = self.model
      lam, V = np.linalg.eigh(0.5 * (B + B.T))
      L = V * np.sqrt(np.maximum(lam, 0.0))
      self._Xt = m.X @ L
      cq = np.einsum("ij,ij->i", self._Xt, self._Xt)
      self._cq = cq
      self._bt = m.risk(self.w[:, None] * self._Xt)
      self._A = m.risk(self.w * cq)
      g, d = self.g, m.d
      bq = np.einsum("ij,ij->i", self._bt, self._bt)
      A = self._A
      self._f = {
         "b": d / g**2,
         "g": d * (-2 * bq / g**3 + A / g**2),
         "A": -d / g,
         "bg": -2 * d / g**3,
         "gg": d * (6 * bq / g**4 - 2 * A / g**3),
         "gA": d / g**2,
      }

   def _first(self, W):
      m = self.model
      U = m.X @ W
      wU = self.w[:, None] * U
      gu = m.risk(wU)
      Au = m.risk(wU * self._cq[:, None])
      btu = np.stack([m.risk(wU[:, q:q + 1] * self._Xt) for q in range(W.shape[1])])
      bqu = 2.0 * np.einsum("jp,qjp->jq", self._bt, btu)
      return U, gu, Au, btu, bqu

   def tr3(self, W):
      f = self._f
      _, gu, Au, _, bqu = self._first(W)
      return f["b"] @ bqu + f["g"] @ gu + f["A"] @ Au

   def tr4(self, W):
      m = self.model
      f = self._f
      U, gu, Au, btu, bqu = self._first(W)
      q = W.shape[1]
      out = np.zeros((q, q))
      for a in range(q):
         for c in range(a, q):
            wuv = self.w * U[:, a] * U[:, c]
            guv = m.risk(wuv)
            Auv = m.risk(wuv * self._cq)
            btuv = m.risk(wuv[:, None] * self._Xt)
            bquv = 2.0 * (np.einsum("jp,jp->j", btu[a], btu[c])
                          + np.einsum("jp,jp->j", self._bt, btuv))
            val = (f["b"] @ bquv + f["g"] @ guv + f["A"] @ Auv
                   + f["bg"] @ (bqu[:, a] * gu[:, c] + bqu[:, c] * gu[:, a])
                   + f["gg"] @ (gu[:, a] * gu[:, c])
                   + f["gA"] @ (gu[:, a] * Au[:, c] + gu[:, c] * Au[:, a]))
            out[a, c] = out[c, a] = val
      return out


# ---------------------------------------------------------------- prediction


@dataclass
class CoxBaseline:
   """Cumulative baseline hazard table at the event times, increasing in time."""
   times: np.ndarray
   h: np.ndarray
   q: np.ndarray
   a: np.ndarray


def cox_baseline(model, beta):
   """Breslow cumulative hazard ``h``, its variance term ``q`` and the
   coefficient sensitivity vectors ``a`` at each distinct event time."""
   pt = model.point(beta)
   eta = model.eta(beta)
   # unscaled risk sums
   scale = np.exp(float(np.max(eta)))
   g = pt.g * scale
   b = pt.b * scale
   inc = model.d / g
   # times are decreasing; accumulate from the earliest event upwards
   h = np.cumsum(inc[::-1])
   q = np.cumsum((model.d / g**2)[::-1])
   a = np.cumsum((b * (model.d / g**2)[:, None])[::-1], axis=0)
   return CoxBaseline(times=model.times[::-1].copy(), h=h, q=q, a=a)


def _lookup(base, t):
   k = np.searchsorted(base.times, t, side="right") - 1
   ok = k >= 0
   kk = np.where(ok, k, 0)
   h = np.where(ok, base.h[kk], 0.0)
   q = np.where(ok, base.q[kk], 0.0)
   a = np.where(ok[:, None], base.a[kk], 0.0)
   return h, q, a


def cox_predict(base, X, eta, t, Vb=None):
   """Survival ``S(t, x)`` and, with ``Vb``, its standard error.

   ``X`` rows and linear predictors ``eta`` correspond to the query times ``t``.
   """
   t = np.asarray(t, dtype=float)
   h, q, a = _lookup(base, t)
   r = np.exp(eta)
   S = np.exp(-h * r)
   if Vb is None:
      return S, None
   v = a - X * h[:, None]
   var = S**2 * r**2 * (q + np.einsum("ij,jk,ik->i", v, Vb, v))
   return S, np.sqrt(np.maximum(var, 0.0))


def cox_residuals(base, eta, time, status):
   """Martingale and deviance residuals at each subject's own time."""
   h, _, _ = _lookup(base, np.asarray(time, dtype=float))
   logS = -h * np.exp(eta)
   M = status + logS
   with np.errstate(divide="ignore", invalid="ignore"):
      inner = np.where(status > 0, M + status * np.log(-logS), M)
   Dr = np.sign(M) * np.sqrt(np.maximum(-2.0 * inner, 0.0))
   return M, Dr
