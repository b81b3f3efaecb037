"""Laplace approximate marginal likelihood and its derivatives.

The outer parameters are the log smoothing parameters followed by any free
likelihood parameters (``theta``, with ``log phi`` last for scale families).
With ``L(beta, psi) = l(beta, theta) - sum_k exp(rho_k) beta' S_k beta / 2``
and ``H = -L_bb`` the criterion is

   V = L(beta_hat) + log|S_lam|_+ / 2 - log|H| / 2 + Mp log(2 pi) / 2.

Derivatives of ``beta_hat`` follow from differentiating ``L_b(beta_hat, psi) = 0``;
the ``log|H|`` terms are traces against ``B = H^{-1}`` that the likelihood
Point evaluates without forming any array of third or fourth derivatives.
"""

from dataclasses import dataclass, field

import numpy as np

from .penalty import component, logdet_splus

LOG2PI = float(np.log(2 * np.pi))


@dataclass
class LamlDerivs:
   value: float
   grad: np.ndarray = None
   hess: np.ndarray = None
   # columns follow the outer parameter order (rho first, then free theta)
   dbeta: np.ndarray = None
   d2beta: np.ndarray = None
   dH: list = field(default_factory=list)
   n_rho: int = 0


def null_space_dim(structure, state):
   """Unpenalized dimension among the retained coefficients."""
   return max(int(state.keep.sum()) - sum(b.rank for b in structure.blocks), 0)


def laml_value(state, structure, rho, log_scale=None):
   """Criterion value in original coordinates.

   ``log_scale`` holds ``log|T_ii|`` for diagonal working transforms, which
   converts the working ``log|H|`` back to original coordinates.
   """
   if state.indefinite:
      return -np.inf
   ld, _, _ = logdet_splus(structure, rho)
   corr = 0.0 if log_scale is None else float(np.sum(log_scale[state.keep]))
   Mp = null_space_dim(structure, state)
   return state.L + 0.5 * ld - 0.5 * state.logdet_H + corr + 0.5 * Mp * LOG2PI


def _component_matrix(structure, k, P):
   sl, Sk = component(structure, k)
   S = np.zeros((P, P))
   S[sl, sl] = Sk
   return S


def laml_derivs(model, structure, state, rho, theta_idx=(), order=2, log_scale=None):
   """Value, gradient and Hessian of the criterion over ``(rho, theta[theta_idx])``.

   ``order`` 0 gives the value only, 1 adds the gradient and ``dbeta``, 2 the
   Hessian and ``d2beta``.
   """
   rho = np.asarray(rho, dtype=float)
   value = laml_value(state, structure, rho, log_scale)
   M = structure.M
   out = LamlDerivs(value=value, n_rho=M)
   if order == 0:
      return out
   theta_idx = list(theta_idx)
   m = len(theta_idx)
   q = M + m
   P = len(state.beta)
   beta = state.beta
   lam = np.exp(rho)
   pt = model.point(beta, full=True)
   _, ld_g, ld_h = logdet_splus(structure, rho)
   Sk = [_component_matrix(structure, k, P) for k in range(M)]
   Skb = [S @ beta for S in Sk]

   lt = pt.lt()
   lbt = pt.lbt()
   lbbt = pt.lbbt()
   Lpsi = np.r_[[-0.5 * lam[k] * beta @ Skb[k] for k in range(M)], lt[theta_idx]]
   Lb = np.column_stack([-lam[k] * Skb[k] for k in range(M)] + [lbt[:, t] for t in theta_idx]) \
      if q else np.zeros((P, 0))
   Lbb = [-lam[k] * Sk[k] for k in range(M)] + [lbbt[t] for t in theta_idx]
   Lb[~state.keep] = 0.0
   dbeta = state.solve(Lb)
   B = state.inverse()
   pt.trace_setup(B)
   t3 = pt.tr3(dbeta) if q else np.zeros(0)
   tr2t = pt.tr2t()
   trBLbb = np.r_[[-lam[k] * np.sum(B * Sk[k]) for k in range(M)], tr2t[theta_idx]]
   dH = [-pt.third(dbeta[:, j]) - Lbb[j] for j in range(q)]
   trBH = -t3 - trBLbb
   dlogS = np.r_[ld_g, np.zeros(m)]
   grad = Lpsi + 0.5 * dlogS - 0.5 * trBH
   out.grad, out.dbeta, out.dH = grad, dbeta, dH
   if order == 1:
      return out

   ltt = pt.ltt()
   lbtt = pt.lbtt()
   tr2tt = pt.tr2tt()
   tr3t = pt.tr3t(dbeta) if q else np.zeros((0, 0))
   tr4 = pt.tr4(dbeta) if q else np.zeros((0, 0))
   kind = ["rho"] * M + ["theta"] * m
   tix = [None] * M + theta_idx
   d2beta = np.zeros((P, q, q))
   pairs = [(j, k) for j in range(q) for k in range(j, q)]
   rhs = np.zeros((P, len(pairs)))
   Lpp = np.zeros((q, q))
   for c, (j, k) in enumerate(pairs):
      bj, bk = dbeta[:, j], dbeta[:, k]
      r = pt.third_vv(bk, bj) + Lbb[k] @ bj + Lbb[j] @ bk
      if kind[j] == "rho" and kind[k] == "rho":
         if j == k:
            r = r + Lb[:, j]
            Lpp[j, k] = Lpsi[j]
      elif kind[j] == "theta" and kind[k] == "theta":
         r = r + lbtt[:, tix[j], tix[k]]
         Lpp[j, k] = ltt[tix[j], tix[k]]
      rhs[:, c] = r
   rhs[~state.keep] = 0.0
   sol = state.solve(rhs)
   for c, (j, k) in enumerate(pairs):
      d2beta[:, j, k] = d2beta[:, k, j] = sol[:, c]
   t3jk = pt.tr3(sol) if pairs else np.zeros(0)
   BH = [B @ h for h in dH]
   hess = np.zeros((q, q))
   for c, (j, k) in enumerate(pairs):
      trHjk = -tr4[j, k] - t3jk[c]
      if kind[k] == "theta":
         trHjk -= tr3t[j, tix[k]]
      if kind[j] == "theta":
         trHjk -= tr3t[k, tix[j]]
      if kind[j] == "theta" and kind[k] == "theta":
         trHjk -= tr2tt[tix[j], tix[k]]
      if kind[j] == "rho" and j == k:
         trHjk += lam[j] * np.sum(B * Sk[j])
      ldh = ld_h[j, k] if kind[j] == "rho" and kind[k] == "rho" else 0.0
      val = (Lpp[j, k] + Lb[:, j] @ dbeta[:, k] + 0.5 * ldh
             + 0.5 * np.sum(BH[j] * BH[k].T) - 0.5 * trHjk)
      hess[j, k] = hess[k, j] = val
   out.hess, out.d2beta = hess, d2beta
   return out
