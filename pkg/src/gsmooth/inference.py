"""Posterior covariances, smoothing-parameter uncertainty corrections, edf and AIC.

All heavy lifting happens in working coordinates on the retained coefficients;
covariances are mapped back through the block-diagonal working transform at
the end.  The Cholesky-factor correction uses the factor of the working
``V_beta``, so it is tied to those coordinates (the factor of a covariance is
only defined up to the basis it is taken in).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .kernels import chol_deriv
from .penalty import RHO_MAX


@dataclass
class FitResult:
   beta: np.ndarray
   rho: np.ndarray
   rho_work: np.ndarray
   theta: np.ndarray
   phi: float
   Vb: np.ndarray
   Vc: np.ndarray
   Vstar: np.ndarray
   V1: np.ndarray
   V2: np.ndarray
   Vf: np.ndarray
   Vf_star: np.ndarray
   Vrho: np.ndarray
   J: np.ndarray
   edf0: float
   edf1: float
   edf: float
   term_edf: dict
   loglik: float
   aic: float
   aic_corrected: float
   aic_tau1: float
   laml: float
   n_extra: int
   converged: bool
   dropped: list = field(default_factory=list)
   rho_dropped: list = field(default_factory=list)
   trace: object = None


def outer_dropped(grad, hess, psi, M, value, tol=1e-6, flat=1e-8):
   """Smoothing parameters treated as effectively infinite at the optimum.

   These are the ones at the working bound, plus any whose criterion is flat
   (stationary, with curvature below ``flat`` times the largest) so that the
   covariance would be set by the eigenvalue floor alone.  This is narrower
   than the optimizer's working drop set, whose threshold scales with the
   criterion value and can exclude parameters with real curvature.
   """
   g = np.asarray(grad)[:M]
   H = np.asarray(hess)
   h = np.abs(np.diag(H))[:M]
   top = max(np.max(np.abs(H), initial=0.0), 1e-300)
   stat = np.abs(g) < tol * (1 + abs(value))
   out = np.zeros(len(grad), dtype=bool)
   out[:M] = (np.abs(np.asarray(psi)[:M]) >= RHO_MAX - 1e-9) | (stat & (h < flat * top))
   return out


def compute_Vrho(hess, dropped=None, floor=1e-8):
   """Pseudo-inverse of the negative criterion Hessian.

   Eigenvalues below ``floor`` times the largest are raised to that floor
   before inversion; rows and columns of ``dropped`` components are zero.
   """
   A = -0.5 * (np.asarray(hess) + np.asarray(hess).T)
   q = A.shape[0]
   keep = np.ones(q, dtype=bool) if dropped is None else ~np.asarray(dropped, dtype=bool)
   out = np.zeros((q, q))
   if not keep.any():
      return out
   Ak = A[np.ix_(keep, keep)]
   ev, U = np.linalg.eigh(Ak)
   top = max(np.max(np.abs(ev)), 1e-300)
   ev = np.maximum(ev, floor * top)
   out[np.ix_(keep, keep)] = (U / ev) @ U.T
   return out


def psi_to_paper(Vpsi, M, scale_index):
   """Re-express outer covariance with ``rho + log phi`` in place of ``rho``.

   Outer parameters are on the log likelihood scale; adding ``log phi`` gives
   the conventional log smoothing parameters.
   """
   if scale_index is None:
      return Vpsi
   A = np.eye(Vpsi.shape[0])
   A[:M, scale_index] = 1.0
   return A @ Vpsi @ A.T


def second_order_correction(Vb, dH, Vrho, keep):
   """Covariance term from the smoothing-parameter derivatives of the Cholesky factor.

   ``Vb`` is the retained-coefficient posterior covariance, ``dH`` the
   derivatives of the penalized Hessian w.r.t. each log smoothing parameter.
   Computed as ``sum_e nu_e C_e' C_e`` with ``C_e = sum_k u_ek dR_k`` over the
   eigen-decomposition of ``Vrho``, which avoids pairwise products of the
   factor derivatives.
   """
   M = Vrho.shape[0]
   p = Vb.shape[0]
   out = np.zeros((p, p))
   if M == 0 or not np.any(Vrho):
      return out
   R = np.linalg.cholesky(Vb).T
   dR = []
   for k in range(M):
      Hk = dH[k][np.ix_(keep, keep)]
      dV = -Vb @ Hk @ Vb
      dR.append(chol_deriv(R, 0.5 * (dV + dV.T)))
   dR = np.array(dR)
   nu, U = np.linalg.eigh(0.5 * (Vrho + Vrho.T))
   for e in range(M):
      if nu[e] <= 0:
         continue
      C = np.tensordot(U[:, e], dR, axes=(0, 0))
      out += nu[e] * C.T @ C
   return out


def _embed(A, keep):
   P = len(keep)
   out = np.zeros((P, P))
   out[np.ix_(keep, keep)] = A
   return out


def edf_terms(F, design):
   """Per-term effective degrees of freedom from ``diag(V_beta I)``."""
   diag = np.diag(F)
   out = {}
   for a, (c0, c1) in enumerate(design.col_ranges):
      npar = design.n_param[a]
      if npar:
         out[f"parametric.{a}" if a else "parametric"] = float(np.sum(diag[c0:c0 + npar]))
   for t in design.terms:
      s0, s1 = t.columns
      out[t.label + (f".{t.predictor}" if t.predictor else "")] = float(np.sum(diag[s0:s1]))
   return out


def build_result(problem, state, derivs, psi, trace=None):
   """Assemble covariances, edf and AIC from an optimized problem."""
   M = problem.M
   model = problem.model
   keep = state.keep
   T = problem.T
   pt = model.point(state.beta)
   info = -pt.hess()
   info = 0.5 * (info + info.T)
   Vb_w = state.inverse()
   Vb_k = Vb_w[np.ix_(keep, keep)]
   q = len(psi)
   if q:
      dropped = outer_dropped(derivs.grad, derivs.hess, psi, M, derivs.value)
      Vpsi = compute_Vrho(derivs.hess, dropped)
   else:
      dropped = np.zeros(0, dtype=bool)
      Vpsi = np.zeros((0, 0))
   scale_index = None
   fam = problem.family
   if problem.kind == "extended" and fam.has_scale and (model.n_theta - 1) in problem.theta_idx:
      scale_index = M + problem.theta_idx.index(model.n_theta - 1)
   Vpsi_p = psi_to_paper(Vpsi, M, scale_index)
   Vrho = Vpsi_p[:M, :M]
   J_w = derivs.dbeta[:, :M] if M else np.zeros((problem.P, 0))
   V1_w = J_w @ Vrho @ J_w.T
   V2_k = second_order_correction(Vb_k, derivs.dH, Vrho, keep) if M else np.zeros_like(Vb_k)
   V2_w = _embed(V2_k, keep)
   Vc_w = Vb_w + V1_w + V2_w
   F = Vb_w @ info
   edf0 = float(np.trace(F))
   edf1 = float(np.trace(2 * F - F @ F))
   edf = float(np.sum(info * Vc_w.T))
   Vf_w = Vb_w @ info @ Vb_w
   tr = lambda A: T @ A @ T.T
   n_extra = len(problem.theta_idx)
   ll = float(pt.l)
   rho_work = np.asarray(psi[:M], dtype=float)
   theta = model.theta.copy()
   phi = float(getattr(model, "phi", 1.0))
   # conventional log smoothing parameters multiply the penalty of the deviance scale
   rho_out = rho_work + np.log(phi)
   return FitResult(
      beta=problem.to_original(state.beta), rho=rho_out, rho_work=rho_work, theta=theta, phi=phi,
      Vb=tr(Vb_w), Vc=tr(Vc_w), Vstar=tr(Vb_w + V1_w), V1=tr(V1_w), V2=tr(V2_w), Vf=tr(Vf_w),
      Vf_star=tr(Vf_w + V1_w), Vrho=Vrho, J=T @ J_w, edf0=edf0, edf1=edf1, edf=edf,
      term_edf=edf_terms(F, problem.design), loglik=ll,
      aic=-2 * ll + 2 * (edf0 + n_extra), aic_corrected=-2 * ll + 2 * (edf + n_extra),
      aic_tau1=-2 * ll + 2 * (edf1 + n_extra), laml=float(derivs.value), n_extra=n_extra,
      converged=True if trace is None else bool(trace.converged),
      dropped=list(state.dropped), rho_dropped=list(np.nonzero(dropped)[0]), trace=trace)


def standard_errors(X, V):
   """Pointwise standard errors of ``X beta`` under covariance ``V``."""
   return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, V, X), 0.0))


def intervals(X, beta, V, level=0.95):
   """``(fit, lower, upper)`` bands ``fit +/- z se`` at the given coverage."""
   z = norm.ppf(0.5 + level / 2)
   fit = X @ beta
   se = standard_errors(X, V)
   return fit, fit - z * se, fit + z * se
