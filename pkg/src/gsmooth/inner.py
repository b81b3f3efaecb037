"""Penalized likelihood maximization for fixed smoothing parameters.

The objective is ``L(beta) = l(beta) - beta' S_lam beta / 2``.  Each iteration
solves with the diagonally preconditioned negative Hessian, perturbed towards
the identity just enough for its pivoted Cholesky factor to exist, and halves
the step until the objective increases.  PIRLS for single-predictor deviance
families is the same iteration with negative working weights set to zero when
forming the direction.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import pivoted_cholesky


class InnerDivergence(RuntimeError):
   def __init__(self, msg, state=None):
      super().__init__(msg)
      self.state = state


class InitializationError(ValueError):
   pass


@dataclass
class FitState:
   beta: np.ndarray
   rho: np.ndarray
   theta: np.ndarray
   L: float
   l: float
   H: np.ndarray
   keep: np.ndarray
   R: np.ndarray
   piv: np.ndarray
   D: np.ndarray
   logdet_H: float
   iterations: int
   perturbed: bool = False
   converged: bool = True
   # penalized Hessian not positive definite on the retained set
   indefinite: bool = False
   history: list = field(default_factory=list)

   @property
   def dropped(self):
      return np.nonzero(~self.keep)[0]

   def solve(self, b):
      """``H_keep^{-1} b`` padded with zeros at dropped coefficients."""
      b = np.asarray(b, dtype=float)
      kp = self.keep
      rhs = b[kp].reshape(kp.sum(), -1)
      x = self.D[:, None] * _solve_chol(self.R, self.piv, self.D[:, None] * rhs)
      out = np.zeros(b.shape)
      out[kp] = x.reshape((kp.sum(),) + b.shape[1:])
      return out

   def inverse(self):
      """Pseudo-inverse of the penalized Hessian (zero rows/cols at dropped)."""
      P = len(self.keep)
      out = np.zeros((P, P))
      kp = self.keep
      out[np.ix_(kp, kp)] = self.solve(np.eye(P)[:, kp])[kp]
      return 0.5 * (out + out.T)


def _precondition(H):
   d = np.abs(np.diag(H))
   D = np.ones_like(d)
   pos = d > 0
   D[pos] = 1.0 / np.sqrt(d[pos])
   return D, D[:, None] * H * D[None, :]


def perturbed_cholesky(Hp, eps0=1e-12, max_tries=40):
   """Pivoted Cholesky of ``Hp + eps I`` with ``eps`` from 0 upwards; returns ``(R, piv, eps)``."""
   n = Hp.shape[0]
   R, piv, rank = pivoted_cholesky(Hp, 0.0)
   if rank == n and np.all(np.isfinite(R)):
      return R, piv, 0.0
   eps = eps0 * max(np.linalg.norm(Hp), 1.0)
   for _ in range(max_tries):
      R, piv, rank = pivoted_cholesky(Hp + eps * np.eye(n), 0.0)
      if rank == n and np.all(np.isfinite(R)):
         return R, piv, eps
      eps *= 10.0
   raise InnerDivergence("could not regularize the Hessian")


def _solve_chol(R, piv, b):
   z = np.linalg.solve(R.T, b[piv])
   z = np.linalg.solve(R, z)
   out = np.empty_like(z)
   out[piv] = z
   return out


def _direction_hessian(model, pt, S, clamp):
   if clamp:
      W = np.minimum(pt.d.l2, 0.0)
      return -model._quad(pt.w[:, None, None] * W) + S
   return -pt.hess() + S


def _objective(model, beta, S):
   pt = model.point(beta)
   return pt.l - 0.5 * beta @ S @ beta, pt


def newton_fit(model, S, beta0, rho=None, keep=None, tol=1e-7, max_iter=100, clamp=False,
               max_halve=30):
   """Maximize ``l(beta) - beta' S beta / 2`` over the coefficients in ``keep``.

   ``clamp`` selects the PIRLS direction (working weights floored at zero).
   Raises :class:`InitializationError` when the start is not finite and
   :class:`InnerDivergence` when the iteration cap is hit or no step increases
   the objective far from convergence.
   """
   P = len(beta0)
   keep = np.ones(P, dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
   beta = np.where(keep, beta0, 0.0).astype(float)
   L, pt = _objective(model, beta, S)
   if not np.isfinite(L):
      raise InitializationError("log likelihood is not finite at the initial coefficients")
   kp = np.ix_(keep, keep)
   perturbed = False
   history = [L]
   polished = False
   it = 0
   converged = False
   while it < max_iter:
      it += 1
      g = (pt.grad() - S @ beta)[keep]
      Hd = _direction_hessian(model, pt, S, clamp)[kp]
      D, Hp = _precondition(Hd)
      R, piv, eps = perturbed_cholesky(Hp)
      perturbed = perturbed or eps > 0
      step = D * _solve_chol(R, piv, D * g)
      small = np.max(np.abs(g), initial=0.0) < tol * (1 + abs(L))
      gain = g @ step
      if (small or gain < 1e-12 * (1 + abs(L))) and polished:
         converged = True
         break
      # one extra Newton step once the gradient test passes
      polished = small
      full = np.zeros(P)
      full[keep] = step
      accepted = False
      for _ in range(max_halve + 1):
         bn = beta + full
         Ln, ptn = _objective(model, bn, S)
         if np.isfinite(Ln) and (Ln > L or (polished and Ln >= L)):
            accepted = True
            break
         full *= 0.5
      if not accepted and not (small or gain < 1e-8 * (1 + abs(L))):
         # near-singular curvature (e.g. saturated weights) can make the Newton step
         # useless at any halving; fall back to steepest ascent on the scale of beta
         full = np.zeros(P)
         full[keep] = g * (max(1.0, np.max(np.abs(beta))) / np.max(np.abs(g)))
         for _ in range(2 * max_halve + 1):
            bn = beta + full
            Ln, ptn = _objective(model, bn, S)
            if np.isfinite(Ln) and Ln > L:
               accepted = True
               polished = False
               break
            full *= 0.5
      if not accepted:
         # no representable increase: accept as converged if the expected gain is negligible
         if small or gain < 1e-8 * (1 + abs(L)):
            converged = True
            break
         raise InnerDivergence("step halving failed to increase the penalized likelihood",
                               _state(model, beta, rho, L, pt, S, keep, it, perturbed, False,
                                      history))
      beta, L, pt = bn, Ln, ptn
      history.append(L)
   if not converged:
      raise InnerDivergence(f"no convergence in {max_iter} iterations",
                            _state(model, beta, rho, L, pt, S, keep, it, perturbed, False, history))
   return _state(model, beta, rho, L, pt, S, keep, it, perturbed, True, history)


def _state(model, beta, rho, L, pt, S, keep, it, perturbed, converged, history):
   H = -pt.hess() + S
   H = 0.5 * (H + H.T)
   Hk = H[np.ix_(keep, keep)]
   D, Hp = _precondition(Hk)
   R, piv, rank = pivoted_cholesky(Hp, 0.0)
   indefinite = rank < Hp.shape[0]
   if indefinite:
      R, piv, _ = perturbed_cholesky(Hp)
   logdet = 2.0 * np.sum(np.log(np.diag(R))) - 2.0 * np.sum(np.log(D))
   return FitState(beta=beta, rho=None if rho is None else np.asarray(rho, dtype=float).copy(),
                   theta=np.asarray(model.theta, dtype=float).copy(), L=float(L), l=float(pt.l),
                   H=H, keep=keep.copy(), R=R, piv=piv, D=D, logdet_H=float(logdet),
                   iterations=it, perturbed=perturbed, converged=converged, history=history,
                   indefinite=indefinite)


def pirls_fit(model, S, beta0, rho=None, keep=None, tol=1e-7, max_iter=100):
   """PIRLS for single-predictor deviance families (``w z`` product form)."""
   if getattr(model, "K", 1) != 1 or not hasattr(model, "_quad"):
      raise ValueError("PIRLS needs a single-predictor deviance family")
   return newton_fit(model, S, beta0, rho=rho, keep=keep, tol=tol, max_iter=max_iter, clamp=True)


def detect_unidentifiable(H, S_bal, keep=None, tol=1e-12):
   """Indices to drop: rank test on ``H/||H||_F + S/||S||_F`` by pivoted Cholesky.

   Pivots whose square falls below ``tol`` times the leading one are treated as
   zero; the coefficients pivoted into those trailing positions are returned.
   """
   P = H.shape[0]
   keep = np.ones(P, dtype=bool) if keep is None else keep
   idx = np.nonzero(keep)[0]
   Hk = H[np.ix_(idx, idx)]
   Sk = S_bal[np.ix_(idx, idx)]
   nh, ns = np.linalg.norm(Hk), np.linalg.norm(Sk)
   N = (Hk / nh if nh > 0 else Hk) + (Sk / ns if ns > 0 else Sk)
   N = 0.5 * (N + N.T)
   top = np.max(np.diag(N))
   if not top > 0:
      raise InnerDivergence("no identifiable coefficients")
   R, piv, rank = pivoted_cholesky(N, tol * top)
   if rank == 0:
      raise InnerDivergence("no identifiable coefficients")
   return idx[piv[rank:]]


def detect_and_drop(model, S, S_bal, state, tol=1e-7, clamp=False):
   """Drop unidentifiable coefficients from a fitted state and refit the rest."""
   pt = model.point(state.beta)
   drop = detect_unidentifiable(-pt.hess(), S_bal, state.keep)
   if len(drop) == 0:
      return state
   keep = state.keep.copy()
   keep[drop] = False
   return newton_fit(model, S, state.beta, rho=state.rho, keep=keep, tol=tol, clamp=clamp)


def fit_inner(model, S, S_bal, beta0, rho=None, extended=False, tol=1e-7, max_iter=100):
   """Full inner step: fit, test identifiability, and refit without dropped coefficients."""
   st = newton_fit(model, S, beta0, rho=rho, tol=tol, max_iter=max_iter, clamp=extended)
   return detect_and_drop(model, S, S_bal, st, tol=tol, clamp=extended)


def initial_beta(model, family, S):
   """Starting coefficients from family-specific response summaries."""
   P = model.P
   if not hasattr(model, "Xs"):
      return np.zeros(P)
   n = model.n
   targets = []
   if hasattr(family, "init_mu"):
      mu0 = family.init_mu(model.y)
      targets = [family.link.link(mu0)]
   elif hasattr(family, "init_eta"):
      e0 = family.init_eta(model.y)
      targets = [np.full(n, e) for e in e0]
   beta = np.zeros(P)
   for a, (X, (c0, c1), off) in enumerate(zip(model.Xs, model.cols, model.offsets)):
      if c1 == c0:
         continue
      A = X.T @ X + S[c0:c1, c0:c1] + 1e-8 * np.eye(c1 - c0) * max(np.trace(X.T @ X), 1.0) / (c1 - c0)
      beta[c0:c1] = np.linalg.solve(A, X.T @ (targets[a] - off))
   if not np.isfinite(model.loglik(beta)):
      beta[:] = 0.0
   return beta
