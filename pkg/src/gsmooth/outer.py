"""Newton optimization of the marginal likelihood over the outer parameters.

Outer parameters are the log smoothing parameters, on the scale of the log
likelihood (so for scale families ``exp(rho)`` is the usual smoothing
parameter divided by the scale), followed by any free likelihood parameters.
Fitting happens in working coordinates where each single-parameter penalty
is diagonal, so very large smoothing parameters are absorbed by the
diagonal preconditioning of the inner solver.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .families import family_kind
from .inner import fit_inner, initial_beta
from .penalty import (RHO_MAX, assemble_S_lambda, balanced_penalty, make_structure,
                      preprocess_blocks)
from .sensitivity import laml_derivs


class OuterDivergence(RuntimeError):
   def __init__(self, msg, trace=None):
      super().__init__(msg)
      self.trace = trace


@dataclass
class OuterRecord:
   psi: np.ndarray
   value: float
   grad_max: float
   dropped: list
   halvings: int


@dataclass
class OuterTrace:
   records: list = field(default_factory=list)
   converged: bool = False
   iterations: int = 0


class Problem:
   """A model ready for fitting: working-coordinate likelihood plus penalties.

   ``theta0``/``phi0`` initialize the family parameters; ``fixed_theta``
   keeps them out of the outer optimization.
   """

   def __init__(self, design, blocks, family, theta0=None, phi0=None, fixed_theta=False,
                fixed_scale=False):
      self.design = design
      self.family = family
      self.kind = family_kind(family)
      base = make_structure([(off, S) for off, S, _ in blocks], design.P)
      self.structure0 = base
      self.structure = preprocess_blocks(base)
      self.T = self.structure.transform()
      self.Ti = self.structure.inverse_transform()
      self.log_scale = np.zeros(design.P)
      for b in self.structure.blocks:
         if b.block_type == "diag_single":
            self.log_scale[b.offset:b.offset + b.dim] = np.log(np.diag(b.transform))
      Xs = [X @ self.T[c0:c1, c0:c1] for X, (c0, c1) in zip(design.Xs, design.col_ranges)]
      self.wdesign = replace(design, Xs=Xs)
      self.M = self.structure.M
      self.P = design.P
      if self.kind == "extended":
         th = family.init_theta(design.y) if theta0 is None else np.asarray(theta0, dtype=float)
         phi = self._init_phi(th) if phi0 is None else float(phi0)
         self.model = family.make_model(self.wdesign, th, phi)
      else:
         self.model = family.make_model(self.wdesign)
      nt = self.model.n_theta
      free = []
      if self.kind == "extended":
         mt = family.n_theta
         if not fixed_theta:
            free += list(range(mt))
         if family.has_scale and not fixed_scale:
            free.append(nt - 1)
      self.theta_idx = free
      self.S_bal = balanced_penalty(self.structure)
      self._beta = None
      self._cache = {}

   def _init_phi(self, theta):
      fam = self.family
      if not fam.has_scale:
         return 1.0
      y = self.design.y
      mu = fam.init_mu(y)
      dev = fam.deviance(y, mu, theta)
      return float(max(np.mean(dev), 1e-6 * (np.var(y) + 1e-12), 1e-12))

   @property
   def n_psi(self):
      return self.M + len(self.theta_idx)

   def split(self, psi):
      psi = np.asarray(psi, dtype=float)
      rho = psi[:self.M]
      theta = self.model.theta.copy()
      theta[self.theta_idx] = psi[self.M:]
      return rho, theta

   def psi_of(self, rho, theta=None):
      theta = self.model.theta if theta is None else theta
      return np.r_[rho, np.asarray(theta)[self.theta_idx]]

   def fit(self, psi):
      """Inner fit at ``psi``; cached per parameter vector."""
      psi = np.asarray(psi, dtype=float)
      key = psi.tobytes()
      if key in self._cache:
         return self._cache[key]
      rho, theta = self.split(psi)
      self.model.set_theta(theta)
      S = assemble_S_lambda(self.structure, rho)
      if self._beta is None:
         self._beta = initial_beta(self.model, self.family, S)
      st = fit_inner(self.model, S, self.S_bal, self._beta, rho,
                     extended=self.kind == "extended")
      self._beta = st.beta.copy()
      if len(self._cache) > 16:
         self._cache.clear()
      self._cache[key] = st
      return st

   def derivs(self, psi, order=2):
      st = self.fit(psi)
      rho, theta = self.split(psi)
      self.model.set_theta(theta)
      return st, laml_derivs(self.model, self.structure, st, rho, self.theta_idx, order,
                             self.log_scale)

   def value(self, psi):
      return self.derivs(psi, order=0)[1].value

   def to_original(self, beta_w):
      return self.T @ beta_w


def information(problem, beta=None):
   """Observed information ``-l_bb`` in working coordinates at ``beta``."""
   model = problem.model
   if beta is None:
      beta = initial_beta(model, problem.family, np.zeros((problem.P, problem.P)))
   pt = model.point(beta)
   if problem.kind == "extended":
      W = np.minimum(pt.d.l2, 0.0)
      return -model._quad(pt.w[:, None, None] * W)
   I = -pt.hess()
   ev, U = np.linalg.eigh(0.5 * (I + I.T))
   return (U * np.abs(ev)) @ U.T


def initial_rho(problem, info=None):
   """Log smoothing parameters giving each block half of its penalized degrees of freedom.

   For each block the penalized-direction share of ``tr((I + e^rho S)^{-1} I)``
   is solved equal to half the block rank, with ``I`` the block's information.
   """
   st = problem.structure
   I = information(problem) if info is None else info
   rho = np.zeros(st.M)
   for b in st.blocks:
      sl = slice(b.offset, b.offset + b.dim)
      Ib = I[sl, sl]
      if b.block_type == "multi_lambda":
         norms = [np.linalg.norm(S) for S in b.matrices]
         Sb = sum(S / n for S, n in zip(b.matrices, norms))
      else:
         norms = [1.0]
         Sb = b.matrices[0]
      ev, U = np.linalg.eigh(0.5 * (Sb + Sb.T))
      pen = ev > 1e-10 * ev.max()
      Ir = U.T @ Ib @ U
      Sr = np.diag(np.where(pen, ev, 0.0))
      target = 0.5 * pen.sum()

      def f(r):
         A = Ir + np.exp(r) * Sr
         F = np.linalg.lstsq(A, Ir, rcond=None)[0]
         return np.sum(np.diag(F)[pen]) - target

      lo, hi = -RHO_MAX + 5, RHO_MAX - 5
      flo, fhi = f(lo), f(hi)
      if flo <= 0:
         r0 = lo
      elif fhi >= 0:
         r0 = hi
      else:
         r0 = brentq(f, lo, hi, xtol=1e-8)
      for j, n in zip(b.sp_indices, norms):
         rho[j] = r0 - np.log(n)
   return rho


def _clamp(problem, psi):
   psi = np.array(psi, dtype=float)
   psi[:problem.M] = np.clip(psi[:problem.M], -RHO_MAX, RHO_MAX)
   return psi


def _newton_step(g, H, ret, max_step):
   """Ascent step on the retained components with eigenvalues made positive and floored."""
   step = np.zeros(len(g))
   if ret.any():
      Hr = H[np.ix_(ret, ret)]
      ev, U = np.linalg.eigh(-0.5 * (Hr + Hr.T))
      a = np.abs(ev)
      a = np.maximum(a, 1e-8 * max(a.max(), 1e-300))
      step[ret] = U @ ((U.T @ g[ret]) / a)
   big = np.max(np.abs(step), initial=0.0)
   if big > max_step:
      step *= max_step / big
   return step


def optimize(problem, rho0=None, max_iter=200, tol=1e-6, max_step=5.0, verbose=None):
   """Maximize the criterion; returns ``(FitState, LamlDerivs, OuterTrace, psi)``."""
   M = problem.M
   if rho0 is None:
      rho0 = initial_rho(problem)
   psi = _clamp(problem, problem.psi_of(rho0))
   trace = OuterTrace()
   st, d = problem.derivs(psi)
   q = len(psi)
   if q == 0:
      trace.converged = True
      return st, d, trace, psi
   for it in range(max_iter):
      V, g, H = d.value, d.grad, d.hess
      gmax = np.max(np.abs(g))
      thr = 1e-4 * (1 + abs(V)) * max(1.0, gmax)
      drop = np.zeros(q, dtype=bool)
      drop[:M] = (np.abs(g[:M]) < thr) & (np.abs(np.diag(H)[:M]) < thr)
      # bound-constrained components pushing outwards are inactive
      at_hi = (psi[:M] >= RHO_MAX) & (g[:M] >= 0)
      at_lo = (psi[:M] <= -RHO_MAX) & (g[:M] <= 0)
      drop[:M] |= at_hi | at_lo
      ret = ~drop
      gr = g[ret]
      Hr = H[np.ix_(ret, ret)]
      ev, U = np.linalg.eigh(-0.5 * (Hr + Hr.T)) if ret.any() else (np.zeros(0), None)
      ok_grad = np.all(np.abs(gr) < tol * (1 + abs(V)))
      ok_hess = ev.size == 0 or ev.min() >= -1e-8 * max(abs(ev).max(), 1.0)
      trace.records.append(OuterRecord(psi.copy(), V, float(gmax), list(np.nonzero(drop)[0]), 0))
      if verbose:
         verbose(trace.records[-1])
      if ok_grad and ok_hess:
         # dropped components that still carry a gradient get a full Newton step first
         live = drop & (np.abs(g) >= tol * (1 + abs(V)))
         live[:M] &= ~(at_hi | at_lo)
         if live.any():
            trial = _clamp(problem, psi + _newton_step(g, H, np.ones(q, dtype=bool), max_step))
            for _ in range(30):
               try:
                  Vt = problem.value(trial)
               except RuntimeError:
                  Vt = -np.inf
               if Vt > V:
                  break
               trial = psi + 0.5 * (trial - psi)
            if Vt > V:
               psi = trial
               st, d = problem.derivs(psi)
               continue
         # stationary dropped smoothing parameters with non-negative slope go to working infinity
         up = drop & ~live
         up[M:] = False
         up[:M] &= (g[:M] >= 0) & (psi[:M] < RHO_MAX)
         if up.any():
            trial = psi.copy()
            trial[up] = RHO_MAX
            try:
               Vt = problem.value(trial)
            except RuntimeError:
               Vt = -np.inf
            if Vt >= V:
               psi = trial
               st, d = problem.derivs(psi)
               continue
         trace.converged = True
         break
      step = _newton_step(g, H, ret, max_step)
      accepted = False
      halvings = 0
      for halvings in range(30):
         trial = _clamp(problem, psi + step)
         try:
            Vt = problem.value(trial)
         except RuntimeError:
            Vt = -np.inf
         if Vt >= V:
            accepted = True
            break
         step *= 0.5
      trace.records[-1].halvings = halvings
      if not accepted:
         # cannot increase the criterion from here: accept if close to stationary
         trace.converged = bool(np.all(np.abs(gr) < 1e3 * tol * (1 + abs(V))))
         break
      psi = trial
      st, d = problem.derivs(psi)
   trace.iterations = len(trace.records)
   if not trace.converged and trace.iterations >= max_iter:
      trace.converged = False
   return st, d, trace, psi


def optimize_extended(problem, rho0=None, **kw):
   """Joint optimization over smoothing parameters and free family parameters."""
   if problem.kind != "extended":
      raise ValueError("optimize_extended needs a deviance-based family")
   return optimize(problem, rho0, **kw)
