"""Spline bases, penalties, identifiability constraints and model matrices.

Three smoother kinds are available:

* ``cr``: cubic regression spline parameterized by its values at the knots,
  penalized by the integrated squared second derivative;
* ``ps``: cubic B-spline basis on evenly spaced knots with an ``m``-th order
  difference penalty on the coefficients;
* ``re``: simple i.i.d. random effect of a grouping factor (identity penalty).

A smooth in a predictor with an intercept is constrained to sum to zero over
the training data; the constraint is absorbed by a QR based null space basis.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

BASIS_KINDS = ("cr", "ps", "re")


class DesignError(ValueError):
   """Raised for malformed model configurations or unusable covariates."""


@dataclass
class SmoothTerm:
   covariate: str
   basis: str = "cr"
   k: int = 10
   m: int = 2
   centered: bool = True
   predictor: int = 0
   columns: tuple = (0, 0)
   knots: np.ndarray = None
   levels: np.ndarray = None
   constraint: np.ndarray = None

   @property
   def label(self):
      return f"s({self.covariate})" if self.basis != "re" else f"re({self.covariate})"

   @property
   def width(self):
      return self.columns[1] - self.columns[0]


# ---------------------------------------------------------------- cubic regression


def _cr_matrices(knots):
   h = np.diff(knots)
   k = len(knots)
   D = np.zeros((k - 2, k))
   B = np.zeros((k - 2, k - 2))
   for i in range(k - 2):
      D[i, i] = 1.0 / h[i]
      D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
      D[i, i + 2] = 1.0 / h[i + 1]
      B[i, i] = (h[i] + h[i + 1]) / 3.0
      if i < k - 3:
         B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
   return D, B


def cr_penalty(knots):
   """Integrated squared second derivative penalty in the knot-value basis."""
   D, B = _cr_matrices(knots)
   S = D.T @ np.linalg.solve(B, D)
   return 0.5 * (S + S.T)


def cr_basis(x, knots):
   """Evaluate the natural cubic spline basis whose coefficients are knot values.

   Outside the knot range the spline is continued linearly.
   """
   x = np.asarray(x, dtype=float)
   k = len(knots)
   D, B = _cr_matrices(knots)
   F = np.zeros((k, k))
   F[1:-1] = np.linalg.solve(B, D)
   h = np.diff(knots)
   X = np.zeros((len(x), k))
   lo, hi = knots[0], knots[-1]
   inside = (x >= lo) & (x <= hi)
   xi = x[inside]
   j = np.clip(np.searchsorted(knots, xi, side="right") - 1, 0, k - 2)
   hj = h[j]
   am = (knots[j + 1] - xi) / hj
   ap = (xi - knots[j]) / hj
   cm = ((knots[j + 1] - xi) ** 3 / hj - hj * (knots[j + 1] - xi)) / 6.0
   cp = ((xi - knots[j]) ** 3 / hj - hj * (xi - knots[j])) / 6.0
   rows = np.nonzero(inside)[0]
   Xi = cm[:, None] * F[j] + cp[:, None] * F[j + 1]
   Xi[np.arange(len(xi)), j] += am
   Xi[np.arange(len(xi)), j + 1] += ap
   X[rows] = Xi
   # linear continuation beyond the end knots
   below = x < lo
   if np.any(below):
      slope = np.zeros(k)
      slope[0] -= 1.0 / h[0]
      slope[1] += 1.0 / h[0]
      slope += -h[0] / 3.0 * F[0] - h[0] / 6.0 * F[1]
      val = np.zeros(k)
      val[0] = 1.0
      X[below] = val + (x[below] - lo)[:, None] * slope
   above = x > hi
   if np.any(above):
      slope = np.zeros(k)
      slope[k - 2] -= 1.0 / h[-1]
      slope[k - 1] += 1.0 / h[-1]
      slope += h[-1] / 6.0 * F[k - 2] + h[-1] / 3.0 * F[k - 1]
      val = np.zeros(k)
      val[k - 1] = 1.0
      X[above] = val + (x[above] - hi)[:, None] * slope
   return X


def cr_knots(x, k):
   ux = np.unique(x)
   return np.quantile(ux, np.linspace(0.0, 1.0, k))


# ---------------------------------------------------------------- p-splines


def ps_knots(x, k, degree=3):
   lo, hi = float(np.min(x)), float(np.max(x))
   nint = k - degree
   dx = (hi - lo) / nint
   return lo + dx * np.arange(-degree, nint + degree + 1)


def ps_basis(x, knots, degree=3):
   x = np.asarray(x, dtype=float)
   return BSpline.design_matrix(x, knots, degree, extrapolate=True).toarray()


def diff_penalty(k, m):
   """``D^T D`` with ``D`` the ``m``-th order difference operator on ``k`` coefficients."""
   D = np.diff(np.eye(k), n=m, axis=0)
   return D.T @ D


# ---------------------------------------------------------------- random effects


def re_basis(x, levels):
   x = np.asarray(x)
   X = (x[:, None] == levels[None, :]).astype(float)
   return X


# ---------------------------------------------------------------- generic


def penalty_rank(S, tol=1e-10):
   ev = np.linalg.eigvalsh(0.5 * (S + S.T))
   top = max(ev.max(), 0.0)
   if top == 0.0:
      return 0
   return int(np.sum(ev > tol * top))


def _check_covariate(term, x):
   x = np.asarray(x)
   if term.basis == "re":
      return x
   x = np.asarray(x, dtype=float)
   if not np.all(np.isfinite(x)):
      raise DesignError(f"{term.label}: covariate contains non-finite values")
   nd = len(np.unique(x))
   if nd < 2:
      raise DesignError(f"{term.label}: covariate is constant")
   if nd < term.k:
      raise DesignError(f"{term.label}: k={term.k} exceeds the {nd} distinct covariate values")
   return x


def _validate_term(term):
   if term.basis not in BASIS_KINDS:
      raise DesignError(f"{term.label}: unknown basis '{term.basis}'")
   if term.basis == "cr" and term.k < 4:
      raise DesignError(f"{term.label}: cubic regression spline needs k >= 4")
   if term.basis == "ps" and (term.m < 1 or term.k < term.m + 2 or term.k < 4):
      raise DesignError(f"{term.label}: p-spline needs k >= max(4, m + 2)")


def build_basis(term, x):
   """Return ``(term_with_knots, X, S, rank)`` for an unconstrained smooth.

   The returned term carries the knots (or factor levels) needed to evaluate
   the basis at new covariate values.
   """
   _validate_term(term)
   x = _check_covariate(term, x)
   if term.basis == "cr":
      knots = cr_knots(x, term.k)
      X = cr_basis(x, knots)
      S = cr_penalty(knots)
      term = replace(term, knots=knots)
      rank = term.k - 2
   elif term.basis == "ps":
      knots = ps_knots(x, term.k)
      X = ps_basis(x, knots)
      S = diff_penalty(term.k, term.m)
      term = replace(term, knots=knots)
      rank = term.k - term.m
   else:
      levels = np.unique(x)
      X = re_basis(x, levels)
      S = np.eye(len(levels))
      term = replace(term, levels=levels, k=len(levels), centered=False)
      rank = len(levels)
   return term, X, S, rank


def sum_to_zero(X):
   """Null space basis ``Z`` (k x (k-1)) of the column-sum constraint of ``X``."""
   c = X.sum(axis=0)[:, None]
   Q, _ = np.linalg.qr(c, mode="complete")
   return Q[:, 1:]


def apply_centering(X, S):
   """Absorb the sum-to-zero constraint; returns ``(X Z, Z' S Z, Z)``."""
   Z = sum_to_zero(X)
   Sc = Z.T @ S @ Z
   return X @ Z, 0.5 * (Sc + Sc.T), Z


def eval_term(term, x):
   """Constrained basis of a fitted term at (new) covariate values."""
   if term.basis == "cr":
      X = cr_basis(np.asarray(x, dtype=float), term.knots)
   elif term.basis == "ps":
      X = ps_basis(np.asarray(x, dtype=float), term.knots)
   else:
      x = np.asarray(x)
      unknown = ~np.isin(x, term.levels)
      if np.any(unknown):
         raise DesignError(f"{term.label}: unseen level(s) {np.unique(x[unknown])[:5]}")
      X = re_basis(x, term.levels)
   if term.constraint is not None:
      X = X @ term.constraint
   return X


# ---------------------------------------------------------------- Demmler-Reinsch


@dataclass
class DRBasis:
   X: np.ndarray
   eigenvalues: np.ndarray
   transform: np.ndarray
   inverse: np.ndarray


def demmler_reinsch(X, S, name="term"):
   """Normalized Demmler-Reinsch reparameterization of a basis and its penalty.

   With ``X = Q R`` the penalty ``R^-T S R^-1 = U diag(ev) U'`` is diagonalized and
   the new coefficients ``b = T^-1 beta`` use ``T = sqrt(n) R^-1 U`` so the
   transformed design columns have unit mean square over the data, whatever
   the basis size.  Eigenvalues are sorted increasingly.
   """
   n = X.shape[0]
   Q, R = np.linalg.qr(X)
   d = np.abs(np.diag(R))
   if d.min() <= 1e-10 * d.max():
      raise DesignError(f"{name}: basis is rank deficient on the data")
   Ri = np.linalg.inv(R)
   M = Ri.T @ S @ Ri
   ev, U = np.linalg.eigh(0.5 * (M + M.T))
   ev = np.where(ev < 1e-10 * max(ev.max(), 1e-300), 0.0, ev)
   scale = np.sqrt(n)
   T = Ri @ U * scale
   Tinv = U.T @ R / scale
   return DRBasis(X=X @ T, eigenvalues=ev * n, transform=T, inverse=Tinv)


# ---------------------------------------------------------------- assembly


@dataclass
class Predictor:
   intercept: bool = True
   linear: list = field(default_factory=list)
   factors: list = field(default_factory=list)
   smooths: list = field(default_factory=list)
   offset: str = None
   # None follows the intercept; survival predictors centre without an intercept
   center_smooths: bool = None
   # filled at assembly
   factor_levels: dict = field(default_factory=dict)
   param_names: list = field(default_factory=list)


@dataclass
class ModelDesign:
   Xs: list
   offsets: list
   col_ranges: list
   terms: list
   param_names: list
   n_param: list
   predictors: list
   P: int
   y: np.ndarray
   weights: np.ndarray = None
   extra: dict = field(default_factory=dict)

   @property
   def K(self):
      return len(self.Xs)

   def full_matrix(self):
      """Block-diagonal stack of the predictor matrices (n*K x P)."""
      n = self.Xs[0].shape[0]
      out = np.zeros((n * self.K, self.P))
      for a, (X, (c0, c1)) in enumerate(zip(self.Xs, self.col_ranges)):
         out[a * n:(a + 1) * n, c0:c1] = X
      return out


def _parametric_block(pred, data, fitting):
   cols, names = [], []
   n = len(next(iter(data.values())))
   if pred.intercept:
      cols.append(np.ones(n))
      names.append("(Intercept)")
   for v in pred.linear:
      if v not in data:
         raise DesignError(f"unknown column '{v}'")
      cols.append(np.asarray(data[v], dtype=float))
      names.append(v)
   for v in pred.factors:
      if v not in data:
         raise DesignError(f"unknown column '{v}'")
      x = np.asarray(data[v])
      if fitting:
         pred.factor_levels[v] = np.unique(x)
      levels = pred.factor_levels[v]
      start = 1 if pred.intercept else 0
      for lev in levels[start:]:
         cols.append((x == lev).astype(float))
         names.append(f"{v}{lev}")
   if cols:
      return np.column_stack(cols), names
   return np.zeros((n, 0)), names


def assemble_design(predictors, data, response=None, weights=None, extra=None):
   """Build model matrices and penalty blocks for every linear predictor.

   ``predictors`` is a list of :class:`Predictor`; ``data`` maps column names to
   arrays.  Returns ``(ModelDesign, blocks)`` where ``blocks`` is a list of
   ``(offset, S, rank)`` tuples in global coefficient indexing, one per smooth.
   """
   if response is not None and response not in data:
      raise DesignError(f"unknown response column '{response}'")
   n = len(next(iter(data.values())))
   Xs, offsets, ranges, terms, names, nparam, blocks = [], [], [], [], [], [], []
   start = 0
   for a, pred in enumerate(predictors):
      Xp, pnames = _parametric_block(pred, data, True)
      pred.param_names = pnames
      mats = [Xp]
      col = start + Xp.shape[1]
      names += [f"{p}" if a == 0 else f"{p}.{a}" for p in pnames]
      new_terms = []
      for t in pred.smooths:
         if t.covariate not in data:
            raise DesignError(f"unknown column '{t.covariate}'")
         t = replace(t, predictor=a)
         t, X, S, rank = build_basis(t, data[t.covariate])
         center = pred.intercept if pred.center_smooths is None else pred.center_smooths
         if center and t.centered:
            X, S, Z = apply_centering(X, S)
            t = replace(t, constraint=Z)
         else:
            t = replace(t, centered=False)
         t = replace(t, columns=(col, col + X.shape[1]))
         blocks.append((col, S, rank))
         names += [f"{t.label}.{i + 1}" + ("" if a == 0 else f".{a}") for i in range(X.shape[1])]
         col += X.shape[1]
         mats.append(X)
         new_terms.append(t)
      pred.smooths = new_terms
      terms += new_terms
      Xk = np.column_stack(mats) if mats else np.zeros((n, 0))
      Xs.append(Xk)
      ranges.append((start, col))
      nparam.append(Xp.shape[1])
      off = np.zeros(n) if pred.offset is None else np.asarray(data[pred.offset], dtype=float)
      offsets.append(off)
      start = col
   y = None if response is None else np.asarray(data[response], dtype=float)
   w = None if weights is None else np.asarray(data[weights], dtype=float)
   design = ModelDesign(Xs=Xs, offsets=offsets, col_ranges=ranges, terms=terms,
                        param_names=names, n_param=nparam, predictors=predictors,
                        P=start, y=y, weights=w, extra=extra or {})
   return design, blocks


def predict_matrices(design, data):
   """Model matrices for new data using the bases stored in a fitted design."""
   n = len(next(iter(data.values())))
   out, offs = [], []
   for a, pred in enumerate(design.predictors):
      Xp, _ = _parametric_block(pred, data, False)
      mats = [Xp] + [eval_term(t, data[t.covariate]) for t in pred.smooths]
      out.append(np.column_stack(mats) if mats else np.zeros((n, 0)))
      offs.append(np.zeros(n) if pred.offset is None else np.asarray(data[pred.offset], dtype=float))
   return out, offs
