"""Model configuration, fitting entry point and fitted-model prediction.

A configuration is a plain dict (the JSON model file) of the form::

   {"family": "gaulss", "family_options": {},
    "formulas": [{"response": "accel", "smooths": [{"var": "times", "k": 10}]},
                 {"smooths": [{"var": "times", "k": 10}]}],
    "status": null, "weights": null,
    "options": {"tol": 1e-6, "max_iter": 200}}

Each formula describes one linear predictor: ``intercept`` (default true,
false for ``coxph``), ``linear`` and ``factors`` column lists, ``smooths`` and
an optional ``offset`` column.  Smooth entries take ``var``, ``basis`` (``cr``,
``ps`` or ``re``), ``k`` (required except for ``re``) and ``m``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .design import (DesignError, Predictor, SmoothTerm, assemble_design, eval_term,
                     predict_matrices)
from .families import FAMILIES, cox_baseline, cox_predict, family_kind, get_family
from .families.cox import CoxBaseline, CoxModel
from .inference import build_result, intervals, standard_errors
from .outer import Problem, optimize

FORMULA_KEYS = {"response", "intercept", "linear", "factors", "smooths", "offset"}
SMOOTH_KEYS = {"var", "basis", "k", "m"}
CONFIG_KEYS = {"family", "family_options", "formulas", "status", "weights", "options"}
OPTION_KEYS = {"tol", "max_iter", "seed", "theta", "scale", "fixed_theta", "fixed_scale"}


class ConfigError(ValueError):
   """Malformed model configuration; the message names the offending field."""


def _fail(where, msg):
   raise ConfigError(f"{where}: {msg}")


def check_config(config, columns=None):
   """Validate a configuration dict against the schema (and data columns, if given)."""
   if not isinstance(config, dict):
      _fail("config", "must be a JSON object")
   for key in config:
      if key not in CONFIG_KEYS:
         _fail(key, "unknown field")
   fam = config.get("family")
   if fam not in FAMILIES:
      _fail("family", f"unknown family {fam!r}; choose from {sorted(FAMILIES)}")
   opts = config.get("family_options", {}) or {}
   if not isinstance(opts, dict):
      _fail("family_options", "must be an object")
   try:
      family = get_family(fam, **opts)
   except TypeError as e:
      _fail("family_options", str(e))
   forms = config.get("formulas")
   if not isinstance(forms, list) or not forms:
      _fail("formulas", "must be a non-empty list")
   if len(forms) != family.K:
      _fail("formulas", f"{fam} needs {family.K} formula(s), got {len(forms)}")
   for i, f in enumerate(forms):
      where = f"formulas[{i}]"
      if not isinstance(f, dict):
         _fail(where, "must be an object")
      for key in f:
         if key not in FORMULA_KEYS:
            _fail(f"{where}.{key}", "unknown field")
      if i == 0 and "response" not in f:
         _fail(where, "first formula needs a response")
      if i > 0 and f.get("response") is not None:
         _fail(f"{where}.response", "only the first formula names the response")
      for j, s in enumerate(f.get("smooths", [])):
         sw = f"{where}.smooths[{j}]"
         if not isinstance(s, dict) or "var" not in s:
            _fail(sw, "needs a 'var' field")
         for key in s:
            if key not in SMOOTH_KEYS:
               _fail(f"{sw}.{key}", "unknown field")
         if s.get("basis", "cr") != "re" and "k" not in s:
            _fail(sw, "basis dimension 'k' is required")
         if "k" in s and (not isinstance(s["k"], int) or s["k"] < 1):
            _fail(f"{sw}.k", "must be a positive integer")
      if columns is not None:
         names = ([f["response"]] if i == 0 else []) + list(f.get("linear", [])) + \
            list(f.get("factors", [])) + [s["var"] for s in f.get("smooths", [])] + \
            ([f["offset"]] if f.get("offset") else [])
         for nm in names:
            if nm not in columns:
               _fail(where, f"unknown column {nm!r}")
   if fam == "coxph" and not config.get("status"):
      _fail("status", "coxph needs the event indicator column")
   if columns is not None:
      for key in ("status", "weights"):
         if config.get(key) and config[key] not in columns:
            _fail(key, f"unknown column {config[key]!r}")
   for key in config.get("options", {}) or {}:
      if key not in OPTION_KEYS:
         _fail(f"options.{key}", "unknown field")
   return family


def _predictors(config):
   cox = config["family"] == "coxph"
   preds = []
   for f in config["formulas"]:
      smooths = [SmoothTerm(s["var"], s.get("basis", "cr"), int(s.get("k", 10)), int(s.get("m", 2)))
                 for s in f.get("smooths", [])]
      intercept = bool(f.get("intercept", not cox))
      preds.append(Predictor(intercept=intercept, linear=list(f.get("linear", [])),
                             factors=list(f.get("factors", [])), smooths=smooths,
                             offset=f.get("offset"), center_smooths=True if cox else None))
   return preds


def build_design(config, data):
   """``(family, ModelDesign, blocks)`` for a configuration and a column dict."""
   family = check_config(config, data.keys())
   extra = {}
   if config.get("status"):
      extra["status"] = np.asarray(data[config["status"]], dtype=float)
   design, blocks = assemble_design(_predictors(config), data, config["formulas"][0]["response"],
                                    weights=config.get("weights"), extra=extra)
   return family, design, blocks


@dataclass
class FittedModel:
   """Everything needed to predict and summarize, independent of the training data."""
   config: dict
   family: object
   predictors: list
   col_ranges: list
   param_names: list
   result: object
   deviance: float = None
   null_deviance: float = None
   n: int = 0
   baseline: CoxBaseline = None
   trace: list = field(default_factory=list)

   @property
   def beta(self):
      return self.result.beta

   @property
   def converged(self):
      return self.result.converged

   @property
   def deviance_explained(self):
      if self.deviance is None or not self.null_deviance:
         return None
      return 1.0 - self.deviance / self.null_deviance

   def model_matrices(self, data):
      design = _PredictView(self.predictors)
      return predict_matrices(design, data)

   def linear_predictors(self, data, cov="Vc", se=False):
      """``(eta, se)`` arrays of shape ``n x K`` for new data."""
      Xs, offs = self.model_matrices(data)
      V = getattr(self.result, cov)
      n = len(offs[0])
      eta = np.zeros((n, len(Xs)))
      sd = np.zeros((n, len(Xs)))
      for a, (X, off, (c0, c1)) in enumerate(zip(Xs, offs, self.col_ranges)):
         eta[:, a] = X @ self.beta[c0:c1] + off
         if se:
            sd[:, a] = standard_errors(X, V[c0:c1, c0:c1])
      return eta, (sd if se else None)

   def predict(self, data, type="link", se=False, cov="Vc"):
      """Dict of output columns: ``fit`` (or ``fit.k`` per predictor) and optionally ``se``."""
      kind = family_kind(self.family)
      cox = self.family.name == "coxph"
      if type == "survival":
         if not cox:
            raise ValueError("survival predictions need the coxph family")
         return self._survival(data, se, cov)
      if type not in ("link", "response"):
         raise ValueError(f"unknown prediction type {type!r}")
      eta, sd = self.linear_predictors(data, cov, se)
      if type == "response":
         if kind == "extended":
            lk = self.family.link
            mu = lk.inv(eta[:, 0])
            dmu = 1.0 / lk.derivs(mu)[0]
            eta, sd = mu[:, None], None if sd is None else np.abs(dmu)[:, None] * sd
         elif kind == "gamlss":
            cols = []
            for a, lk in enumerate(self.family.links):
               mu = lk.inv(eta[:, a])
               if sd is not None:
                  sd[:, a] = sd[:, a] / np.abs(lk.derivs(mu)[0])
               cols.append(mu)
            eta = np.column_stack(cols)
         else:
            eta = np.exp(eta)
            if sd is not None:
               sd = eta * sd
      out = {}
      K = eta.shape[1]
      for a in range(K):
         sfx = "" if K == 1 else f".{a}"
         out["fit" + sfx] = eta[:, a]
         if se:
            out["se" + sfx] = sd[:, a]
      return out

   def _survival(self, data, se, cov):
      resp = self.config["formulas"][0]["response"]
      if resp not in data:
         raise DesignError(f"survival prediction needs the time column {resp!r}")
      Xs, offs = self.model_matrices(data)
      eta = Xs[0] @ self.beta + offs[0]
      V = getattr(self.result, cov) if se else None
      S, sd = cox_predict(self.baseline, Xs[0], eta, data[resp], V)
      out = {"fit": S}
      if se:
         out["se"] = sd
      return out

   def bands(self, data, term_label, cov="Vc", level=0.95):
      """Credible band of one smooth term over the covariate values in ``data``."""
      for a, pred in enumerate(self.predictors):
         for t in pred.smooths:
            if t.label + ("" if a == 0 else f".{a}") == term_label:
               X = eval_term(t, data[t.covariate])
               c0, c1 = t.columns
               V = getattr(self.result, cov)[c0:c1, c0:c1]
               return intervals(X, self.beta[c0:c1], V, level)
      raise KeyError(f"no smooth term {term_label!r}")

   def summary(self):
      """Plain-text fit summary."""
      r = self.result
      lines = [f"family: {self.family.name}   n = {self.n}   converged: {r.converged}"]
      if r.theta is not None and len(r.theta):
         lines.append("theta: " + " ".join(f"{v:.6g}" for v in r.theta))
      lines.append(f"{'term':<24}{'edf':>10}")
      for name, v in r.term_edf.items():
         lines.append(f"{name:<24}{v:>10.4f}")
      lines.append(f"edf tau0 = {r.edf0:.4f}   tau1 = {r.edf1:.4f}   tau = {r.edf:.4f}")
      lines.append(f"log likelihood = {r.loglik:.6f}")
      lines.append(f"AIC (conventional) = {r.aic:.4f}   AIC (corrected) = {r.aic_corrected:.4f}")
      lines.append(f"LAML = {r.laml:.6f}")
      de = self.deviance_explained
      if de is not None:
         lines.append(f"deviance explained = {100 * de:.2f}%")
      return "\n".join(lines)


@dataclass
class _PredictView:
   predictors: list


def saturated_deviance(family, y, theta, lo=-30.0, hi=30.0, iters=200):
   """Per-observation minimum of the deviance over the mean.

   Used for families whose deviance is ``-2 l`` (no closed-form saturated
   likelihood).  Bisection on the sign of ``dD/dmu`` over a bracket of the
   linear predictor; without a sign change the better bracket end is taken.
   """
   n = len(y)
   a, b = np.full(n, lo), np.full(n, hi)
   ev = lambda e: family.dev(y, family.link.inv(e), theta, False)
   da, db = ev(a)["Dm"], ev(b)["Dm"]
   root = (da < 0) & (db > 0)
   for _ in range(iters):
      m = 0.5 * (a + b)
      up = ev(m)["Dm"] > 0
      b = np.where(up, m, b)
      a = np.where(up, a, m)
   e = np.where(root, 0.5 * (a + b), lo)
   best = ev(e)["D"]
   if not root.all():
      Dlo, Dhi = ev(np.full(n, lo))["D"], ev(np.full(n, hi))["D"]
      best = np.where(root, best, np.minimum(Dlo, Dhi))
   return best


def _deviances(problem, state):
   """Fitted and intercept-only deviance for deviance-based families."""
   if problem.kind != "extended":
      return None, None
   model, fam = problem.model, problem.family
   y, w = model.y, model.w
   th = model.family_theta
   mu = model.mu(state.beta)
   shift = 0.0
   if getattr(fam, "minus_two_loglik", False):
      shift = float(np.sum(w * saturated_deviance(fam, y, th)))
   D = float(np.sum(w * fam.deviance(y, mu, th))) - shift

   def null(c):
      return float(np.sum(w * fam.deviance(y, np.full(len(y), fam.link.inv(np.array([c]))[0]), th)))

   c0 = float(np.average(fam.link.link(fam.init_mu(y)), weights=w))
   res = minimize_scalar(null, bracket=(c0 - 1.0, c0 + 1.0))
   return D, float(min(res.fun, null(c0))) - shift


def fit_problem(problem, rho0=None, tol=1e-6, max_iter=200, verbose=None):
   """Optimize a :class:`Problem` and assemble its :class:`FitResult`."""
   st, d, trace, psi = optimize(problem, rho0, max_iter=max_iter, tol=tol, verbose=verbose)
   problem.model.set_theta(problem.split(psi)[1])
   return build_result(problem, st, d, psi, trace), st


def fit(config, data, verbose=None):
   """Fit a configuration to a column dict; returns a :class:`FittedModel`."""
   family, design, blocks = build_design(config, data)
   opts = config.get("options", {}) or {}
   theta0 = opts.get("theta")
   phi0 = opts.get("scale")
   problem = Problem(design, blocks, family, theta0=theta0, phi0=phi0,
                     fixed_theta=bool(opts.get("fixed_theta", False)),
                     fixed_scale=bool(opts.get("fixed_scale", False)))
   res, st = fit_problem(problem, tol=float(opts.get("tol", 1e-6)),
                         max_iter=int(opts.get("max_iter", 200)), verbose=verbose)
   D, D0 = _deviances(problem, st)
   base = None
   if family.name == "coxph":
      # baseline in original coordinates so its sensitivity vectors pair with V
      orig = CoxModel(family, design.y, design.extra["status"], design.Xs[0], design.offsets[0],
                      design.P)
      base = cox_baseline(orig, res.beta)
   return FittedModel(config=config, family=family, predictors=design.predictors,
                      col_ranges=design.col_ranges, param_names=design.param_names, result=res,
                      deviance=D, null_deviance=D0, n=len(design.y), baseline=base,
                      trace=[] if res.trace is None else res.trace.records)
