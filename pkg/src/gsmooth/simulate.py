"""Simulated data: the four-term Gu and Wahba additive test function and the
random-effect AIC selection experiment.

Generator choices (the shapes are only shown graphically in the literature):

* ``f0 = 2 sin(pi x)``, ``f1 = exp(2 x)``,
  ``f2 = 0.2 x^11 (10 (1 - x))^6 + 10 (10 x)^3 (1 - x)^10``, ``f3 = 0``;
* ``gaussian`` uses the raw sum as the mean with noise sd ``1, 2, 3`` for
  noise levels 1 to 3;
* other families use the standardized sum ``g = (f - c) / s`` (``c`` and ``s``
  the mean and sd of ``f`` under independent uniform covariates) times the
  level's multiplier ``d``, so the intercept is zero on the link scale;
* correlated covariates are ``Phi(z)`` with ``z`` equicorrelated normal
  (correlation 0.9), which keeps uniform margins.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, poisson

from .api import fit

GW_MEAN = None
GW_SD = None

# per-family noise settings for levels 1, 2, 3 (low signal to high signal)
SETTINGS = {
   "gaussian": [{"sd": 3.0}, {"sd": 2.0}, {"sd": 1.0}],
   "poisson": [{"d": 0.3}, {"d": 0.6}, {"d": 1.0}],
   "binomial": [{"d": 0.5}, {"d": 1.0}, {"d": 2.0}],
   "nb": [{"theta": 3.0, "d": 0.12}, {"theta": 3.0, "d": 0.2}, {"theta": 3.0, "d": 0.4}],
   "beta": [{"theta": 0.02}, {"theta": 0.01}, {"theta": 0.001}],
   "ziP": [{"theta": (-2.0, 0.0), "d": 2.0}, {"theta": (-2.0, 0.0), "d": 2.5},
           {"theta": (-2.0, 0.0), "d": 3.0}],
   "ocat": [{"theta": (-1.0, 0.0, 3.0), "d": 0.3}, {"theta": (-1.0, 0.0, 3.0), "d": 1.0},
            {"theta": (-1.0, 0.0, 3.0), "d": 2.0}],
}


def f0(x):
   return 2.0 * np.sin(np.pi * x)


def f1(x):
   return np.exp(2.0 * x)


def f2(x):
   return 0.2 * x**11 * (10.0 * (1.0 - x))**6 + 10.0 * (10.0 * x)**3 * (1.0 - x)**10


def f3(x):
   return np.zeros_like(np.asarray(x, dtype=float))


TERMS = (f0, f1, f2, f3)


def _moments():
   # mean and variance of f0 + f1 + f2 under independent U(0,1) covariates
   global GW_MEAN, GW_SD
   if GW_MEAN is None:
      x, w = np.polynomial.legendre.leggauss(200)
      x, w = 0.5 * (x + 1.0), 0.5 * w
      means = [np.sum(w * f(x)) for f in TERMS]
      vars_ = [np.sum(w * (f(x) - m)**2) for f, m in zip(TERMS, means)]
      GW_MEAN, GW_SD = float(sum(means)), float(np.sqrt(sum(vars_)))
   return GW_MEAN, GW_SD


def covariates(rng, n, correlated=False, rho=0.9):
   """``n x 4`` marginally uniform covariates."""
   if not correlated:
      return rng.uniform(size=(n, 4))
   C = np.full((4, 4), rho) + (1.0 - rho) * np.eye(4)
   z = rng.standard_normal((n, 4)) @ np.linalg.cholesky(C).T
   return norm.cdf(z)


def linear_predictor(x, scale0=1.0):
   """Raw Gu and Wahba sum with ``f0`` multiplied by ``scale0``."""
   return scale0 * f0(x[:, 0]) + f1(x[:, 1]) + f2(x[:, 2]) + f3(x[:, 3])


def _ocat_sample(rng, mu, theta):
   cuts = np.r_[-1.0, -1.0 + np.cumsum(np.exp(theta))]
   u = mu + rng.logistic(size=len(mu))
   return 1.0 + np.sum(u[:, None] > cuts[None, :], axis=1)


def respond(rng, family, f, level):
   """``(eta, y)`` for the named family at noise level 1..3 given the raw sum ``f``."""
   if family not in SETTINGS:
      raise ValueError(f"no simulation settings for family '{family}'")
   if level not in (1, 2, 3):
      raise ValueError("noise level must be 1, 2 or 3")
   s = SETTINGS[family][level - 1]
   n = len(f)
   if family == "gaussian":
      return f, f + rng.normal(0.0, s["sd"], n)
   c, sd = _moments()
   g = (f - c) / sd
   eta = s.get("d", 1.0) * g
   if family == "poisson":
      return eta, rng.poisson(np.exp(eta)).astype(float)
   if family == "binomial":
      return eta, (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
   if family == "nb":
      mu = np.exp(eta)
      k = s["theta"]
      return eta, rng.poisson(rng.gamma(k, mu / k)).astype(float)
   if family == "beta":
      mu = 1.0 / (1.0 + np.exp(-g))
      prec = 1.0 / s["theta"]
      y = rng.beta(mu * prec, (1.0 - mu) * prec)
      return g, np.clip(y, 1e-10, 1 - 1e-10)
   if family == "ziP":
      th = s["theta"]
      lam = np.exp(eta)
      p = -np.expm1(-np.exp(th[0] + np.exp(th[1]) * eta))
      y = np.zeros(n)
      present = rng.uniform(size=n) < p
      # zero-truncated Poisson draws by inversion of the conditional cdf
      u = rng.uniform(size=n)
      y[present] = _ztp(lam[present], u[present])
      return eta, y
   return eta, _ocat_sample(rng, eta, np.asarray(s["theta"], dtype=float))


def _ztp(lam, u):
   """Zero-truncated Poisson quantiles at probabilities ``u``."""
   p0 = np.exp(-lam)
   return poisson.ppf(p0 + u * (1.0 - p0), lam).clip(min=1.0)


def gu_wahba(n, family="gaussian", level=2, seed=0, correlated=False, scale0=1.0):
   """Column dict with ``x0..x3``, ``eta`` and ``y``."""
   rng = np.random.default_rng(seed)
   x = covariates(rng, n, correlated)
   eta, y = respond(rng, family, linear_predictor(x, scale0), level)
   out = {f"x{j}": x[:, j] for j in range(4)}
   out["eta"] = eta
   out["y"] = np.asarray(y, dtype=float)
   return out


# ---------------------------------------------------------------- AIC experiment


@dataclass
class AicOutcome:
   effect: float
   replicates: int
   conventional: float
   corrected: float
   tau1: float
   failures: int = 0


GW_SMOOTHS = [{"var": "x0", "basis": "ps", "k": 10}, {"var": "x1", "basis": "ps", "k": 10},
              {"var": "x2", "basis": "ps", "k": 15}, {"var": "x3", "basis": "ps", "k": 8}]


def random_effect_data(rng, n, sd_effect, noise_sd=2.0, levels=40):
   """Gaussian Gu and Wahba data plus a ``levels``-level random intercept."""
   x = rng.uniform(size=(n, 4))
   group = rng.permutation(np.arange(n) % levels).astype(float)
   b = rng.normal(0.0, sd_effect, levels) if sd_effect > 0 else np.zeros(levels)
   f = linear_predictor(x) + b[group.astype(int)]
   y = f + rng.normal(0.0, noise_sd, n)
   data = {f"x{j}": x[:, j] for j in range(4)}
   data["fac"] = group
   data["y"] = y
   return data


def aic_configs(smooths=None):
   """Smaller and larger model configurations for the random-effect comparison."""
   sm = GW_SMOOTHS if smooths is None else smooths
   # tight outer tolerance so that a shrunk-away random effect reproduces the smaller fit
   opts = {"tol": 1e-8}
   small = {"family": "gaussian", "formulas": [{"response": "y", "smooths": list(sm)}],
            "options": opts}
   large = {"family": "gaussian", "options": opts,
            "formulas": [{"response": "y", "smooths": list(sm) + [{"var": "fac", "basis": "re"}]}]}
   return small, large


def replicate_seed(master, effect_index, rep):
   """Deterministic per-replicate seed derived from the master seed."""
   return np.random.SeedSequence([master, effect_index, rep])


def aic_replicate(seed, sd_effect, n=500, noise_sd=2.0, smooths=None):
   """Selection indicators ``(conventional, corrected, tau1)`` for one replicate."""
   rng = np.random.default_rng(seed)
   data = random_effect_data(rng, n, sd_effect, noise_sd)
   small, large = aic_configs(smooths)
   ms, ml = fit(small, data).result, fit(large, data).result
   return tuple(_prefers(getattr(ml, k), getattr(ms, k)) for k in ("aic", "aic_corrected", "aic_tau1"))


def _prefers(large, small, rel=1e-8):
   # identical fits (random effect shrunk away) count as choosing the smaller model
   return large < small - rel * (1.0 + abs(small))


def aic_experiment(effects=(0.0, 1.0), replicates=100, n=500, noise_sd=2.0, seed=0, workers=1,
                   smooths=None):
   """Selection frequency of the larger model under each criterion, per effect size."""
   out = []
   for e, sd in enumerate(effects):
      seeds = [replicate_seed(seed, e, r) for r in range(replicates)]
      args = [(s, sd, n, noise_sd, smooths) for s in seeds]
      if workers > 1:
         with ProcessPoolExecutor(workers) as ex:
            res = list(ex.map(_safe_replicate, args))
      else:
         res = [_safe_replicate(a) for a in args]
      ok = [r for r in res if r is not None]
      sel = np.array(ok, dtype=float).reshape(-1, 3)
      freq = sel.mean(axis=0) if len(ok) else np.full(3, np.nan)
      out.append(AicOutcome(effect=float(sd), replicates=len(ok), conventional=float(freq[0]),
                            corrected=float(freq[1]), tau1=float(freq[2]),
                            failures=replicates - len(ok)))
   return out


def _safe_replicate(args):
   try:
      return aic_replicate(*args)
   except (RuntimeError, ValueError, np.linalg.LinAlgError):
      return None
