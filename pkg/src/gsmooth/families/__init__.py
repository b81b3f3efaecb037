"""Likelihood families, looked up by name through :func:`get_family`."""

from .base import (EtaDerivs, ExtendedFamily, ExtendedModel, FamilyDataError, GamlssFamily,
                   GamlssModel, LinkError, compose, eta_mu_transform, log_derivs)
from .beta import Beta
from .cox import CoxPH, CoxModel, cox_baseline, cox_predict, cox_residuals
from .exponential import Binomial, Gaussian, Poisson
from .gaulss import GauLss
from .nb import NegBin
from .ocat import OCat
from .tweedie import Tweedie
from .zip import ZiP, ZipLss

FAMILIES = {
   "gaussian": Gaussian,
   "poisson": Poisson,
   "binomial": Binomial,
   "nb": NegBin,
   "beta": Beta,
   "tw": Tweedie,
   "ocat": OCat,
   "ziP": ZiP,
   "ziplss": ZipLss,
   "gaulss": GauLss,
   "coxph": CoxPH,
}


def get_family(name, **options):
   """Instantiate a registered family; ``options`` go to its constructor."""
   try:
      cls = FAMILIES[name]
   except KeyError:
      raise ValueError(f"unknown family '{name}'; choose from {sorted(FAMILIES)}") from None
   return cls(**options)


def family_kind(family):
   """``'extended'``, ``'gamlss'`` or ``'general'`` fitting tier."""
   if isinstance(family, ExtendedFamily):
      return "extended"
   if isinstance(family, GamlssFamily):
      return "gamlss"
   return "general"


__all__ = ["FAMILIES", "get_family", "family_kind", "Gaussian", "Poisson", "Binomial", "NegBin",
           "Beta", "Tweedie", "OCat", "ZiP", "ZipLss", "GauLss", "CoxPH", "CoxModel",
           "cox_baseline", "cox_predict", "cox_residuals", "EtaDerivs", "ExtendedFamily",
           "ExtendedModel", "GamlssFamily", "GamlssModel", "FamilyDataError", "LinkError",
           "compose", "eta_mu_transform", "log_derivs"]
