"""Versioned JSON archive of a fitted model.

Arrays are stored as nested lists of Python floats, which ``json`` writes with
shortest round-trip representations, so a loaded model predicts bit-identically
to the one that was saved.
"""

import json
from dataclasses import asdict, fields

import numpy as np

from .api import FittedModel
from .design import Predictor, SmoothTerm
from .families import get_family
from .families.cox import CoxBaseline
from .inference import FitResult
from .outer import OuterRecord, OuterTrace

FORMAT_VERSION = 1


class ArchiveError(ValueError):
   pass


def _enc(v):
   if isinstance(v, np.ndarray):
      return {"__array__": v.tolist(), "dtype": v.dtype.kind}
   if isinstance(v, (np.floating,)):
      return float(v)
   if isinstance(v, (np.integer,)):
      return int(v)
   if isinstance(v, (np.bool_,)):
      return bool(v)
   if isinstance(v, dict):
      return {str(k): _enc(x) for k, x in v.items()}
   if isinstance(v, (list, tuple)):
      return [_enc(x) for x in v]
   return v


def _dec(v):
   if isinstance(v, dict):
      if "__array__" in v:
         dt = {"f": float, "i": np.int64, "b": bool, "u": np.int64}.get(v["dtype"], float)
         return np.array(v["__array__"], dtype=dt)
      return {k: _dec(x) for k, x in v.items()}
   if isinstance(v, list):
      return [_dec(x) for x in v]
   return v


def _predictor(p):
   return {"intercept": p.intercept, "linear": p.linear, "factors": p.factors,
           "offset": p.offset, "center_smooths": p.center_smooths,
           "factor_levels": p.factor_levels, "param_names": p.param_names,
           "smooths": [asdict(t) for t in p.smooths]}


def _trace(tr):
   if tr is None:
      return None
   return {"converged": tr.converged, "iterations": tr.iterations,
           "records": [asdict(r) for r in tr.records]}


def to_dict(model):
   res = {f.name: getattr(model.result, f.name) for f in fields(FitResult) if f.name != "trace"}
   out = {
      "format_version": FORMAT_VERSION,
      "config": model.config,
      "predictors": [_predictor(p) for p in model.predictors],
      "col_ranges": model.col_ranges,
      "param_names": model.param_names,
      "result": res,
      "trace": _trace(model.result.trace),
      "deviance": model.deviance,
      "null_deviance": model.null_deviance,
      "n": model.n,
      "baseline": None if model.baseline is None else asdict(model.baseline),
   }
   return _enc(out)


def save(model, path):
   with open(path, "w") as fh:
      json.dump(to_dict(model), fh, indent=1)
      fh.write("\n")


def from_dict(d):
   ver = d.get("format_version")
   if not isinstance(ver, int):
      raise ArchiveError("not a model archive (format_version missing)")
   if ver > FORMAT_VERSION:
      raise ArchiveError(f"archive format version {ver} is newer than the supported "
                         f"version {FORMAT_VERSION}")
   d = _dec(d)
   cfg = d["config"]
   family = get_family(cfg["family"], **(cfg.get("family_options") or {}))
   preds = []
   for p in d["predictors"]:
      terms = []
      for t in p["smooths"]:
         t = dict(t)
         t["columns"] = tuple(t["columns"])
         terms.append(SmoothTerm(**t))
      preds.append(Predictor(intercept=p["intercept"], linear=p["linear"], factors=p["factors"],
                             smooths=terms, offset=p["offset"],
                             center_smooths=p["center_smooths"],
                             factor_levels=p["factor_levels"], param_names=p["param_names"]))
   tr = d.get("trace")
   trace = None
   if tr is not None:
      trace = OuterTrace(records=[OuterRecord(**r) for r in tr["records"]],
                         converged=tr["converged"], iterations=tr["iterations"])
   res = FitResult(**d["result"], trace=trace)
   base = None if d["baseline"] is None else CoxBaseline(**d["baseline"])
   return FittedModel(config=cfg, family=family, predictors=preds,
                      col_ranges=[tuple(c) for c in d["col_ranges"]],
                      param_names=d["param_names"], result=res, deviance=d["deviance"],
                      null_deviance=d["null_deviance"], n=d["n"], baseline=base,
                      trace=[] if trace is None else trace.records)


def load(path):
   try:
      with open(path) as fh:
         d = json.load(fh)
   except OSError as e:
      raise ArchiveError(f"{path}: {e.strerror}") from None
   except json.JSONDecodeError as e:
      raise ArchiveError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
   return from_dict(d)
