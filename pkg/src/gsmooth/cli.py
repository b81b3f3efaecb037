"""Command-line front end: ``gsmooth fit | predict | simulate | aic-experiment | summary``.

Exit codes: 0 success, 1 malformed input (data, config or archive), 2 the fit did
not converge (the archive is still written, with its optimizer trace).

``GSMOOTH_THREADS`` caps the BLAS thread count (when set before numpy loads) and
is the default worker count of ``aic-experiment``.
"""

import os

THREADS_ENV = "GSMOOTH_THREADS"

if os.environ.get(THREADS_ENV):
   for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
      os.environ.setdefault(_var, os.environ[THREADS_ENV])

import argparse
import json
import sys
from importlib import resources

import numpy as np

from . import archive
from .api import ConfigError, check_config, fit
from .design import DesignError
from .simulate import SETTINGS, aic_experiment, gu_wahba
from .tableio import DataError, read_csv, write_csv

BUILTIN = "builtin:"
GRID = 200


class InputError(Exception):
   pass


def thread_count():
   v = os.environ.get(THREADS_ENV, "")
   try:
      return max(1, int(v))
   except ValueError:
      return 1


def dataset_path(name):
   """Path of a bundled CSV dataset (``mcycle``)."""
   p = resources.files("gsmooth") / "data" / f"{name}.csv"
   if not p.is_file():
      raise InputError(f"no bundled dataset '{name}'")
   return str(p)


def load_data(spec):
   path = dataset_path(spec[len(BUILTIN):]) if spec.startswith(BUILTIN) else spec
   return read_csv(path)


def load_json(path):
   try:
      with open(path) as fh:
         return json.load(fh)
   except OSError as e:
      raise InputError(f"{path}: {e.strerror}") from None
   except json.JSONDecodeError as e:
      raise InputError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") \
         from None


def _emit(columns, out):
   if out in (None, "-"):
      write_csv(sys.stdout, columns)
   else:
      write_csv(out, columns)


def _trace_printer(rec):
   print(f"outer: value={rec.value:.10g} max|grad|={rec.grad_max:.3e} "
         f"dropped={list(map(int, rec.dropped))}", file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_fit(args):
   data = load_data(args.data)
   config = load_json(args.model)
   check_config(config, columns=set(data))
   model = fit(config, data, verbose=_trace_printer if args.verbose else None)
   archive.save(model, args.out)
   print(model.summary())
   if not model.converged:
      print("warning: smoothing parameter optimization did not converge", file=sys.stderr)
      return 2
   return 0


def cmd_predict(args):
   model = archive.load(args.archive)
   data = load_data(args.data)
   cols = model.predict(data, type=args.type, se=args.se, cov=args.cov)
   _emit(cols, args.out)
   return 0


def cmd_simulate(args):
   if args.scenario != "gu-wahba":
      raise InputError(f"unknown scenario '{args.scenario}'")
   cols = gu_wahba(args.n, args.family, args.noise, args.seed, correlated=args.correlated)
   _emit(cols, args.out)
   return 0


def cmd_aic_experiment(args):
   cfg = load_json(args.config) if args.config else {}
   known = {"n", "noise_sd", "smooths", "seed", "effects", "replicates"}
   bad = set(cfg) - known
   if bad:
      raise InputError(f"{args.config}: unknown key(s) {sorted(bad)}")
   effects = cfg.get("effects", [0.0, 1.0])
   if args.effect_grid:
      try:
         effects = [float(v) for v in args.effect_grid.split(",")]
      except ValueError:
         raise InputError(f"--effect-grid: expected comma-separated numbers, got "
                          f"{args.effect_grid!r}") from None
   reps = args.replicates if args.replicates is not None else int(cfg.get("replicates", 100))
   seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
   workers = args.workers if args.workers is not None else thread_count()
   rows = aic_experiment(effects, reps, n=int(cfg.get("n", 500)),
                         noise_sd=float(cfg.get("noise_sd", 2.0)), seed=seed, workers=workers,
                         smooths=cfg.get("smooths"))
   cols = {k: np.array([getattr(r, k) for r in rows], dtype=float)
           for k in ("effect", "replicates", "conventional", "corrected", "tau1", "failures")}
   _emit(cols, args.out)
   return 0


def plot_data(model, data, level=0.95):
   """Per smooth term: a grid over the observed covariate range with fit and band."""
   out = {}
   for a, pred in enumerate(model.predictors):
      for t in pred.smooths:
         if t.basis == "re":
            continue
         x = data[t.covariate]
         grid = np.linspace(np.min(x), np.max(x), GRID)
         label = t.label + ("" if a == 0 else f".{a}")
         f, lo, hi = model.bands({t.covariate: grid}, label, level=level)
         out[label] = {"x": grid, "fit": f, "lower": lo, "upper": hi}
   return out


def cmd_summary(args):
   model = archive.load(args.archive)
   print(model.summary())
   if args.plot_dir:
      if not args.data:
         raise InputError("--plot-dir needs --data for the covariate ranges")
      data = load_data(args.data)
      os.makedirs(args.plot_dir, exist_ok=True)
      for label, cols in plot_data(model, data).items():
         name = label.replace("(", "_").replace(")", "").replace(".", "_")
         write_csv(os.path.join(args.plot_dir, f"{name}.csv"), cols)
   return 0


# ---------------------------------------------------------------- parser


def build_parser():
   p = argparse.ArgumentParser(prog="gsmooth", description="General smooth model fitting.")
   sub = p.add_subparsers(dest="command", required=True)

   f = sub.add_parser("fit", help="fit a model and write an archive")
   f.add_argument("--data", required=True, help="CSV file, or builtin:mcycle")
   f.add_argument("--model", required=True, help="JSON model configuration")
   f.add_argument("--out", required=True, help="archive path")
   f.add_argument("--verbose", action="store_true", help="print the optimizer trace")
   f.set_defaults(run=cmd_fit)

   r = sub.add_parser("predict", help="predict from an archive")
   r.add_argument("--archive", required=True)
   r.add_argument("--data", required=True)
   r.add_argument("--se", action="store_true", help="add standard errors")
   r.add_argument("--type", choices=["link", "response", "survival"], default="link")
   r.add_argument("--cov", choices=["Vc", "Vb", "Vstar"], default="Vc",
                  help="covariance for standard errors (default: corrected)")
   r.add_argument("--out", help="output CSV (default stdout)")
   r.set_defaults(run=cmd_predict)

   s = sub.add_parser("simulate", help="generate simulation data")
   s.add_argument("--scenario", default="gu-wahba")
   s.add_argument("--family", default="gaussian", choices=sorted(SETTINGS))
   s.add_argument("--n", type=int, default=400)
   s.add_argument("--noise", type=int, default=2, choices=[1, 2, 3])
   s.add_argument("--seed", type=int, default=0)
   s.add_argument("--correlated", action="store_true")
   s.add_argument("--out")
   s.set_defaults(run=cmd_simulate)

   e = sub.add_parser("aic-experiment", help="random-effect AIC selection experiment")
   e.add_argument("--config", help="JSON with optional n, noise_sd, smooths, seed, effects, replicates")
   e.add_argument("--replicates", type=int)
   e.add_argument("--effect-grid", help="comma-separated random effect sds, e.g. 0,0.5,1")
   e.add_argument("--seed", type=int)
   e.add_argument("--workers", type=int, help=f"parallel workers (default ${THREADS_ENV} or 1)")
   e.add_argument("--out")
   e.set_defaults(run=cmd_aic_experiment)

   m = sub.add_parser("summary", help="print an archive's summary, optionally emit plot data")
   m.add_argument("--archive", required=True)
   m.add_argument("--data", help="training data, for the plot grid ranges")
   m.add_argument("--plot-dir", help="directory for per-term CSVs of x, fit, lower, upper")
   m.set_defaults(run=cmd_summary)
   return p


def main(argv=None):
   args = build_parser().parse_args(argv)
   try:
      return args.run(args)
   except (InputError, DataError, ConfigError, DesignError, archive.ArchiveError) as e:
      print(f"error: {e}", file=sys.stderr)
      return 1
   except KeyError as e:
      print(f"error: missing field {e}", file=sys.stderr)
      return 1
   except BrokenPipeError:
      # output consumer went away (e.g. piped into head)
      sys.stderr.close()
      return 0


if __name__ == "__main__":
   sys.exit(main())
