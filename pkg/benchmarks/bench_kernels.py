"""Compiled kernels against the pure-Python fallback.

Run ``python3 benchmarks/bench_kernels.py``; prints best-of-repeat wall times and
the speedup, and checks the two backends agree.
"""

import argparse
import timeit

import numpy as np

from gsmooth import _kernels_py

try:
   from gsmooth import _kernels
except ImportError:
   _kernels = None


def cases(rng):
   out = []
   for p in (20, 60, 150):
      A = rng.standard_normal((p, p + 5))
      A = A @ A.T
      out.append((f"pivoted_cholesky p={p}", "pivoted_cholesky", (A, 0.0)))
      R = np.linalg.cholesky(A).T.copy()
      dA = rng.standard_normal((p, p))
      dA = dA + dA.T
      out.append((f"chol_deriv p={p}", "chol_deriv", (R, dA)))
   for n in (200, 2000):
      y = rng.gamma(2.0, 1.0, n)
      phi = np.full(n, 1.3)
      pw = np.full(n, 1.5)
      out.append((f"tweedie_series n={n}", "tweedie_series", (y, phi, pw, 37.0)))
   return out


def best(fn, args, repeat):
   number = 1
   while timeit.timeit(lambda: fn(*args), number=number) < 0.05 and number < 10**5:
      number *= 4
   return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def agree(a, b):
   a = a if isinstance(a, tuple) else (a,)
   b = b if isinstance(b, tuple) else (b,)
   return max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)), initial=0.0))
              for x, y in zip(a, b))


def main():
   ap = argparse.ArgumentParser()
   ap.add_argument("--repeat", type=int, default=5)
   ap.add_argument("--seed", type=int, default=1)
   args = ap.parse_args()
   if _kernels is None:
      raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
   rng = np.random.default_rng(args.seed)
   print(f"{'kernel':<28}{'cython (us)':>14}{'python (us)':>14}{'speedup':>10}{'max diff':>12}")
   for label, name, a in cases(rng):
      fc, fp = getattr(_kernels, name), getattr(_kernels_py, name)
      diff = agree(fc(*a), fp(*a))
      tc, tp = best(fc, a, args.repeat), best(fp, a, args.repeat)
      print(f"{label:<28}{tc * 1e6:>14.1f}{tp * 1e6:>14.1f}{tp / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
   main()
