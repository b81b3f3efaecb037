"""CSV ingest and output for column tables (dicts of equal-length float arrays)."""

import csv

import numpy as np

MISSING = {"", "na", "nan", "null"}


class DataError(ValueError):
   """Unreadable or malformed data file; the message names file, row and column."""


def read_csv(path):
   """Read a headed CSV of numeric columns.

   Integer-coded factors are read as floats.  Missing values and non-numeric
   entries are rejected with their row numbers (1-based, header is row 1).
   """
   try:
      with open(path, newline="") as fh:
         rows = list(csv.reader(fh))
   except OSError as e:
      raise DataError(f"{path}: {e.strerror}") from None
   rows = [r for r in rows if r]
   if not rows:
      raise DataError(f"{path}: file is empty (no header row)")
   header = [h.strip() for h in rows[0]]
   if len(set(header)) != len(header) or any(h == "" for h in header):
      raise DataError(f"{path}: header has empty or duplicate column names")
   body = rows[1:]
   cols = {h: np.empty(len(body)) for h in header}
   missing = []
   for i, r in enumerate(body):
      line = i + 2
      if len(r) != len(header):
         raise DataError(f"{path}: row {line} has {len(r)} fields, expected {len(header)}")
      for h, v in zip(header, r):
         s = v.strip()
         if s.lower() in MISSING:
            missing.append((line, h))
            continue
         try:
            cols[h][i] = float(s)
         except ValueError:
            raise DataError(f"{path}: row {line}, column '{h}': non-numeric value {s!r}") \
               from None
   if missing:
      where = ", ".join(f"row {ln} column '{h}'" for ln, h in missing[:10])
      more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
      raise DataError(f"{path}: missing values at {where}{more}")
   return cols


def write_csv(path_or_file, columns):
   """Write a dict of equal-length arrays with full round-trip float precision."""
   names = list(columns)
   arrays = [np.asarray(columns[k]) for k in names]
   n = len(arrays[0]) if arrays else 0

   def emit(fh):
      w = csv.writer(fh, lineterminator="\n")
      w.writerow(names)
      for i in range(n):
         w.writerow([repr(float(a[i])) for a in arrays])

   if hasattr(path_or_file, "write"):
      emit(path_or_file)
   else:
      with open(path_or_file, "w", newline="") as fh:
         emit(fh)
