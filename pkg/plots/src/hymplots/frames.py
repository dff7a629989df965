"""Parsed views of hymlab run outputs (trace.csv, summary.json).

The consumers here never import the solver package; the CSV/JSON files
are the interface.
"""

from __future__ import annotations

import csv
import json
import math
import os

REQUIRED_COLUMNS = ("step", "t", "eps", "ym_energy", "sup_F",
                    "he_residual", "min_eig_H", "dt")


class InputError(ValueError):
    pass


class TraceFrame:
    """Columns of a flow trace as named float series."""

    def __init__(self, columns):
        missing = [c for c in REQUIRED_COLUMNS if c not in columns]
        if missing:
            raise InputError(f"trace is missing columns: {', '.join(missing)}")
        self.columns = columns
        eps = columns["eps"]
        self.eps_values = []
        for e in eps:
            if not math.isnan(e) and e not in self.eps_values:
                self.eps_values.append(e)
        for series in self.split_by_eps().values():
            ts = series["t"]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise InputError("trace times are not strictly increasing")

    def __getitem__(self, name):
        return self.columns[name]

    def __len__(self):
        return len(self.columns["t"])

    def split_by_eps(self):
        """{eps (or nan): columns} for stage-concatenated traces."""
        groups = {}
        eps = self.columns["eps"]
        for i, e in enumerate(eps):
            key = "nan" if math.isnan(e) else e
            g = groups.setdefault(key, {c: [] for c in self.columns})
            for c in self.columns:
                g[c].append(self.columns[c][i])
        return groups

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise InputError(f"trace file not found: {path}")
        rows = []
        with open(path, newline="") as fh:
            header = None
            for line in fh:
                if line.startswith("#") or not line.strip():
                    continue
                if header is None:
                    header = [c.strip() for c in line.strip().split(",")]
                    continue
                rows.append(line.strip().split(","))
        if header is None or not rows:
            raise InputError(f"trace file {path} is empty")
        columns = {c: [] for c in header}
        for parts in rows:
            if len(parts) != len(header):
                raise InputError(f"malformed trace row: {parts!r}")
            for c, v in zip(header, parts):
                try:
                    columns[c].append(float(v))
                except ValueError:
                    raise InputError(f"non-numeric value {v!r} in column {c}")
        return cls(columns)


def load_summary(path):
    if not os.path.exists(path):
        raise InputError(f"summary file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"summary is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise InputError("summary must be a JSON object")
    return data
