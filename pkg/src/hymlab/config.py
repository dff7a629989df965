"""Experiment configuration: TOML parsing, validation, object construction.

The config format is declarative TOML with nested sections (no executable
content).  See configs/ at the repository root for the bundled examples;
every acceptance experiment is reproducible from one of them.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import bundle as bd
from . import geometry as gm
from . import hermitian as hm
from .flows import FlowOptions


class ConfigError(ValueError):
    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


@dataclass
class ExperimentConfig:
    geometry: dict
    bundle: dict
    metric: dict = field(default_factory=lambda: {"kind": "identity"})
    flow: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    projectivization: dict = field(default_factory=dict)
    strict: bool = False
    seed: int | None = None
    threads: int = 1

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", where=str(path))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}", where=str(path))
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        for section in ("geometry", "bundle"):
            if section not in raw:
                raise ConfigError(f"missing required [{section}] section",
                                  where=section)
        known = {"geometry", "bundle", "metric", "flow", "output",
                 "projectivization", "strict", "seed", "threads"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown top-level key {key!r}", where=key)
        return cls(
            geometry=dict(raw["geometry"]),
            bundle=dict(raw["bundle"]),
            metric=dict(raw.get("metric", {"kind": "identity"})),
            flow=dict(raw.get("flow", {})),
            output=dict(raw.get("output", {})),
            projectivization=dict(raw.get("projectivization", {})),
            strict=bool(raw.get("strict", False)),
            seed=raw.get("seed"),
            threads=int(raw.get("threads", 1)),
        )


def _require(section, key, where, types=None):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in [{where}]", where=f"{where}.{key}")
    val = section[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(f"[{where}].{key} has wrong type {type(val).__name__}",
                          where=f"{where}.{key}")
    return val


def build_geometry(cfg: ExperimentConfig) -> gm.Geometry:
    sec = cfg.geometry
    kind = _require(sec, "kind", "geometry", str)
    grid = sec.get("grid", [16, 16, 16, 16])
    periods = sec.get("periods", [1.0] * len(grid))
    if not (isinstance(grid, list) and all(isinstance(v, int) for v in grid)):
        raise ConfigError("[geometry].grid must be a list of integers",
                          where="geometry.grid")
    try:
        if kind == "flat_torus":
            return gm.make_flat_torus(grid, periods)
        if kind == "sheared_torus":
            amp = float(sec.get("amplitude", 0.1))
            return gm.make_sheared_gauduchon_torus(grid, periods, amp)
        if kind == "conformal_flat":
            # e^{amplitude sin(2 pi x_axis / L_axis)} distortion of the flat
            # metric: the standard input for the Gauduchon corrector
            amp = float(sec.get("amplitude", 0.2))
            axis = int(sec.get("axis", 0))
            base = gm.make_flat_torus(grid, periods)
            x = base.coords[axis]
            factor = np.exp(amp * np.sin(2 * np.pi * x / base.periods[axis]))
            return gm.conformal_scale(base, factor)
    except gm.GeometryError as exc:
        raise ConfigError(f"geometry construction failed: {exc}", where="geometry")
    raise ConfigError(f"unknown geometry kind {kind!r}", where="geometry.kind")


def _beta_from_config(val, geom):
    # [[re, im], [re, im]] per antiholomorphic direction, or [re, im] shorthand
    arr = np.asarray(val, dtype=float)
    if arr.shape == (2,):
        coeffs = np.array([arr[0] + 1j * arr[1], 0.0], dtype=np.complex128)
    elif arr.shape == (geom.n, 2):
        coeffs = arr[:, 0] + 1j * arr[:, 1]
    else:
        raise ConfigError("[bundle].beta must be [re, im] or one [re, im] "
                          "pair per complex direction", where="bundle.beta")
    return coeffs


def build_bundle(cfg: ExperimentConfig, geom: gm.Geometry,
                 section=None, where="bundle") -> bd.BundleSpec:
    sec = cfg.bundle if section is None else section
    kind = _require(sec, "kind", where, str)
    try:
        if kind == "trivial":
            return bd.trivial_bundle(geom, int(sec.get("rank", 1)))
        if kind == "flat_line":
            hol = sec.get("holonomy", [0.0] * (2 * geom.n))
            return bd.flat_line(geom, [float(t) for t in hol])
        if kind == "flux_line":
            flux = _require(sec, "flux", where)
            return bd.flux_line(geom, flux)
        if kind == "extension":
            beta = _require(sec, "beta", where)
            return bd.extension_bundle(geom, _beta_from_config(beta, geom))
        if kind in ("direct_sum", "tensor"):
            parts = _require(sec, "parts", where, list)
            if len(parts) < 2:
                raise ConfigError(f"[{where}].parts needs at least two entries",
                                  where=f"{where}.parts")
            specs = [build_bundle(cfg, geom, p, f"{where}.parts[{i}]")
                     for i, p in enumerate(parts)]
            out = specs[0]
            combine = bd.direct_sum if kind == "direct_sum" else bd.tensor
            for sp in specs[1:]:
                out = combine(out, sp)
            return out
        if kind in ("dual", "det"):
            inner = _require(sec, "of", where, dict)
            sp = build_bundle(cfg, geom, inner, f"{where}.of")
            return bd.dual(sp) if kind == "dual" else bd.det(sp)
    except bd.BundleError as exc:
        raise ConfigError(f"bundle construction failed: {exc}", where=where)
    raise ConfigError(f"unknown bundle kind {kind!r}", where=f"{where}.kind")


def build_metric(cfg: ExperimentConfig, spec: bd.BundleSpec):
    sec = cfg.metric
    kind = sec.get("kind", "identity")
    try:
        if kind == "identity":
            return hm.identity_metric(spec)
        if kind == "diag":
            return hm.diag_metric(spec, _require(sec, "values", "metric", list))
        if kind == "random_smooth":
            seed = int(sec.get("seed", 0) if cfg.seed is None else cfg.seed)
            return hm.random_smooth_metric(
                spec, seed=seed,
                amplitude=float(sec.get("amplitude", 0.15)),
                kmax=int(sec.get("kmax", 1)))
    except hm.MetricError as exc:
        raise ConfigError(f"metric construction failed: {exc}", where="metric")
    raise ConfigError(f"unknown metric kind {kind!r}", where="metric.kind")


def build_flow_options(cfg: ExperimentConfig, **overrides) -> FlowOptions:
    sec = dict(cfg.flow)
    sec.update(overrides)
    opts = FlowOptions()
    mapping = {
        "dt": float, "t_end": float, "max_steps": int, "sample_stride": int,
        "plateau_tol": float, "plateau_window": float, "energy_slack": float,
        "track_dissipation": bool, "retain_f2_stride": int,
        "retain_f2_max": int, "checkpoint_stride": int,
        "stop_on_plateau": bool, "dt_growth": float, "dt_max": float,
        "imex": bool,
    }
    for key, cast in mapping.items():
        if key in sec:
            setattr(opts, key, cast(sec[key]))
    return opts


def eps_schedule(cfg: ExperimentConfig):
    sched = cfg.flow.get("eps_schedule", [1.0, 0.5, 0.25, 0.125, 0.0625])
    sched = [float(e) for e in sched]
    for e in sched:
        if not (0.0 < e <= 1.0):
            raise ConfigError(f"eps_schedule entries must lie in (0, 1], got {e}",
                              where="flow.eps_schedule")
    return sched
