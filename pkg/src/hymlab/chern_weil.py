"""Chern and Segre forms, degrees, slopes, characteristic numbers, the
Bogomolov quantity, and the curvature energy identity.

Normalization: c_1 = (i/2pi) tr F, and generally the c_k are the
coefficients of det(Id + (i t / 2pi) F).  Characteristic numbers pair
against omega powers divided by the usual factorials:

    deg = int c_1 ^ omega^{n-1}/(n-1)!,   lambda = 2 pi deg / (rank Vol).

Degrees and characteristic numbers are only metric-independent when the
geometry is Gauduchon (resp. Astheno-Kahler); computations check the
residual and warn, or raise in strict mode.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .forms import FormField
from .geometry import Geometry, gauduchon_residual
from .bundle import BundleSpec
from . import hermitian as hm

__all__ = [
    "ChernReport", "DegreeError", "chern_forms", "segre_forms",
    "cycle_pairings", "degree", "slope", "lambda_of", "chern_numbers",
    "transgression_check", "bogomolov_quantity", "energy_identity",
    "harmonic_line_metric", "nef_residual",
]

TWO_PI = 2.0 * np.pi


class DegreeError(RuntimeError):
    pass


def _gauduchon_guard(geom: Geometry, strict=False, tol=1e-8):
    rho1, _ = _cached_gauduchon(geom)
    if rho1 > tol:
        msg = (f"Gauduchon residual {rho1:.3e} exceeds {tol:.1e}; "
               "degrees are metric-dependent at this level")
        if strict:
            raise DegreeError(msg)
        warnings.warn(msg, stacklevel=3)
    return rho1


def _cached_gauduchon(geom: Geometry):
    cache = getattr(geom, "_gauduchon_cache", None)
    if cache is None:
        cache = gauduchon_residual(geom)
        object.__setattr__(geom, "_gauduchon_cache", cache)
    return cache


def chern_forms(curv: hm.CurvatureField, kmax=None):
    """[c_0, c_1, ..., c_{min(r,n)}] as scalar FormFields."""
    spec = curv.spec
    geom = spec.geom
    r, n = spec.rank, geom.n
    ktop = min(r, n) if kmax is None else kmax
    Fform = curv.form()
    trF = Fform.trace()
    out = [geom.scalar_form(np.ones(geom.grid_shape))]
    if ktop >= 1:
        out.append(trF.scale(1j / TWO_PI))
    if ktop >= 2:
        trF_wedge_trF = trF.wedge(trF)
        trFF = Fform.wedge(Fform).trace()
        c2 = (trF_wedge_trF - trFF).scale(0.5 * (1j / TWO_PI) ** 2)
        out.append(c2)
    if ktop >= 3:
        raise NotImplementedError("Chern forms beyond k = 2 (surfaces need at most c_2)")
    return out


def segre_forms(c_list, kmax=None):
    """Inverse-series recurrence: s_k + c_1 s_{k-1} + ... + c_k = 0, s_0 = 1."""
    kmax = len(c_list) - 1 if kmax is None else kmax
    s_list = [c_list[0]]
    for k in range(1, kmax + 1):
        acc = None
        for j in range(1, k + 1):
            if j >= len(c_list):
                break
            term = c_list[j].wedge(s_list[k - j]) if k > j else c_list[j]
            acc = term if acc is None else acc + term
        s_list.append(acc.scale(-1.0))
    return s_list


def cycle_pairings(spec: BundleSpec, H):
    """Pairings of c_1 with the normalized coordinate 2-cycle forms.

    Entry a is int c_1 ^ (i dz^b ^ dzbar^b) / area_b over the complementary
    plane b != a; integers (the flux quanta) for any smooth metric.
    """
    geom = spec.geom
    if geom.n != 2:
        raise NotImplementedError("cycle pairings implemented for surfaces")
    curv = hm.curvature(spec, H)
    c1 = chern_forms(curv, kmax=1)[1]
    L = geom.periods
    out = []
    for a in range(2):
        b = 1 - a
        area_b = L[2 * b] * L[2 * b + 1]
        eta = FormField(2, 1, 1, {((b,), (b,)): np.full(geom.grid_shape, 1j / area_b)},
                        grid_ndim=geom.grid_ndim)
        out.append(geom.integrate_form(c1.wedge(eta)).real)
    return tuple(out)


def degree(spec: BundleSpec, H, strict=False):
    geom = spec.geom
    _gauduchon_guard(geom, strict)
    curv = hm.curvature(spec, H)
    c1 = chern_forms(curv, kmax=1)[1]
    wn1 = geom.omega_power(geom.n - 1)
    return geom.integrate_form(c1.wedge(wn1)).real


def slope(spec: BundleSpec, H, strict=False):
    return degree(spec, H, strict) / spec.rank


def lambda_of(spec: BundleSpec, H=None, strict=False):
    if H is None:
        H = hm.identity_metric(spec)
    return TWO_PI * slope(spec, H, strict) / spec.geom.volume


@dataclass
class ChernReport:
    rank: int
    deg: float
    slope: float
    lam: float
    ch1_dot: float
    ch2_dot: float
    c1sq_dot: float
    c2_dot: float
    bogomolov: float
    ch1_vanishes: bool
    ch2_vanishes: bool
    vanish_tol: float
    c_forms: list = field(default_factory=list, repr=False)
    s_forms: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "rank": self.rank, "deg": self.deg, "slope": self.slope,
            "lambda": self.lam, "ch1_dot_omega": self.ch1_dot,
            "ch2_dot_omega": self.ch2_dot, "c1sq_dot_omega": self.c1sq_dot,
            "c2_dot_omega": self.c2_dot, "bogomolov": self.bogomolov,
            "ch1_vanishes": self.ch1_vanishes, "ch2_vanishes": self.ch2_vanishes,
            "vanish_tol": self.vanish_tol,
        }


def chern_numbers(spec: BundleSpec, H, strict=False, vanish_tol=1e-6) -> ChernReport:
    geom = spec.geom
    _gauduchon_guard(geom, strict)
    curv = hm.curvature(spec, H)
    cs = chern_forms(curv)
    ss = segre_forms(cs)
    n = geom.n
    wn1 = geom.omega_power(n - 1)
    wn2 = geom.omega_power(n - 2) if n >= 2 else None
    ch1_dot = geom.integrate_form(cs[1].wedge(wn1)).real
    c1sq = cs[1].wedge(cs[1])
    c1sq_dot = geom.integrate_form(c1sq.wedge(wn2)).real if n > 2 else geom.integrate_form(c1sq).real
    c2_dot = 0.0
    if len(cs) >= 3:
        c2_dot = (geom.integrate_form(cs[2].wedge(wn2)).real if n > 2
                  else geom.integrate_form(cs[2]).real)
    ch2_dot = 0.5 * (c1sq_dot - 2.0 * c2_dot)
    r = spec.rank
    deg = ch1_dot
    mu = deg / r
    lam = TWO_PI * mu / geom.volume
    bogomolov = 4.0 * np.pi ** 2 * (2.0 * c2_dot - (r - 1) / r * c1sq_dot)
    return ChernReport(
        rank=r, deg=deg, slope=mu, lam=lam,
        ch1_dot=ch1_dot, ch2_dot=ch2_dot, c1sq_dot=c1sq_dot, c2_dot=c2_dot,
        bogomolov=bogomolov,
        ch1_vanishes=abs(ch1_dot) < vanish_tol,
        ch2_vanishes=abs(ch2_dot) < vanish_tol,
        vanish_tol=vanish_tol, c_forms=cs, s_forms=ss)


def transgression_check(spec: BundleSpec, H1, H2, strict=False) -> float:
    """Max difference of the four characteristic numbers across two metrics."""
    r1 = chern_numbers(spec, H1, strict)
    r2 = chern_numbers(spec, H2, strict)
    return max(abs(r1.ch1_dot - r2.ch1_dot), abs(r1.ch2_dot - r2.ch2_dot),
               abs(r1.c1sq_dot - r2.c1sq_dot), abs(r1.c2_dot - r2.c2_dot))


@dataclass
class BogomolovRecord:
    quantity: float            # 4 pi^2 (2 c2 - (r-1)/r c1^2) . [omega^{n-2}]/(n-2)!
    perp_energy: float         # int |F_perp|^2 dvol
    perp_mean_energy: float    # int |i Lambda F_perp|^2 dvol
    identity_residual: float   # |quantity - (perp_energy - perp_mean_energy)|

    def to_dict(self):
        return dict(quantity=self.quantity, perp_energy=self.perp_energy,
                    perp_mean_energy=self.perp_mean_energy,
                    identity_residual=self.identity_residual)


def bogomolov_quantity(spec: BundleSpec, H, strict=False) -> BogomolovRecord:
    geom = spec.geom
    _gauduchon_guard(geom, strict)
    curv = hm.curvature(spec, H)
    rep = chern_numbers(spec, H, strict)
    r = spec.rank
    # trace-free part of F, componentwise
    Fp = curv.F.copy()
    trF = np.einsum("jkaa...->jk...", Fp) / r
    for i in range(r):
        Fp[:, :, i, i] -= trF
    perp = hm.CurvatureField(spec=spec, H=curv.H, F=Fp,
                             mean=np.einsum("kj...,jk...->...", geom.metric_inv, Fp))
    e_perp = geom.integrate(perp.norm2_density())
    lam_norm2 = hm.endo_norm_field(perp.mean, curv.H) ** 2
    e_lam = geom.integrate(lam_norm2)
    return BogomolovRecord(
        quantity=rep.bogomolov,
        perp_energy=float(e_perp),
        perp_mean_energy=float(e_lam),
        identity_residual=abs(rep.bogomolov - (e_perp - e_lam)))


@dataclass
class EnergyIdentity:
    lhs: float                 # int |F|^2 dvol
    mean_term: float           # int |i Lambda F - lambda Id|^2 dvol
    ch2_term: float            # -8 pi^2 int ch_2 ^ omega^{n-2}/(n-2)!
    lam_term: float            # lambda^2 rank Vol
    residual: float
    lam: float
    flux0_gap: float           # | int |F|^2 - int |i Lambda F|^2 |

    def to_dict(self):
        return dict(lhs=self.lhs, mean_term=self.mean_term, ch2_term=self.ch2_term,
                    lam_term=self.lam_term, residual=self.residual, lam=self.lam,
                    flux0_gap=self.flux0_gap)


def energy_identity(spec: BundleSpec, H, lam=None, strict=False) -> EnergyIdentity:
    """Chern-Weil energy identity relating curvature energy, the Einstein
    defect, the second Chern character pairing and the lambda term."""
    geom = spec.geom
    rep = chern_numbers(spec, H, strict)
    if lam is None:
        lam = rep.lam
    curv = hm.curvature(spec, H)
    lhs = float(geom.integrate(curv.norm2_density()))
    dev = curv.mean.copy()
    for i in range(spec.rank):
        dev[i, i] -= lam
    mean_term = float(geom.integrate(hm.endo_norm_field(dev, curv.H) ** 2))
    ch2_term = -8.0 * np.pi ** 2 * rep.ch2_dot
    lam_term = lam ** 2 * spec.rank * geom.volume
    residual = abs(lhs - (mean_term + ch2_term + lam_term))
    mean_sq = float(geom.integrate(hm.endo_norm_field(curv.mean, curv.H) ** 2))
    return EnergyIdentity(lhs=lhs, mean_term=mean_term, ch2_term=ch2_term,
                          lam_term=lam_term, residual=residual, lam=lam,
                          flux0_gap=abs(lhs - mean_sq))


def harmonic_line_metric(spec: BundleSpec, h0=None, deg_tol=1e-6):
    """Metric h on a degree-zero line bundle with i Lambda Theta(h) = 0.

    Returns (h, flatness_defect) with flatness_defect = int |Theta(h)|^2 dvol;
    a vanishing defect certifies Hermitian flatness.  Nonzero degree makes
    the equation unsolvable and raises DegreeError.
    """
    geom = spec.geom
    if spec.rank != 1:
        raise ValueError("harmonic_line_metric expects a line bundle")
    if h0 is None:
        h0 = hm.identity_metric(spec)
    deg = degree(spec, h0)
    if abs(deg) > deg_tol * max(1.0, geom.volume):
        raise DegreeError(
            f"harmonic metric needs deg = 0; got deg = {deg:.6e} "
            "(i Lambda Theta = 0 is obstructed)")
    curv = hm.curvature(spec, h0)
    rho = np.real(curv.mean[0, 0])
    u = np.real(geom.solve_scalar(-rho, tol=1e-12))
    h = np.exp(u) * h0
    curv_h = hm.curvature(spec, h)
    defect = float(geom.integrate(curv_h.norm2_density()))
    return h, defect


def _min_eig_2x2(M):
    half_tr = 0.5 * (M[0, 0] + M[1, 1]).real
    half_diff = 0.5 * (M[0, 0] - M[1, 1]).real
    rad = np.sqrt(half_diff ** 2 + (M[0, 1] * M[1, 0]).real)
    return half_tr - rad


def nef_residual(spec: BundleSpec, h, eps) -> float:
    """min over the grid of the smallest eigenvalue of i Theta(h) + eps omega,
    measured against omega.  Nonnegative iff h certifies the eps-nef bound."""
    geom = spec.geom
    if spec.rank != 1:
        raise ValueError("nef_residual expects a line bundle")
    if geom.n != 2:
        raise NotImplementedError("nef_residual implemented for surfaces")
    curv = hm.curvature(spec, h)
    # i Theta = i F; against omega = i g: compare Hermitian coefficient F to g
    P = curv.F[:, :, 0, 0]
    Pon = np.einsum("aj...,jk...,kb...->ab...", geom.metric_isqrt, P,
                    geom.metric_isqrt, optimize=True)
    herm_defect = float(np.max(np.abs(Pon - np.conj(np.swapaxes(Pon, 0, 1)))))
    if herm_defect > 1e-8:
        warnings.warn(f"curvature coefficient not Hermitian ({herm_defect:.2e})")
    return float(np.min(_min_eig_2x2(Pon))) + float(eps)
