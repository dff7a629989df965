"""Holomorphic bundles on periodic grids via twisted boundary data.

A bundle is represented relative to a diagonal U(1)^r background
connection: each of the r "sectors" is a line with integer flux
(k_1, k_2) through the two coordinate 2-cycles and constant holonomy
angles (theta_1..theta_4) around the lattice generators.  Sections and
endomorphism fields are stored as ordinary periodic arrays in the
twisted frame; the background absorbs the non-periodicity.

Consequences used throughout:

* the background curvature is the constant diagonal (1,1)-form
  F_bg = 2 pi * diag_i [k_1^i/(L1 L2) dz^1^dzbar^1 + k_2^i/(L3 L4) dz^2^dzbar^2];
* on an endomorphism component (i, l), the background covariant
  derivative is the plain derivative plus the constant connection
  difference of the two sectors.  When the fluxes of i and l differ the
  component is not representable by a periodic field and must vanish
  identically (the component mask).

The holomorphic structure is dbar_E = dbar_bg + a with a periodic
endomorphism-valued (0,1) perturbation obeying the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forms import FormField
from .geometry import Geometry

__all__ = [
    "Sector", "BundleSpec", "BundleError", "ExtensionClass",
    "trivial_bundle", "flat_line", "flux_line", "extension_bundle",
    "dual", "tensor", "direct_sum", "det", "integrability_residual",
]


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class Sector:
    """One U(1) summand of the background: flux integers + holonomy angles."""
    flux: tuple
    holonomy: tuple

    def __post_init__(self):
        object.__setattr__(self, "flux", tuple(int(k) for k in self.flux))
        object.__setattr__(self, "holonomy", tuple(float(t) for t in self.holonomy))


def _conn_shift(sec_i: Sector, sec_l: Sector, geom: Geometry):
    """Constant (1,0)/(0,1) connection coefficients of Hom(L_l, L_i).

    Only meaningful when the fluxes agree (the linear parts of the
    background potentials cancel); returns (shift_hol, shift_antihol),
    complex n-vectors.
    """
    L = geom.periods
    dth = [a - b for a, b in zip(sec_i.holonomy, sec_l.holonomy)]
    # background holonomy potential: A = i sum_j theta_j dx_j / L_j;
    # dx_{2a-1} = (dz^a + dzbar^a)/sqrt2, dx_{2a} = -i (dz^a - dzbar^a)/sqrt2
    hol = np.zeros(geom.n, dtype=np.complex128)
    anti = np.zeros(geom.n, dtype=np.complex128)
    for a in range(geom.n):
        t_odd = dth[2 * a] / L[2 * a]
        t_even = dth[2 * a + 1] / L[2 * a + 1]
        hol[a] = (1j * t_odd + t_even) / np.sqrt(2.0)
        anti[a] = (1j * t_odd - t_even) / np.sqrt(2.0)
    return hol, anti


@dataclass
class BundleSpec:
    geom: Geometry
    sectors: tuple
    a: FormField | None = None  # endomorphism-valued (0,1) perturbation
    name: str = "bundle"

    def __post_init__(self):
        self.sectors = tuple(self.sectors)
        r = self.rank
        n = self.geom.n
        self.mask = np.zeros((r, r), dtype=bool)
        self.shift_hol = np.zeros((r, r, n), dtype=np.complex128)
        self.shift_anti = np.zeros((r, r, n), dtype=np.complex128)
        for i in range(r):
            for l in range(r):
                if self.sectors[i].flux == self.sectors[l].flux:
                    self.mask[i, l] = True
                    sh, sa = _conn_shift(self.sectors[i], self.sectors[l], self.geom)
                    self.shift_hol[i, l] = sh
                    self.shift_anti[i, l] = sa
        if self.a is not None:
            self._check_endo_mask(self.a)

    @property
    def rank(self):
        return len(self.sectors)

    @property
    def flux(self):
        return tuple(int(sum(s.flux[j] for s in self.sectors)) for j in range(len(self.sectors[0].flux)))

    def _check_endo_mask(self, form: FormField, tol=1e-12):
        for (J, K), c in form.comps.items():
            if c.ndim == self.geom.grid_ndim:
                if self.rank != 1:
                    raise BundleError("scalar component on a higher-rank bundle")
                continue
            for i in range(self.rank):
                for l in range(self.rank):
                    if not self.mask[i, l] and c[i, l].size:
                        worst = float(np.max(np.abs(c[i, l])))
                        if worst > tol:
                            raise BundleError(
                                f"endomorphism component ({i},{l}) couples sectors with "
                                f"different flux (magnitude {worst:.3e}); not representable")

    def zero_endo(self):
        r = self.rank
        return np.zeros((r, r) + self.geom.grid_shape, dtype=np.complex128)

    def identity_endo(self):
        e = self.zero_endo()
        for i in range(self.rank):
            e[i, i] = 1.0
        return e

    def a_matrix(self):
        """(0,1) perturbation as an array (n, r, r, grid); zeros if a is None."""
        n = self.geom.n
        out = np.zeros((n, self.rank, self.rank) + self.geom.grid_shape,
                       dtype=np.complex128)
        if self.a is not None:
            for (J, K), c in self.a.comps.items():
                out[K[0]] = out[K[0]] + c
        return out

    def background_curvature_matrix(self):
        """F_bg as array (n, n, r, r, grid); constant diagonal (1,1)-form."""
        n, r = self.geom.n, self.rank
        L = self.geom.periods
        out = np.zeros((n, n, r, r) + self.geom.grid_shape, dtype=np.complex128)
        for i, s in enumerate(self.sectors):
            for a in range(n):
                area = L[2 * a] * L[2 * a + 1]
                out[a, a, i, i] = 2.0 * np.pi * s.flux[a] / area
        return out

    def cocycle_defect(self):
        """Worst deviation of automorphy-factor commutators from the identity.

        Factors are diagonal theta-type: rho_j(x) = exp(i theta_j + i phi_j(x))
        with phi linear; the commutator around the (j,j') plaquette of
        generators is exp(2 pi i k) for integer flux, hence trivial.
        Evaluated numerically on sample points as a structural check.
        """
        L = self.geom.periods
        worst = 0.0
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, size=(8, len(L))) * np.array(L)
        for s in self.sectors:
            for a, k in enumerate(s.flux):
                # shifting by one period in x_{2a} multiplies the factor for
                # generator x_{2a+1} by exp(2 pi i k); closure needs k integer
                j1, j2 = 2 * a, 2 * a + 1
                for x in pts:
                    comm = np.exp(2j * np.pi * k * ((x[j1] + L[j1]) - x[j1]) / L[j1])
                    worst = max(worst, abs(comm - np.exp(2j * np.pi * k)))
        return worst


@dataclass
class ExtensionClass:
    """Scalar dbar-closed (0,1) class defining an extension of the trivial line by itself."""
    beta: FormField
    harmonic: bool = False


def _nyquist_guard(geom: Geometry, flux):
    for a, k in enumerate(flux):
        limit = min(geom.grid_shape[2 * a], geom.grid_shape[2 * a + 1]) // 4
        if abs(int(k)) > limit:
            raise BundleError(
                f"flux {k} along direction {a} exceeds the Nyquist guard "
                f"(|k| <= {limit} at this resolution)")


def trivial_bundle(geom: Geometry, r=1):
    zero = Sector((0,) * geom.n, (0.0,) * (2 * geom.n))
    return BundleSpec(geom, (zero,) * r, None, name=f"trivial_{r}")


def flat_line(geom: Geometry, holonomy):
    holonomy = tuple(float(t) for t in holonomy)
    if len(holonomy) != 2 * geom.n:
        raise BundleError(f"flat_line needs {2 * geom.n} holonomy angles")
    return BundleSpec(geom, (Sector((0,) * geom.n, holonomy),), None,
                      name="flat_line")


def flux_line(geom: Geometry, k):
    """Constant-curvature line bundle with integer flux.

    A scalar k is promoted to the diagonal flux (k, k), which is the
    smallest flux datum whose square pairs nontrivially with the volume.
    """
    if np.isscalar(k):
        k = (int(k),) * geom.n
    k = tuple(int(v) for v in k)
    if len(k) != geom.n:
        raise BundleError(f"flux vector needs {geom.n} entries")
    _nyquist_guard(geom, k)
    return BundleSpec(geom, (Sector(k, (0.0,) * (2 * geom.n)),), None,
                      name=f"flux_line{k}")


def extension_bundle(geom: Geometry, beta, check_tol=1e-10):
    """Rank-2 nilpotent extension 0 -> O -> E -> O -> 0 with class beta.

    beta: scalar (0,1) FormField, or a complex n-vector of constant
    coefficients (the harmonic representatives).
    """
    if isinstance(beta, ExtensionClass):
        beta = beta.beta
    if not isinstance(beta, FormField):
        coeffs = np.asarray(beta, dtype=np.complex128)
        if coeffs.shape != (geom.n,):
            raise BundleError(f"constant extension class needs {geom.n} coefficients")
        comps = {}
        for j in range(geom.n):
            comps[((), (j,))] = np.full(geom.grid_shape, coeffs[j], dtype=np.complex128)
        beta = FormField(geom.n, 0, 1, comps, grid_ndim=geom.grid_ndim)
    closed = geom.d_bar(beta).sup()
    if closed > check_tol:
        raise BundleError(f"extension class is not dbar-closed (residual {closed:.3e})")
    comps = {}
    for (J, K), c in beta.comps.items():
        block = np.zeros((2, 2) + geom.grid_shape, dtype=np.complex128)
        block[0, 1] = c
        comps[(J, K)] = block
    a = FormField(geom.n, 0, 1, comps, grid_ndim=geom.grid_ndim)
    zero = Sector((0,) * geom.n, (0.0,) * (2 * geom.n))
    return BundleSpec(geom, (zero, zero), a, name="extension")


def _map_a(spec: BundleSpec, fn, rank, sectors, name):
    a = None
    if spec.a is not None:
        comps = {k: fn(v) for k, v in spec.a.comps.items()}
        a = FormField(spec.a.n, 0, 1, comps, grid_ndim=spec.a.grid_ndim)
    return BundleSpec(spec.geom, sectors, a, name=name)


def dual(spec: BundleSpec):
    sectors = tuple(Sector(tuple(-k for k in s.flux),
                           tuple(-t for t in s.holonomy)) for s in spec.sectors)
    # dual holomorphic structure: a* = -a^T (plain transpose)
    return _map_a(spec, lambda v: -np.swapaxes(v, 0, 1) if v.ndim > spec.geom.grid_ndim else -v,
                  spec.rank, sectors, f"dual({spec.name})")


def direct_sum(s1: BundleSpec, s2: BundleSpec):
    if s1.geom is not s2.geom:
        raise BundleError("direct_sum needs bundles over the same geometry")
    geom = s1.geom
    r1, r2 = s1.rank, s2.rank
    sectors = s1.sectors + s2.sectors
    keys = set()
    for s in (s1, s2):
        if s.a is not None:
            keys |= set(s.a.comps)
    a = None
    if keys:
        comps = {}
        for key in keys:
            block = np.zeros((r1 + r2, r1 + r2) + geom.grid_shape, dtype=np.complex128)
            for s, off in ((s1, 0), (s2, r1)):
                if s.a is not None and key in s.a.comps:
                    c = s.a.comps[key]
                    if c.ndim == geom.grid_ndim:
                        c = c[None, None]
                    block[off:off + s.rank, off:off + s.rank] = c
            comps[key] = block
        a = FormField(geom.n, 0, 1, comps, grid_ndim=geom.grid_ndim)
    return BundleSpec(geom, sectors, a, name=f"({s1.name})+({s2.name})")


def tensor(s1: BundleSpec, s2: BundleSpec):
    if s1.geom is not s2.geom:
        raise BundleError("tensor needs bundles over the same geometry")
    geom = s1.geom
    r1, r2 = s1.rank, s2.rank
    sectors = tuple(
        Sector(tuple(a + b for a, b in zip(u.flux, v.flux)),
               tuple(a + b for a, b in zip(u.holonomy, v.holonomy)))
        for u in s1.sectors for v in s2.sectors)
    keys = set()
    for s in (s1, s2):
        if s.a is not None:
            keys |= set(s.a.comps)
    a = None
    if keys:
        I1 = np.eye(r1, dtype=np.complex128)
        I2 = np.eye(r2, dtype=np.complex128)
        comps = {}
        for key in keys:
            total = np.zeros((r1 * r2, r1 * r2) + geom.grid_shape, dtype=np.complex128)
            if s1.a is not None and key in s1.a.comps:
                c = s1.a.comps[key]
                if c.ndim == geom.grid_ndim:
                    c = c[None, None]
                total += np.einsum("ab...,cd->acbd...", c, I2).reshape(total.shape)
            if s2.a is not None and key in s2.a.comps:
                c = s2.a.comps[key]
                if c.ndim == geom.grid_ndim:
                    c = c[None, None]
                total += np.einsum("ab,cd...->acbd...", I1, c).reshape(total.shape)
            comps[key] = total
        a = FormField(geom.n, 0, 1, comps, grid_ndim=geom.grid_ndim)
    return BundleSpec(geom, sectors, a, name=f"({s1.name})x({s2.name})")


def det(spec: BundleSpec):
    n = spec.geom.n
    flux = tuple(sum(s.flux[j] for s in spec.sectors) for j in range(n))
    hol = tuple(sum(s.holonomy[j] for s in spec.sectors) for j in range(2 * n))
    a = None
    if spec.a is not None:
        comps = {}
        for key, c in spec.a.comps.items():
            tr = np.einsum("aa...->...", c) if c.ndim > spec.geom.grid_ndim else c
            comps[key] = tr
        a = FormField(spec.a.n, 0, 1, comps, grid_ndim=spec.a.grid_ndim)
        if max(float(np.max(np.abs(v))) for v in a.comps.values()) < 1e-15:
            a = None
    return BundleSpec(spec.geom, (Sector(flux, hol),), a, name=f"det({spec.name})")


def integrability_residual(spec: BundleSpec) -> float:
    """Sup-norm of dbar_bg(a) + a ^ a (holomorphicity of dbar_E)."""
    if spec.a is None:
        return 0.0
    geom = spec.geom
    da = geom.d_bar(spec.a)
    # constant background shifts: (dbar^bg a)_{il} += shift_anti[i,l,k] dzbar^k ^ a_{il}
    shift_form = _shift_wedge_antihol(spec, spec.a)
    total = da + shift_form + spec.a.wedge(spec.a)
    return total.sup()


def _shift_wedge_antihol(spec: BundleSpec, form: FormField) -> FormField:
    """Componentwise wedge with the constant background (0,1) shift."""
    geom = spec.geom
    out = FormField(form.n, form.p, form.q + 1, grid_ndim=form.grid_ndim)
    if not np.any(spec.shift_anti):
        return out
    shift = spec.shift_anti  # (r, r, n)
    for (J, K), c in form.comps.items():
        if c.ndim == geom.grid_ndim:
            continue  # rank-1 shifts vanish (sector difference with itself)
        sp = (-1) ** form.p
        for k in range(geom.n):
            if k in K:
                continue
            pos = sum(1 for i in K if i < k)
            key = (J, K[:pos] + (k,) + K[pos:])
            coef = shift[:, :, k][(...,) + (None,) * geom.grid_ndim]
            out._accum(key, sp * (-1) ** pos * coef * c)
    return out
