"""Fiber integration over the projectivized bundle of a rank-2 bundle.

The anti-tautological line over P(E) carries the metric induced by H; its
normalized curvature form Xi is assembled in closed form.  Relative to a
local holomorphic frame of dbar_E = dbar_bg + a the weight is

    phi(x, zeta~) = log( w(zeta~)^dag Ht(x) w(zeta~) ),

where Ht is the metric in that frame and zeta~ the holomorphic fiber
coordinate.  Both reduce to closed expressions in the stored frame: the
derivatives of Ht at a point are covariant combinations of the spectral
derivatives of H with the (0,1) perturbation (the local frame potential
drops out), and the holomorphic coframe is

    dzeta~ = dzeta + c_k(zeta) dzbar^k,
    c_k = a_k[1,0] + (shift_1 - shift_0)_k zeta - a_k[0,1] zeta^2

on the finite chart (mirrored on the chart at infinity).  Only the fiber
quadrature is numerical: each chart covers its closed unit disk with
Gauss-Legendre radial nodes and a uniform angular grid.

Fiber integration of powers of Xi realizes the Segre forms of (E, H),
which segre_checks compares against the inverse-series recurrence from
the Chern forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from .forms import FormField, merge_indices
from .geometry import Geometry
from .bundle import BundleSpec
from . import hermitian as hm
from . import chern_weil as cw

__all__ = ["FiberedGrid", "ProjectivizationError", "build_fibered_grid",
           "fiber_powers", "pushforward", "segre_checks", "segre_check",
           "oe1_metric_change_invariance", "oe1_nef_margin"]

TWO_PI = 2.0 * np.pi
FIBER = 2  # index of the fiber direction on the total space


class ProjectivizationError(ValueError):
    pass


@dataclass
class FiberedGrid:
    spec: BundleSpec
    H: np.ndarray
    fiber_res: int
    zeta: np.ndarray       # fiber nodes on the unit disk, flat (nf,)
    weights: np.ndarray    # quadrature weights including the polar Jacobian
    fiber_volume: float    # quadrature self-test value (should be 1)
    dHt: np.ndarray        # (n, r, r, grid): d_a of the frame metric
    dbHt: np.ndarray       # (n, r, r, grid): d_bbar of the frame metric
    ddHt: np.ndarray       # (n, n, r, r, grid): mixed second derivatives
    a_mat: np.ndarray = dfield(repr=False, default=None)
    chunk: int = 256

    @property
    def geom(self) -> Geometry:
        return self.spec.geom


def _disk_nodes(fiber_res):
    """Gauss-Legendre x uniform-angle nodes on the closed unit disk."""
    nodes, glw = np.polynomial.legendre.leggauss(fiber_res)
    r = 0.5 * (nodes + 1.0)
    wr = 0.5 * glw * r           # polar Jacobian folded into the weight
    phi = (np.arange(fiber_res) + 0.5) * (TWO_PI / fiber_res)
    wphi = TWO_PI / fiber_res
    zeta = (r[:, None] * np.exp(1j * phi)[None, :]).ravel()
    w = (wr[:, None] * np.full((1, fiber_res), wphi)).ravel()
    return zeta, w


def build_fibered_grid(spec: BundleSpec, H, fiber_res=64, chunk=256,
                       voltol=1e-6) -> FiberedGrid:
    """Precompute the frame-metric derivatives and the fiber quadrature.

    Restricted to rank 2 over surfaces with a single flux class (sectors
    of different flux have no constant-coefficient fiber twist).  The
    quadrature must reproduce the Fubini-Study fiber volume 1 within
    voltol or the grid is rejected as under-resolved.
    """
    if spec.rank != 2:
        raise ProjectivizationError(
            f"projectivized fiber integration needs rank 2, got rank {spec.rank}")
    geom = spec.geom
    if geom.n != 2:
        raise ProjectivizationError("base must be a surface (n = 2)")
    if not spec.mask.all():
        raise ProjectivizationError(
            "sectors of different flux are not supported on the "
            "projectivization grid (no global fiber chart)")
    H = hm.validate_metric(spec, np.asarray(H, dtype=np.complex128))
    zeta, w = _disk_nodes(int(fiber_res))
    r2 = np.abs(zeta) ** 2
    vol = 2.0 * float(np.sum(w * (1.0 / np.pi) / (1.0 + r2) ** 2))
    if abs(vol - 1.0) > voltol:
        raise ProjectivizationError(
            f"fiber quadrature under-resolved: FS volume {vol!r} "
            f"deviates from 1 by {abs(vol - 1.0):.3e}")

    n = geom.n
    a_mat = spec.a_matrix()
    adag = np.conj(np.swapaxes(a_mat, 1, 2))
    mm = hm._matmul

    def dhol(X, j):
        out = geom.dz(X, j)
        if np.any(spec.shift_hol):
            out = out + spec.shift_hol[:, :, j][(...,) + (None,) * geom.grid_ndim] * X
        return out

    def dbar(X, k):
        out = geom.dzbar(X, k)
        if np.any(spec.shift_anti):
            out = out + spec.shift_anti[:, :, k][(...,) + (None,) * geom.grid_ndim] * X
        return out

    # frame-metric derivatives at each point (local potential drops out):
    #   d_a Ht    = d^bg_a H - adag_a H            (= H b_a)
    #   d_bbar Ht = d^bg_bbar H - H a_b
    #   d_a d_bbar Ht = d^bg_a d^bg_bbar H - adag_a (d^bg_bbar H)
    #                   - (d^bg_a H) a_b + adag_a H a_b
    #                   - H (d^bg_a a_b) - (d^bg_b a_a)^dag H
    #                   - (1/2) {H, F_bg[a,b]}
    dH = [dhol(H, j) for j in range(n)]
    dbH = [dbar(H, k) for k in range(n)]
    dHt = np.stack([dH[j] - mm(adag[j], H) for j in range(n)])
    dbHt = np.stack([dbH[k] - mm(H, a_mat[k]) for k in range(n)])
    Fbg = spec.background_curvature_matrix()
    ddHt = np.empty((n, n) + H.shape, dtype=np.complex128)
    for a in range(n):
        for b in range(n):
            t = dhol(dbH[b], a)
            t = t - mm(adag[a], dbH[b]) - mm(dH[a], a_mat[b])
            t = t + mm(adag[a], mm(H, a_mat[b]))
            t = t - mm(H, dhol(a_mat[b], a))
            t = t - mm(np.conj(np.swapaxes(dbar(a_mat[a], b), 0, 1)), H)
            t = t - 0.5 * (mm(H, Fbg[a, b]) + mm(Fbg[a, b], H))
            ddHt[a, b] = t
    return FiberedGrid(spec=spec, H=H, fiber_res=int(fiber_res), zeta=zeta,
                       weights=w, fiber_volume=vol, dHt=dHt, dbHt=dbHt,
                       ddHt=ddHt, a_mat=a_mat, chunk=int(chunk))


def _chart_w(chart, z):
    """(w, e): section coordinates and their fiber derivative on the chart."""
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    if chart == 0:
        return (one, z), (zero, one)
    return (z, one), (one, zero)


def _sandwich(M, u, v):
    """u^dag M v for 2-vectors of node fields against (2, 2, base) matrices."""
    pad = (slice(None),) + (None,) * (M.ndim - 2)
    uc = [np.conj(u[0])[pad], np.conj(u[1])[pad]]
    vv = [v[0][pad], v[1][pad]]
    return (uc[0] * (M[0, 0] * vv[0] + M[0, 1] * vv[1])
            + uc[1] * (M[1, 0] * vv[0] + M[1, 1] * vv[1]))


def _xi_matrix(grid: FiberedGrid, chart, z, extra_base=None):
    """Hermitian coefficient matrix of Xi in the holomorphic coframe
    (dz^0, dz^1, dzeta~): shape (3, 3, nb, *base_grid)."""
    H = grid.H
    n = grid.geom.n
    w, e = _chart_w(chart, z)
    S = _sandwich(H, w, w).real
    ve = _sandwich(H, w, e)              # d/dzeta of S
    ev = np.conj(ve)
    ee = _sandwich(H, e, e).real
    nb = z.shape[0]
    M = np.empty((3, 3, nb) + S.shape[1:], dtype=np.complex128)
    dS = [_sandwich(grid.dHt[a], w, w) for a in range(n)]
    dbS = [_sandwich(grid.dbHt[b], w, w) for b in range(n)]
    for a in range(n):
        for b in range(n):
            M[a, b] = (_sandwich(grid.ddHt[a, b], w, w) / S
                       - dS[a] * dbS[b] / S ** 2)
        M[a, FIBER] = (_sandwich(grid.dHt[a], e, w) - dS[a] * ev / S) / S
        M[FIBER, a] = (_sandwich(grid.dbHt[a], w, e) - ve * dbS[a] / S) / S
    M[FIBER, FIBER] = ee / S - ve * ev / S ** 2
    M *= 1.0 / TWO_PI
    if extra_base is not None:
        for a in range(n):
            for b in range(n):
                M[a, b] = M[a, b] + extra_base[a, b]
    return M


def _fiber_twist(grid: FiberedGrid, chart, z):
    """Coefficients c_k of dzeta~ = dzeta + c_k dzbar^k on the chart.

    Derived from the (0,1) part of the connection acting on the section
    coordinates; shape (n, nb, *base_grid) (broadcastable).
    """
    spec = grid.spec
    geom = grid.geom
    n = geom.n
    a_mat = grid.a_mat
    pad = (slice(None),) + (None,) * geom.grid_ndim
    out = []
    for k in range(n):
        delta = spec.shift_anti[1, 0, k]  # background(1) - background(0)
        if chart == 0:
            c = (a_mat[k, 1, 0][None] + delta * z[pad]
                 - a_mat[k, 0, 1][None] * (z ** 2)[pad])
        else:
            c = (a_mat[k, 0, 1][None] - delta * z[pad]
                 - a_mat[k, 1, 0][None] * (z ** 2)[pad])
        out.append(c)
    return out


class _MixedTotal:
    """Sum of total-space FormFields of different bidegrees."""

    def __init__(self):
        self.parts = {}

    def accum(self, J, K, coeff):
        key = (len(J), len(K))
        form = self.parts.get(key)
        if form is None:
            form = FormField(3, key[0], key[1], grid_ndim=coeff.ndim)
            self.parts[key] = form
        form._accum((J, K), coeff)

    def wedge(self, other):
        out = _MixedTotal()
        for fa in self.parts.values():
            for fb in other.parts.values():
                w = fa.wedge(fb)
                if not w.comps:
                    continue
                key = (w.p, w.q)
                if key in out.parts:
                    out.parts[key] = out.parts[key] + w
                else:
                    out.parts[key] = w
        return out


def _xi_total(grid: FiberedGrid, chart, z, extra_base=None) -> _MixedTotal:
    """Xi as a mixed-bidegree form in the naive (dz, dzeta) coframe.

    Xi = i M[A,B] theta^A ^ conj(theta^B) with theta^a = dz^a and
    theta^f = dzeta + c_k dzbar^k; expanding the fiber legs spreads Xi
    over naive bidegrees (2,0), (1,1), (0,2).
    """
    M = _xi_matrix(grid, chart, z, extra_base)
    c = _fiber_twist(grid, chart, z)
    n = grid.geom.n
    shape = M.shape[2:]
    zero_pad = np.zeros(shape, dtype=np.complex128)

    # legs as lists of (J, K, coefficient-or-scalar)
    def hol_leg(A):
        if A < FIBER:
            return [((A,), (), None)]
        legs = [((FIBER,), (), None)]
        for k in range(n):
            legs.append(((), (k,), c[k]))
        return legs

    def anti_leg(B):
        if B < FIBER:
            return [((), (B,), None)]
        legs = [((), (FIBER,), None)]
        for k in range(n):
            legs.append(((k,), (), np.conj(c[k])))
        return legs

    out = _MixedTotal()
    for A in range(3):
        for B in range(3):
            base = 1j * (M[A, B] + zero_pad)
            for (J1, K1, c1) in hol_leg(A):
                for (J2, K2, c2) in anti_leg(B):
                    mj = merge_indices(J1, J2)
                    mk = merge_indices(K1, K2)
                    if mj is None or mk is None:
                        continue
                    J, sj = mj
                    K, sk = mk
                    sign = sj * sk * (-1) ** (len(J2) * len(K1))
                    coeff = sign * base
                    if c1 is not None:
                        coeff = coeff * c1
                    if c2 is not None:
                        coeff = coeff * c2
                    out.accum(J, K, coeff)
    return out


def fiber_powers(grid: FiberedGrid, powers, extra_base=None) -> dict:
    """Fiber integrals of Xi^m for every m in powers, in one sweep.

    Returns {m: {base-bidegree: FormField}}; the type-pure (m-1, m-1)
    entry carries the push-forward (off-type entries are consistency
    residue of the naive frame and stay at round-off).
    """
    geom = grid.geom
    powers = sorted(set(int(m) for m in powers))
    if not powers or powers[0] < 1 or powers[-1] > 3:
        raise ProjectivizationError("powers must be r-1+k with k in {0, 1, 2}")
    out = {m: {} for m in powers}
    nf = grid.zeta.shape[0]
    top = powers[-1]
    for chart in (0, 1):
        for lo in range(0, nf, grid.chunk):
            sl = slice(lo, min(lo + grid.chunk, nf))
            z = grid.zeta[sl]
            wq = grid.weights[sl]
            xi = _xi_total(grid, chart, z, extra_base)
            prod = xi
            for m in range(1, top + 1):
                if m > 1:
                    prod = prod.wedge(xi)
                if m in out:
                    _accumulate_fiber_integral(out[m], prod, wq, geom)
    return {m: {k: f for k, f in parts.items()} for m, parts in out.items()}


def _accumulate_fiber_integral(store: dict, prod: _MixedTotal, wq, geom):
    """Integrate out the fiber (index 2) of a total-space form batch."""
    wslice = wq[(slice(None),) + (None,) * geom.grid_ndim]
    for form in prod.parts.values():
        for (J, K), cval in form.comps.items():
            if FIBER not in J or FIBER not in K:
                continue
            Jb = tuple(i for i in J if i != FIBER)
            Kb = tuple(i for i in K if i != FIBER)
            # fiber index is the largest, so it sits last in each block;
            # moving dzeta right past dzbar^{Kb} gives (-1)^{|Kb|}; the
            # fiber measure is dzeta ^ dzetabar = -2i dA
            sign = (-1) ** len(Kb)
            val = np.sum(cval * wslice, axis=0) * (-2j) * sign
            key = (len(Jb), len(Kb))
            tgt = store.get(key)
            if tgt is None:
                tgt = FormField(geom.n, key[0], key[1], grid_ndim=geom.grid_ndim)
                store[key] = tgt
            tgt._accum((Jb, Kb), val)


def pushforward(grid: FiberedGrid, power, extra_base=None):
    """Fiber integral of Xi^power: (FormField of bidegree (power-1, power-1),
    sup of any off-type residue)."""
    parts = fiber_powers(grid, [power], extra_base)[int(power)]
    m = int(power)
    main = parts.get((m - 1, m - 1))
    if main is None:
        main = FormField(grid.geom.n, m - 1, m - 1, grid_ndim=grid.geom.grid_ndim)
    stray = max((f.sup() for k, f in parts.items() if k != (m - 1, m - 1)),
                default=0.0)
    return main, stray


def _pair_with_omega_power(geom: Geometry, form: FormField, k):
    """int form ^ omega^{2-k}/(2-k)! for a (k,k) base form."""
    if k >= geom.n:
        return geom.integrate_form(form)
    return geom.integrate_form(form.wedge(geom.omega_power(geom.n - k)))


def segre_checks(grid: FiberedGrid, ks=(0, 1, 2)) -> dict:
    """Integrated discrepancies between fiber integrals of Xi^{1+k} and the
    recurrence Segre forms, paired with omega^{2-k}/(2-k)!.

    Off-type residue of the push-forward is folded into the discrepancy.
    """
    for k in ks:
        if k not in (0, 1, 2):
            raise ProjectivizationError("k must be 0, 1 or 2")
    geom = grid.geom
    pushes = fiber_powers(grid, [1 + k for k in ks])
    curv = hm.curvature(grid.spec, grid.H)
    s_forms = cw.segre_forms(cw.chern_forms(curv))
    out = {}
    for k in ks:
        parts = pushes[1 + k]
        main = parts.get((k, k))
        if main is None:
            main = FormField(geom.n, k, k, grid_ndim=geom.grid_ndim)
        stray = max((f.sup() for key, f in parts.items() if key != (k, k)),
                    default=0.0)
        diff = main - s_forms[k]
        out[k] = abs(_pair_with_omega_power(geom, diff, k)) + stray * geom.volume
    return out


def segre_check(grid: FiberedGrid, k) -> float:
    return segre_checks(grid, (k,))[k]


def _total_space_integrals(grid: FiberedGrid, extra_base=None):
    """(int Xi^2 ^ pi* omega, int Xi^3) over the projectivized total space."""
    geom = grid.geom
    pushes = fiber_powers(grid, [2, 3], extra_base)
    p2 = pushes[2].get((1, 1))
    p3 = pushes[3].get((2, 2))
    i2 = geom.integrate_form(p2.wedge(geom.omega())) if p2 is not None else 0.0
    i3 = geom.integrate_form(p3) if p3 is not None else 0.0
    return i2, i3


def oe1_metric_change_invariance(grid: FiberedGrid, log_factor) -> float:
    """Change the induced metric by exp(psi) (psi a base field) and return
    the larger drift of the two total-space pairings that metric changes
    must leave fixed."""
    geom = grid.geom
    psi = np.asarray(log_factor, dtype=np.complex128)
    if psi.shape != geom.grid_shape:
        raise ProjectivizationError("log_factor must be a base scalar field")
    # Theta(h2) - Theta(h1) = dbar d log(h2/h1): Xi-matrix increment
    # (1/2pi) d_a d_bbar psi on the base block
    psih = geom.fft(psi)
    n = geom.n
    extra = np.empty((n, n) + geom.grid_shape, dtype=np.complex128)
    for a in range(n):
        da = geom.dz_hat(psih, a)
        dah = geom.fft(da)
        for b in range(n):
            extra[a, b] = geom.dzbar_hat(dah, b)
    extra = extra[:, :, None] / TWO_PI  # broadcast over fiber nodes
    base = _total_space_integrals(grid)
    moved = _total_space_integrals(grid, extra_base=extra)
    return max(abs(np.real(base[0] - moved[0])), abs(np.real(base[1] - moved[1])))


def oe1_nef_margin(grid: FiberedGrid, eps) -> float:
    """min eigenvalue of i Theta(O(1)) + eps * omega_ref over the total
    space, measured against omega_ref = pi* omega + Fubini-Study fiber form
    in the holomorphic coframe.  Nonnegative output certifies the eps-nef
    bound for the induced metric."""
    geom = grid.geom
    worst = np.inf
    nf = grid.zeta.shape[0]
    for chart in (0, 1):
        for lo in range(0, nf, grid.chunk):
            sl = slice(lo, min(lo + grid.chunk, nf))
            z = grid.zeta[sl]
            M = _xi_matrix(grid, chart, z)
            r2 = (np.abs(z) ** 2)[(slice(None),) + (None,) * geom.grid_ndim]
            nb = z.shape[0]
            R = np.zeros((3, 3, nb) + geom.grid_shape, dtype=np.complex128)
            for a in range(geom.n):
                for b in range(geom.n):
                    R[a, b] = geom.metric[a, b]
            R[FIBER, FIBER] = (1.0 / np.pi) / (1.0 + r2) ** 2
            Rl = np.moveaxis(R, (0, 1), (-2, -1))
            Ml = np.moveaxis(TWO_PI * M, (0, 1), (-2, -1))
            w_ref, V = np.linalg.eigh(Rl)
            isq = (V * w_ref[..., None, :] ** -0.5) @ np.conj(np.swapaxes(V, -1, -2))
            Mon = isq @ Ml @ isq
            eigs = np.linalg.eigvalsh(Mon)
            worst = min(worst, float(eigs.min()))
    return worst + float(eps)
