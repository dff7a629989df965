"""Hermitian metric fields, Chern curvature, and endomorphism calculus.

Metric fields H are (r, r, grid) arrays, Hermitian positive at every
point, periodic in the twisted frame of their bundle (components that
couple sectors of different flux vanish identically).

Curvature assembly, relative to the diagonal background:

    b[j]    = H^{-1} d^bg_j H - H^{-1} a^dag[j] H          (Chern (1,0) deviation)
    F[j,k]  = F_bg[j,k] - d^bg_kbar b[j] + d^bg_j a[k] + [b[j], a[k]]

where d^bg carries the constant sector-difference connection shifts and
a^dag[j] = conj(a[j])^T.  The mean curvature is i Lambda F; for the
Einstein condition it is compared against lambda * Id in the pointwise
H-Frobenius norm |M|_H^2 = tr(H^{-1} M^dag H M).

Endomorphism transcendental functions go through pointwise spectral
decompositions: closed form for r <= 2 (exact for Hermitian input),
LAPACK eigh above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import FormField
from .geometry import Geometry, SolverError
from .bundle import BundleSpec

__all__ = [
    "MetricError", "CurvatureField",
    "identity_metric", "diag_metric", "random_smooth_metric",
    "herm_fun", "endo_exp", "endo_log", "endo_sqrt", "endo_isqrt",
    "endo_log_rel", "endo_norm", "validate_metric",
    "curvature", "mean_curvature", "he_residual", "trace_normalize",
    "dbar_endo", "dhol_endo", "bianchi_residual",
]


class MetricError(ValueError):
    pass


# -- pointwise Hermitian matrix functions -----------------------------------

def _mat_last(M):
    """(r, r, grid) -> (grid..., r, r) view for LAPACK-style calls."""
    return np.moveaxis(M, (0, 1), (-2, -1))


def _mat_first(M):
    return np.moveaxis(M, (-2, -1), (0, 1))


def herm2_eigvals(M):
    """Stable eigenvalues (lo, hi) of a Hermitian 2x2 stack.

    The smaller-magnitude eigenvalue comes from det / lam_big rather than
    half_tr - rad, avoiding the catastrophic cancellation that plain
    trace/radius formulas suffer at eigenvalue ratios near 1/eps.
    """
    half_tr = 0.5 * (M[0, 0] + M[1, 1]).real
    half_diff = 0.5 * (M[0, 0] - M[1, 1]).real
    rad = np.sqrt(half_diff ** 2 + (M[0, 1] * M[1, 0]).real)
    det = (M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]).real
    lam_big = half_tr + np.where(half_tr >= 0, rad, -rad)
    tiny = np.finfo(np.float64).tiny
    lam_other = np.where(np.abs(lam_big) > tiny,
                         det / np.where(np.abs(lam_big) > tiny, lam_big, 1.0),
                         half_tr - np.where(half_tr >= 0, rad, -rad))
    lo = np.minimum(lam_big, lam_other)
    hi = np.maximum(lam_big, lam_other)
    return lo, hi


def herm_fun(M, fun, dfun=None):
    """Apply a scalar function to a pointwise-Hermitian field (r, r, grid).

    r = 1 and r = 2 use the closed-form spectral decomposition; higher
    rank falls back to numpy.linalg.eigh.
    """
    r = M.shape[0]
    if r == 1:
        return fun(M.real.astype(np.float64)).astype(np.complex128)
    if r == 2:
        lo, hi = herm2_eigvals(M)
        mid = 0.5 * (lo + hi)
        gap = 0.5 * (hi - lo)
        f_hi = fun(hi)
        f_lo = fun(lo)
        u = 0.5 * (f_hi + f_lo)
        v = 0.5 * (f_hi - f_lo)
        tiny = np.finfo(np.float64).tiny
        scale = np.maximum(np.abs(mid), gap)
        degenerate = gap <= 1e-14 * np.maximum(scale, 1.0)
        if dfun is None:
            slope = np.where(degenerate, 0.0,
                             v / np.where(degenerate, 1.0, np.maximum(gap, tiny)))
        else:
            slope = np.where(degenerate, dfun(mid),
                             v / np.where(degenerate, 1.0, np.maximum(gap, tiny)))
        out = np.zeros_like(M)
        out[0, 0] = u + slope * (M[0, 0] - mid)
        out[1, 1] = u + slope * (M[1, 1] - mid)
        out[0, 1] = slope * M[0, 1]
        out[1, 0] = slope * M[1, 0]
        return out
    w, V = np.linalg.eigh(_mat_last(M))
    fw = fun(w)
    out = (V * fw[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return _mat_first(out)


def endo_exp(M):
    return herm_fun(M, np.exp, np.exp)


def _check_positive(M, what="matrix field"):
    r = M.shape[0]
    if r == 1:
        lo, hi = float(M.real.min()), float(M.real.max())
    elif r == 2:
        half_tr = 0.5 * (M[0, 0] + M[1, 1]).real
        half_diff = 0.5 * (M[0, 0] - M[1, 1]).real
        rad = np.sqrt(half_diff ** 2 + (M[0, 1] * M[1, 0]).real)
        lo = float((half_tr - rad).min())
        hi = float((half_tr + rad).max())
    else:
        w = np.linalg.eigvalsh(_mat_last(M))
        lo, hi = float(w.min()), float(w.max())
    if lo <= 1e-12 * max(hi, 1e-300):
        raise MetricError(
            f"{what} is not positive definite "
            f"(min eigenvalue {lo:.6e}, max {hi:.6e})")
    return lo, hi


def endo_log(M):
    _check_positive(M, "endo_log input")
    return herm_fun(M, np.log, lambda x: 1.0 / x)


def endo_sqrt(M):
    _check_positive(M, "endo_sqrt input")
    return herm_fun(M, np.sqrt, lambda x: 0.5 / np.sqrt(x))


def endo_isqrt(M):
    _check_positive(M, "endo_isqrt input")
    return herm_fun(M, lambda x: x ** -0.5, lambda x: -0.5 * x ** -1.5)


def endo_sqrt_pair(M):
    """(sqrt(M), sqrt(M)^{-1}) sharing one spectral decomposition (r <= 2 path)."""
    r = M.shape[0]
    if r == 1:
        s = np.sqrt(M.real).astype(np.complex128)
        return s, 1.0 / s
    if r == 2:
        half_tr = 0.5 * (M[0, 0] + M[1, 1]).real
        half_diff = 0.5 * (M[0, 0] - M[1, 1]).real
        rad = np.sqrt(half_diff ** 2 + (M[0, 1] * M[1, 0]).real)
        out = []
        for fun, dfun in ((np.sqrt, lambda x: 0.5 / np.sqrt(x)),
                          (lambda x: x ** -0.5, lambda x: -0.5 * x ** -1.5)):
            lam_p = fun(half_tr + rad)
            lam_m = fun(half_tr - rad)
            u = 0.5 * (lam_p + lam_m)
            v = 0.5 * (lam_p - lam_m)
            degenerate = rad <= 1e-14 * np.maximum(np.maximum(np.abs(half_tr), rad), 1.0)
            slope = np.where(degenerate, dfun(np.maximum(half_tr, 1e-300)),
                             v / np.where(degenerate, 1.0, np.maximum(rad, 1e-300)))
            R = np.empty_like(M)
            R[0, 0] = u + slope * (M[0, 0] - half_tr)
            R[1, 1] = u + slope * (M[1, 1] - half_tr)
            R[0, 1] = slope * M[0, 1]
            R[1, 0] = slope * M[1, 0]
            out.append(R)
        return out[0], out[1]
    return endo_sqrt(M), endo_isqrt(M)


def _matmul(A, B):
    return np.einsum("ab...,bc...->ac...", A, B)


def endo_log_rel(K, H, K_isqrt=None, K_sqrt=None):
    """log(K^{-1} H) for positive Hermitian K, H (H-self-adjoint output)."""
    if K_isqrt is None:
        K_isqrt = endo_isqrt(K)
    if K_sqrt is None:
        K_sqrt = endo_sqrt(K)
    mid = endo_log(_matmul(K_isqrt, _matmul(H, K_isqrt)))
    return _matmul(K_isqrt, _matmul(mid, K_sqrt))


def herm_inv(M):
    if M.shape[0] == 1:
        return 1.0 / M
    if M.shape[0] == 2:
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        out = np.empty_like(M)
        out[0, 0] = M[1, 1] / det
        out[1, 1] = M[0, 0] / det
        out[0, 1] = -M[0, 1] / det
        out[1, 0] = -M[1, 0] / det
        return out
    return _mat_first(np.linalg.inv(_mat_last(M)))


def endo_norm_field(M, H, Hinv=None):
    """Pointwise |M|_H = sqrt(tr(H^{-1} M^dag H M)) over the grid."""
    if Hinv is None:
        Hinv = herm_inv(H)
    Md = np.conj(np.swapaxes(M, 0, 1))
    P = _matmul(H, M)
    Q = _matmul(Hinv, Md)
    r = M.shape[0]
    val = Q[0, 0] * P[0, 0]
    for i in range(r):
        for k in range(r):
            if i == 0 and k == 0:
                continue
            val = val + Q[i, k] * P[k, i]
    return np.sqrt(np.maximum(val.real, 0.0))


def endo_norm(M, H, kind="sup", geom: Geometry | None = None):
    f = endo_norm_field(M, H)
    if kind == "pointwise":
        return f
    if kind == "sup":
        return float(np.max(f))
    if kind == "l2":
        if geom is None:
            raise ValueError("L2 norm needs the geometry")
        return float(np.sqrt(geom.integrate(f ** 2)))
    raise ValueError(f"unknown norm kind {kind!r}")


# -- metric constructors -------------------------------------------------------

def identity_metric(spec: BundleSpec):
    return spec.identity_endo()


def diag_metric(spec: BundleSpec, values):
    values = [float(v) for v in values]
    if len(values) != spec.rank or min(values) <= 0:
        raise MetricError("diag metric needs one positive value per rank")
    H = spec.zero_endo()
    for i, v in enumerate(values):
        H[i, i] = v
    return H


def _band_limited(geom: Geometry, rng, kmax=2, terms=10):
    hat = np.zeros(geom.grid_shape, dtype=np.complex128)
    for _ in range(terms):
        idx = tuple(int(rng.integers(-kmax, kmax + 1)) % s for s in geom.grid_shape)
        hat[idx] = rng.normal() + 1j * rng.normal()
    f = geom.ifft(hat)
    m = float(np.max(np.abs(f)))
    return f / m if m else f


def random_smooth_metric(spec: BundleSpec, seed=0, amplitude=0.15, kmax=1):
    """H = exp(S) with S a random Hermitian band-limited field on the allowed
    sector components (off-diagonal entries between different-flux sectors
    stay zero).

    Defaults keep exp(S) spectrally resolved on 16^4 grids: curvature
    identities (self-adjointness of the mean curvature, Bianchi) then hold
    to ~1e-9; larger amplitude or bandwidth trades accuracy for roughness.
    """
    geom = spec.geom
    rng = np.random.default_rng(seed)
    r = spec.rank
    S = spec.zero_endo()
    for i in range(r):
        S[i, i] = amplitude * np.real(_band_limited(geom, rng, kmax))
        for l in range(i + 1, r):
            if spec.mask[i, l]:
                c = amplitude * _band_limited(geom, rng, kmax)
                S[i, l] = c
                S[l, i] = np.conj(c)
    return endo_exp(S)


def validate_metric(spec: BundleSpec, H, tol=1e-10):
    H = np.asarray(H, dtype=np.complex128)
    want = (spec.rank, spec.rank) + spec.geom.grid_shape
    if H.shape != want:
        if H.shape == (spec.rank, spec.rank):
            H = np.ascontiguousarray(
                np.broadcast_to(H.reshape(H.shape + (1,) * spec.geom.grid_ndim), want))
        else:
            raise MetricError(f"metric shape {H.shape} does not match {want}")
    herm = float(np.max(np.abs(H - np.conj(np.swapaxes(H, 0, 1)))))
    if herm > tol:
        raise MetricError(f"metric is not Hermitian (defect {herm:.3e})")
    _check_positive(H, "metric")
    for i in range(spec.rank):
        for l in range(spec.rank):
            if not spec.mask[i, l]:
                worst = float(np.max(np.abs(H[i, l])))
                if worst > tol:
                    raise MetricError(
                        f"metric couples sectors of different flux at ({i},{l}) "
                        f"(magnitude {worst:.3e})")
    return H


# -- curvature ---------------------------------------------------------------

@dataclass
class CurvatureField:
    spec: BundleSpec
    H: np.ndarray
    F: np.ndarray        # (n, n, r, r, grid): coefficient of dz^j ^ dzbar^k
    mean: np.ndarray     # (r, r, grid): i Lambda F

    def form(self) -> FormField:
        geom = self.spec.geom
        comps = {}
        for j in range(geom.n):
            for k in range(geom.n):
                comps[((j,), (k,))] = self.F[j, k]
        return FormField(geom.n, 1, 1, comps, grid_ndim=geom.grid_ndim)

    def norm2_density(self, Hinv=None):
        """Pointwise |F|^2 in the H-metric and orthonormal coframe."""
        return f2_density(self.spec, self.H, self.F, Hinv)


def f2_density(spec: BundleSpec, H, F, Hinv=None):
    """|F|^2 density for a (1,1) endo coefficient array (n, n, r, r, grid)."""
    geom = spec.geom
    if Hinv is None:
        Hinv = herm_inv(H)
    if geom.is_flat:
        Fon = F
    else:
        mi = geom.metric_isqrt
        Fon = np.einsum("aj...,jkuv...,kb...->abuv...", mi, F, mi, optimize=True)
    tot = None
    for j in range(geom.n):
        for k in range(geom.n):
            t = endo_norm_field(Fon[j, k], H, Hinv) ** 2
            tot = t if tot is None else tot + t
    return tot


def _shift_apply(shift, comp_axis_vec, X):
    """Componentwise multiply X[i,l] by shift[i,l] (constants); X is (r,r,grid)."""
    return shift[(...,) + (None,) * (X.ndim - 2)] * X


def _adag(a_mat):
    """(n, r, r, grid) (0,1) components -> (1,0) components of the adjoint."""
    return np.conj(np.swapaxes(a_mat, 1, 2))


class StaticCurvatureTerms:
    """Metric-independent curvature pieces, computed once per holomorphic
    structure: base[j,k] = F_bg[j,k] + d^bg_j a[k], its omega-contraction,
    and which directions of a vanish identically."""

    __slots__ = ("a_mat", "adag", "base", "K_base", "a_nonzero")

    def __init__(self, spec: BundleSpec, a_mat=None):
        geom = spec.geom
        n = geom.n
        if a_mat is None:
            a_mat = spec.a_matrix()
        self.a_mat = a_mat
        self.adag = _adag(a_mat)
        base = spec.background_curvature_matrix()
        ah = geom.fft(a_mat)
        any_sh = bool(np.any(spec.shift_hol))
        for j in range(n):
            for k in range(n):
                base[j, k] += geom.dz_hat(ah[k], j)
                if any_sh:
                    base[j, k] += _shift_apply(spec.shift_hol[:, :, j], None, a_mat[k])
        self.base = base
        self.K_base = np.einsum("kj...,jk...->...", geom.metric_inv, base)
        self.a_nonzero = [bool(np.any(a_mat[j])) for j in range(n)]


def static_curvature_terms(spec: BundleSpec, a_mat=None) -> StaticCurvatureTerms:
    return StaticCurvatureTerms(spec, a_mat)


def chern_deviation(spec: BundleSpec, H, Hinv=None, adag=None, a_nonzero=None):
    """b[j] = H^{-1} d^bg_j H - H^{-1} a^dag[j] H, shape (n, r, r, grid)."""
    geom = spec.geom
    if Hinv is None:
        Hinv = herm_inv(H)
    Hh = geom.fft(H)
    n = geom.n
    if adag is None:
        adag = _adag(spec.a_matrix())
    if a_nonzero is None:
        a_nonzero = [bool(np.any(adag[j])) for j in range(n)]
    any_shift = bool(np.any(spec.shift_hol))
    # batched holomorphic derivatives of H
    stack = np.empty((n,) + Hh.shape, dtype=np.complex128)
    for j in range(n):
        stack[j] = geom._mult_dz[j] * Hh
    dH = geom.ifft(stack)
    b = np.empty((n,) + H.shape, dtype=np.complex128)
    for j in range(n):
        t = dH[j]
        if any_shift:
            t = t + _shift_apply(spec.shift_hol[:, :, j], None, H)
        if a_nonzero[j]:
            t = t - _matmul(adag[j], H)
        b[j] = _matmul(Hinv, t)
    return b


def curvature(spec: BundleSpec, H, check=True, static=None) -> CurvatureField:
    """Chern curvature of (H, dbar_E); F for the flat line with a constant
    metric is exactly the constant background flux form."""
    geom = spec.geom
    H = np.asarray(H, dtype=np.complex128)
    if H.shape == (spec.rank, spec.rank):
        H = np.ascontiguousarray(np.broadcast_to(
            H.reshape(H.shape + (1,) * geom.grid_ndim),
            (spec.rank, spec.rank) + geom.grid_shape))
    if check:
        _check_positive(H, "bundle metric")
    Hinv = herm_inv(H)
    if static is None:
        static = static_curvature_terms(spec)
    K, b, F = mean_curvature_fast(spec, H, static, geom.is_flat, Hinv, full=True)
    return CurvatureField(spec=spec, H=H, F=F, mean=K)


def mean_curvature_fast(spec: BundleSpec, H, static: StaticCurvatureTerms,
                        flat_metric, Hinv=None, full=False):
    """i Lambda F without assembling all of F (flow hot path).

    On a flat metric the contraction needs only the diagonal derivative
    combination, done in hat space with a single inverse transform.
    Returns (K, b) or, with full=True, (K, b, F).
    """
    geom = spec.geom
    n = geom.n
    a_mat, adag, base = static.a_mat, static.adag, static.base
    if Hinv is None:
        Hinv = herm_inv(H)
    b = chern_deviation(spec, H, Hinv, adag, static.a_nonzero)
    bh = geom.fft(b)
    any_sa = bool(np.any(spec.shift_anti))
    if flat_metric and not full:
        K = static.K_base.copy()
        acc = geom._mult_dzbar[0] * bh[0]
        for j in range(1, n):
            acc = acc + geom._mult_dzbar[j] * bh[j]
        K = K - geom.ifft(acc)
        for j in range(n):
            if any_sa:
                K = K - _shift_apply(spec.shift_anti[:, :, j], None, b[j])
            if static.a_nonzero[j]:
                K = K + _matmul(b[j], a_mat[j]) - _matmul(a_mat[j], b[j])
        return K, b
    stack = np.empty((n, n) + bh.shape[1:], dtype=np.complex128)
    for j in range(n):
        for k in range(n):
            stack[j, k] = geom._mult_dzbar[k] * bh[j]
    db = geom.ifft(stack)
    F = base.copy()
    for j in range(n):
        for k in range(n):
            term = -db[j, k]
            if any_sa:
                term = term - _shift_apply(spec.shift_anti[:, :, k], None, b[j])
            if static.a_nonzero[k]:
                term = term + _matmul(b[j], a_mat[k]) - _matmul(a_mat[k], b[j])
            F[j, k] = F[j, k] + term
    K = np.einsum("kj...,jk...->...", geom.metric_inv, F)
    if full:
        return K, b, F
    return K, b


def mean_curvature(spec: BundleSpec, H) -> np.ndarray:
    return curvature(spec, H).mean


def he_residual(curv: CurvatureField, lam) -> float:
    """sup_X |i Lambda F - lambda Id|_H."""
    dev = curv.mean.copy()
    for i in range(curv.spec.rank):
        dev[i, i] = dev[i, i] - lam
    return float(np.max(endo_norm_field(dev, curv.H)))


def self_adjointness_defect(curv: CurvatureField) -> float:
    """Pointwise H-self-adjointness of i Lambda F (should be ~0)."""
    H = curv.H
    Hinv = herm_inv(H)
    M = curv.mean
    Mstar = _matmul(Hinv, _matmul(np.conj(np.swapaxes(M, 0, 1)), H))
    return float(np.max(np.abs(M - Mstar)))


def trace_normalize(spec: BundleSpec, H, lam, tol=1e-9):
    """Conformal rescaling e^phi H with tr(i Lambda F - lambda Id) = 0.

    Solvable iff lambda is compatible with the bundle degree; on mismatch
    the obstruction (the volume mean of the trace defect) is reported.
    """
    geom = spec.geom
    curv = curvature(spec, H)
    r = spec.rank
    rhs = lam - np.einsum("aa...->...", curv.mean) / r
    mean = geom.integrate(np.real(rhs)) / geom.volume
    scale = max(float(np.max(np.abs(rhs))), abs(lam), 1e-30)
    if abs(mean) > 1e-6 * max(scale, 1.0):
        raise SolverError(
            "trace normalization obstructed: lambda does not match deg_omega "
            f"(volume mean of the defect = {mean:.6e}; "
            f"expected 0, got 2*pi*deg/(r*Vol) mismatch)")
    phi = geom.solve_scalar(np.real(rhs) - mean, tol=1e-12)
    phi = np.real(phi)
    return np.exp(phi) * H, phi


# -- covariant derivatives on endomorphism fields -------------------------------

def dbar_endo(spec: BundleSpec, H, M, b=None, a_mat=None):
    """(0,1) exterior covariant derivative of an endo field along dbar_E.

    Returns (n, r, r, grid): dbar_k M + shifts + [a[k], M].
    """
    geom = spec.geom
    if a_mat is None:
        a_mat = spec.a_matrix()
    Mh = geom.fft(M)
    out = np.empty((geom.n,) + M.shape, dtype=np.complex128)
    any_sa = bool(np.any(spec.shift_anti))
    for k in range(geom.n):
        t = geom.dzbar_hat(Mh, k)
        if any_sa:
            t = t + _shift_apply(spec.shift_anti[:, :, k], None, M)
        out[k] = t + _matmul(a_mat[k], M) - _matmul(M, a_mat[k])
    return out


def dhol_endo(spec: BundleSpec, H, M, b=None):
    """(1,0) exterior covariant derivative along the Chern connection of (H, dbar_E)."""
    geom = spec.geom
    if b is None:
        b = chern_deviation(spec, H)
    Mh = geom.fft(M)
    out = np.empty((geom.n,) + M.shape, dtype=np.complex128)
    any_sh = bool(np.any(spec.shift_hol))
    for j in range(geom.n):
        t = geom.dz_hat(Mh, j)
        if any_sh:
            t = t + _shift_apply(spec.shift_hol[:, :, j], None, M)
        out[j] = t + _matmul(b[j], M) - _matmul(M, b[j])
    return out


def bianchi_residual(spec: BundleSpec, H, curv: CurvatureField | None = None) -> float:
    """Sup-norm of the exterior covariant derivative of F (both parts)."""
    geom = spec.geom
    if curv is None:
        curv = curvature(spec, H)
    b = chern_deviation(spec, H)
    a_mat = spec.a_matrix()
    n = geom.n
    worst = 0.0
    Fh = geom.fft(curv.F)
    # (1,2) part: dbar^nabla_l F[j,k] antisymmetrized in (k,l)
    for j in range(n):
        for k in range(n):
            for l in range(k + 1, n):
                t = geom.dzbar_hat(Fh[j, k], l) - geom.dzbar_hat(Fh[j, l], k)
                t = t + _matmul(a_mat[l], curv.F[j, k]) - _matmul(curv.F[j, k], a_mat[l])
                t = t - _matmul(a_mat[k], curv.F[j, l]) + _matmul(curv.F[j, l], a_mat[k])
                if np.any(spec.shift_anti):
                    t = t + _shift_apply(spec.shift_anti[:, :, l], None, curv.F[j, k])
                    t = t - _shift_apply(spec.shift_anti[:, :, k], None, curv.F[j, l])
                worst = max(worst, float(np.max(np.abs(t))))
    # (2,1) part: dhol^nabla_m F[j,k] antisymmetrized in (j,m)
    for k in range(n):
        for j in range(n):
            for m in range(j + 1, n):
                t = geom.dz_hat(Fh[j, k], m) - geom.dz_hat(Fh[m, k], j)
                t = t + _matmul(b[m], curv.F[j, k]) - _matmul(curv.F[j, k], b[m])
                t = t - _matmul(b[j], curv.F[m, k]) + _matmul(curv.F[m, k], b[j])
                if np.any(spec.shift_hol):
                    t = t + _shift_apply(spec.shift_hol[:, :, m], None, curv.F[j, k])
                    t = t - _shift_apply(spec.shift_hol[:, :, j], None, curv.F[m, k])
                worst = max(worst, float(np.max(np.abs(t))))
    return worst
