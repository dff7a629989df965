"""Discretized compact Hermitian surfaces on periodic grids.

Conventions (fixed once, used everywhere):

* Real coordinates x_1..x_{2n} with periods L_1..L_{2n}; complex
  coordinates z^a = (x_{2a-1} + i x_{2a}) / sqrt(2), so
  dz^a = (dx_{2a-1} + i dx_{2a}) / sqrt(2) and
  i dz^a ^ dzbar^a = dx_{2a-1} ^ dx_{2a}.
* Metric form omega = i g_{j kbar} dz^j ^ dzbar^k with Hermitian
  positive g; the flat metric has g = Id, hence
  omega^n / n! = det(g) dx^{2n} and Vol = prod(L_j) for g = Id.
* d/dz^a = (d_{2a-1} - i d_{2a}) / sqrt(2), realized spectrally.
  Nyquist rows are zeroed in the multipliers, so derivatives are exact
  on resolved Fourier modes only.
* Contraction of a (1,1)-form with coefficient matrix A is
  Lambda(alpha) = -i tr(g^{-1} A); Lambda(omega) = n.
* Pointwise norms use the orthonormal coframe: (1,1) coefficients
  transform as A -> g^{-1/2} A g^{-1/2}, (1,0) components contract with
  g^{-1/2}, then flat formulas apply.  |omega|^2 = n.

Geometry objects are immutable after construction; field operations are
pure.  Reductions go through numpy's pairwise summation on contiguous
buffers, so integrals are deterministic run to run.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft

from .forms import FormField, MixedForm

__all__ = [
    "Geometry", "GeometryError", "SolverError", "set_fft_workers",
    "make_flat_torus", "make_sheared_gauduchon_torus", "conformal_scale",
    "gauduchon_residual", "kahler_residual", "gauduchon_correct", "contract",
]

_FFT_WORKERS = 1


def set_fft_workers(n):
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


class GeometryError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = list(residuals or [])


class Geometry:
    """Periodic grid + Hermitian metric + spectral calculus. Immutable."""

    def __init__(self, grid_shape, periods, metric):
        grid_shape = tuple(int(m) for m in grid_shape)
        periods = tuple(float(p) for p in periods)
        if len(grid_shape) % 2:
            raise GeometryError("grid_shape needs 2n entries")
        self.n = len(grid_shape) // 2
        for m in grid_shape:
            if m < 8 or m % 2:
                raise GeometryError(
                    f"grid_shape entries must be even and >= 8, got {m}")
        if len(periods) != len(grid_shape):
            raise GeometryError("periods must match grid_shape length")
        for p in periods:
            if not np.isfinite(p) or p <= 0:
                raise GeometryError(
                    f"degenerate lattice: period {p} is not a positive real")
        self.grid_shape = grid_shape
        self.periods = periods
        self.cell_volume = float(np.prod([p / m for p, m in zip(periods, grid_shape)]))

        metric = np.asarray(metric, dtype=np.complex128)
        want = (self.n, self.n) + grid_shape
        if metric.shape != want:
            pad = metric.reshape(metric.shape + (1,) * (len(want) - metric.ndim))
            metric = np.ascontiguousarray(np.broadcast_to(pad, want))
        self.metric = metric

        pointwise = np.ascontiguousarray(np.moveaxis(metric, (0, 1), (-2, -1)))
        herm_defect = float(np.max(np.abs(
            pointwise - np.conj(np.swapaxes(pointwise, -1, -2)))))
        if herm_defect > 1e-10:
            raise GeometryError(f"metric is not Hermitian (defect {herm_defect:.3e})")
        eigvals, eigvecs = np.linalg.eigh(pointwise)
        self.min_metric_eigenvalue = float(eigvals.min())
        if self.min_metric_eigenvalue <= 0:
            raise GeometryError(
                "metric is not positive definite "
                f"(worst eigenvalue {self.min_metric_eigenvalue:.6e})")
        self.metric_inv = np.moveaxis(np.linalg.inv(pointwise), (-2, -1), (0, 1)).copy()
        isq = (eigvecs * (eigvals[..., None, :] ** -0.5)) \
            @ np.conj(np.swapaxes(eigvecs, -1, -2))
        self.metric_isqrt = np.moveaxis(isq, (-2, -1), (0, 1)).copy()

        det = np.linalg.det(pointwise)
        self.volume_density = np.ascontiguousarray(det.real)
        self.volume = float(np.sum(self.volume_density)) * self.cell_volume

        freqs = []
        for m, p in zip(grid_shape, periods):
            k = 2.0 * np.pi * np.fft.fftfreq(m, d=p / m)
            k[m // 2] = 0.0
            freqs.append(k)
        mesh = np.meshgrid(*freqs, indexing="ij")
        self._mult_dz = []
        self._mult_dzbar = []
        for a in range(self.n):
            kt = (mesh[2 * a] - 1j * mesh[2 * a + 1]) / np.sqrt(2.0)
            self._mult_dz.append(1j * kt)
            self._mult_dzbar.append(1j * np.conj(kt))
        # flat symbol of u -> i Lambda(dbar d u), used as elliptic preconditioner
        self._lap_symbol = sum(np.abs(k) ** 2 for k in self._mult_dz)

        coords = [np.arange(m) * (p / m) for m, p in zip(grid_shape, periods)]
        self.coords = np.meshgrid(*coords, indexing="ij")
        eye = np.eye(self.n, dtype=np.complex128).reshape(
            (self.n, self.n) + (1,) * len(grid_shape))
        self.is_flat = bool(np.all(self.metric == eye))
        for arr in (self.metric, self.metric_inv, self.metric_isqrt,
                    self.volume_density):
            arr.setflags(write=False)

    # -- spectral calculus ------------------------------------------------

    @property
    def grid_ndim(self):
        return 2 * self.n

    def fft(self, x):
        axes = tuple(range(-2 * self.n, 0))
        return sfft.fftn(x, axes=axes, workers=_FFT_WORKERS)

    def ifft(self, xh):
        axes = tuple(range(-2 * self.n, 0))
        return sfft.ifftn(xh, axes=axes, workers=_FFT_WORKERS)

    def dz_hat(self, xh, a):
        return self.ifft(self._mult_dz[a] * xh)

    def dzbar_hat(self, xh, a):
        return self.ifft(self._mult_dzbar[a] * xh)

    def dz(self, x, a):
        return self.dz_hat(self.fft(x), a)

    def dzbar(self, x, a):
        return self.dzbar_hat(self.fft(x), a)

    def scalar_form(self, field) -> FormField:
        return FormField.scalar(self.n, np.asarray(field, dtype=np.complex128),
                                grid_ndim=self.grid_ndim)

    def d_hol(self, form: FormField) -> FormField:
        """Holomorphic exterior derivative."""
        out = FormField(self.n, form.p + 1, form.q, grid_ndim=self.grid_ndim)
        if out.p > self.n:
            return out
        for (J, K), c in form.comps.items():
            ch = self.fft(np.ascontiguousarray(c))
            for j in range(self.n):
                if j in J:
                    continue
                pos = sum(1 for i in J if i < j)
                key = (J[:pos] + (j,) + J[pos:], K)
                out._accum(key, (-1) ** pos * self.dz_hat(ch, j))
        return out

    def d_bar(self, form: FormField) -> FormField:
        """Antiholomorphic exterior derivative."""
        out = FormField(self.n, form.p, form.q + 1, grid_ndim=self.grid_ndim)
        if out.q > self.n:
            return out
        sp = (-1) ** form.p
        for (J, K), c in form.comps.items():
            ch = self.fft(np.ascontiguousarray(c))
            for k in range(self.n):
                if k in K:
                    continue
                pos = sum(1 for i in K if i < k)
                key = (J, K[:pos] + (k,) + K[pos:])
                out._accum(key, sp * (-1) ** pos * self.dzbar_hat(ch, k))
        return out

    def d(self, form) -> MixedForm:
        """Full exterior derivative; returns both bidegree parts."""
        if isinstance(form, MixedForm):
            out = MixedForm()
            for f in form.parts.values():
                out.add(self.d_hol(f))
                out.add(self.d_bar(f))
            return out
        return MixedForm([self.d_hol(form), self.d_bar(form)])

    # -- metric structures --------------------------------------------------

    def omega(self) -> FormField:
        comps = {}
        for j in range(self.n):
            for k in range(self.n):
                comps[((j,), (k,))] = 1j * self.metric[j, k]
        return FormField(self.n, 1, 1, comps, grid_ndim=self.grid_ndim)

    def omega_power(self, m, normalized=True) -> FormField:
        """omega^m, divided by m! when normalized."""
        out = self.scalar_form(np.ones(self.grid_shape))
        w = self.omega()
        for _ in range(m):
            out = out.wedge(w)
        if normalized:
            out = out.scale(1.0 / math.factorial(m))
        return out

    def coeff_matrix(self, form: FormField):
        """(1,1)-form -> coefficient array of shape (n, n, [r, r,] grid)."""
        assert (form.p, form.q) == (1, 1)
        sample = next(iter(form.comps.values()))
        out = np.zeros((self.n, self.n) + sample.shape, dtype=np.complex128)
        for (J, K), c in form.comps.items():
            out[J[0], K[0]] = c
        return out

    def form_from_matrix(self, A) -> FormField:
        comps = {}
        for j in range(self.n):
            for k in range(self.n):
                comps[((j,), (k,))] = A[j, k]
        return FormField(self.n, 1, 1, comps, grid_ndim=self.grid_ndim)

    def contract(self, form: FormField):
        """Lambda_omega of a (1,1)-form: -i tr(g^{-1} A), pointwise."""
        if (form.p, form.q) != (1, 1):
            raise ValueError(f"contract expects a (1,1)-form, got ({form.p},{form.q})")
        acc = None
        for (J, K), c in form.comps.items():
            term = self.metric_inv[K[0], J[0]] * c
            acc = term if acc is None else acc + term
        return -1j * acc

    # -- integration ----------------------------------------------------------

    def integrate(self, density):
        """Integral of a scalar density against the volume form omega^n/n!."""
        buf = np.ascontiguousarray(density * self.volume_density)
        val = complex(np.sum(buf)) * self.cell_volume
        return val.real if abs(val.imag) < 1e-13 * (1 + abs(val.real)) else val

    def integrate_form(self, form: FormField):
        """Integral of an (n,n)-form over the manifold."""
        assert (form.p, form.q) == (self.n, self.n)
        full = tuple(range(self.n))
        c = form.comps.get((full, full))
        if c is None:
            return 0.0
        if c.ndim != self.grid_ndim:
            raise ValueError("integrate_form expects a scalar-valued form; trace first")
        factor = (-1) ** (self.n * (self.n - 1) // 2) * (-1j) ** self.n
        val = complex(np.sum(np.ascontiguousarray(c))) * factor * self.cell_volume
        return val.real if abs(val.imag) < 1e-12 * (1 + abs(val.real)) else val

    # -- pointwise norms (orthonormal coframe) --------------------------------

    def form_norm2(self, form: FormField, H=None, Hinv=None):
        """Pointwise squared-norm field of a (0,0), (1,0), (0,1) or (1,1) form.

        H is the bundle metric (r,r,grid) for endomorphism-valued forms;
        entries pair as tr(H^{-1} M^dag H M).
        """
        deg = (form.p, form.q)
        gnd = self.grid_ndim

        if H is not None and Hinv is None:
            pw = np.moveaxis(H, (0, 1), (-2, -1))
            Hinv = np.moveaxis(np.linalg.inv(pw), (-2, -1), (0, 1))

        def pair(M):
            if M.ndim > gnd:
                if H is None:
                    return np.real(np.einsum("ab...,ab...->...", np.conj(M), M))
                Md = np.conj(np.swapaxes(M, 0, 1))
                P = np.einsum("ab...,bc...->ac...", H, M)
                Q = np.einsum("ab...,bc...->ac...", Hinv, Md)
                r = M.shape[0]
                val = sum(Q[i, k] * P[k, i] for i in range(r) for k in range(r))
                return np.real(val)
            return np.real(np.conj(M) * M)

        if deg == (0, 0):
            return pair(form.comps[((), ())])

        if deg in ((1, 0), (0, 1)):
            hol = deg == (1, 0)
            comps = []
            for a in range(self.n):
                key = (((a,), ()) if hol else ((), (a,)))
                c = form.comps.get(key)
                comps.append(c)
            ref = next(c for c in comps if c is not None)
            comps = [np.zeros_like(ref) if c is None else c for c in comps]
            T = self.metric_isqrt if hol else np.conj(self.metric_isqrt)
            tot = None
            for b in range(self.n):
                on = sum(T[a, b] * comps[a] for a in range(self.n))
                t = pair(on)
                tot = t if tot is None else tot + t
            return tot

        if deg == (1, 1):
            if self.is_flat:
                tot = None
                for (J, K), c in form.comps.items():
                    t = pair(c)
                    tot = t if tot is None else tot + t
                return tot
            A = self.coeff_matrix(form)
            mi = self.metric_isqrt
            Aon = np.einsum("aj...,jk...,kb...->ab...", mi, A, mi, optimize=True)
            tot = None
            for a in range(self.n):
                for b in range(self.n):
                    t = pair(Aon[a, b])
                    tot = t if tot is None else tot + t
            return tot

        raise ValueError(f"form_norm2 not implemented for bidegree {deg}")

    # -- scalar elliptic solver -------------------------------------------------

    def laplacian_type(self, u):
        """u -> i Lambda(dbar d u); equals -(1/2) Delta_real on the flat torus (positive)."""
        du = self.d_hol(self.scalar_form(u))
        return 1j * self.contract(self.d_bar(du))

    def flat_invert(self, v):
        """Pseudo-inverse of the flat model of laplacian_type.

        Modes where the flat symbol vanishes (origin and Nyquist-killed
        rows) lie in the kernel of the discrete operator and are projected
        out rather than passed through.
        """
        sym = np.where(self._lap_symbol > 0, self._lap_symbol, 1.0)
        vh = self.fft(np.asarray(v, dtype=np.complex128))
        vh = np.where(self._lap_symbol > 0, vh / sym, 0.0)
        return self.ifft(vh)

    def solve_scalar(self, rhs, tol=1e-11, maxiter=400):
        """Solve i Lambda(dbar d u) = rhs for mean-zero u.

        rhs is projected onto volume-mean zero (the solvability condition).
        Minimal-residual iteration preconditioned by the flat spectral
        inverse; one step is exact on the flat torus.  Raises SolverError
        with the residual history on stagnation.
        """
        rhs = np.asarray(rhs, dtype=np.complex128)
        b = rhs - self.integrate(rhs) / self.volume

        # symbol vanishes at the origin and at Nyquist-killed modes; the
        # preconditioner acts as identity there (mean is projected separately)
        sym = np.where(self._lap_symbol > 0, self._lap_symbol, 1.0)

        def precond(v):
            out = self.ifft(self.fft(v) / sym)
            return out - np.mean(out)

        scale = float(np.max(np.abs(b)))
        if scale == 0.0:
            return np.zeros_like(b)
        u = precond(b)
        r = b - self.laplacian_type(u)
        residuals = []
        for _ in range(maxiter):
            res = float(np.max(np.abs(r))) / scale
            residuals.append(res)
            if res < tol:
                u -= self.integrate(u) / self.volume
                return u
            z = precond(r)
            Az = self.laplacian_type(z)
            denom = np.vdot(Az.ravel(), Az.ravel()).real
            if denom == 0.0:
                break
            alpha = np.vdot(Az.ravel(), r.ravel()) / denom
            u = u + alpha * z
            r = r - alpha * Az
        raise SolverError(
            f"scalar elliptic solve stalled at residual {residuals[-1]:.3e} "
            f"after {len(residuals)} iterations", residuals)


# -- builtin geometries -------------------------------------------------------

def make_flat_torus(grid_shape, periods):
    """Flat Kahler torus: omega_0 = i sum_a dz^a ^ dzbar^a (g = Id)."""
    grid_shape = tuple(grid_shape)
    n = len(grid_shape) // 2
    return Geometry(grid_shape, periods, np.eye(n, dtype=np.complex128))


def make_sheared_gauduchon_torus(grid_shape, periods, amplitude):
    """Non-Kahler Gauduchon torus: omega = omega_0 + d'gamma + conj(d'gamma).

    gamma = amplitude * s * dzbar^1 with s = sin(2 pi x_3 / L_3).  The
    scalar must vary along the second complex direction: a shear profile
    depending only on z^1 cancels against its conjugate and leaves the
    metric Kahler.  dd-bar(omega) = 0 holds as an algebraic identity
    (d'd' = 0) while d omega != 0 whenever amplitude != 0.
    """
    grid_shape = tuple(grid_shape)
    periods = tuple(float(p) for p in periods)
    if len(grid_shape) != 4:
        raise GeometryError("sheared Gauduchon torus is a surface builtin (4 real dims)")
    amp = float(amplitude)
    coords = [np.arange(m) * (p / m) for m, p in zip(grid_shape, periods)]
    mesh = np.meshgrid(*coords, indexing="ij")
    L3 = periods[2]
    c = (2 * np.pi / L3) * np.cos(2 * np.pi * mesh[2] / L3) / np.sqrt(2.0)
    worst = 1.0 - float(np.max(np.abs(amp * c)))
    if worst <= 0:
        raise GeometryError(
            f"shear amplitude {amp} destroys positivity "
            f"(worst metric eigenvalue {worst:.6e})")
    G = np.zeros((2, 2) + grid_shape, dtype=np.complex128)
    G[0, 0] = 1.0
    G[1, 1] = 1.0
    G[0, 1] = 1j * amp * c
    G[1, 0] = -1j * amp * c
    return Geometry(grid_shape, periods, G)


def conformal_scale(geom: Geometry, factor):
    """Geometry with the metric scaled pointwise by a positive scalar field."""
    f = np.asarray(factor)
    if np.any(np.real(f) <= 0):
        raise GeometryError("conformal factor must be strictly positive")
    return Geometry(geom.grid_shape, geom.periods, geom.metric * f)


# -- Gauduchon diagnostics and corrector ---------------------------------------

def gauduchon_residual(geom: Geometry):
    """(rho1, rho2): sup-norms of dd-bar(omega^{n-1}) and dd-bar(omega^{n-2})."""
    out = []
    for m in (geom.n - 1, geom.n - 2):
        if m <= 0:
            out.append(0.0)
            continue
        w = geom.omega_power(m, normalized=False)
        out.append(geom.d_hol(geom.d_bar(w)).sup())
    return out[0], out[1]


def kahler_residual(geom: Geometry) -> float:
    """Sup-norm of d omega (vanishes iff Kahler on the sample grid)."""
    return geom.d(geom.omega()).sup()


def contract(form: FormField, geom: Geometry):
    return geom.contract(form)


def gauduchon_correct(geom: Geometry, tol=1e-9, maxiter=60):
    """Conformal factor f > 0 with dd-bar(f omega^{n-1}) = 0, volume preserved.

    Quasi-Newton fixed point: the second-order part of the operator is the
    scalar elliptic model i*Lambda(dbar d .) scaled by det(g), inverted
    spectrally each sweep.  Returns (corrected geometry, factor, residual
    history); raises SolverError on non-convergence.
    """
    if geom.n != 2:
        raise GeometryError("gauduchon_correct implemented for surfaces (n = 2)")
    w = geom.omega()
    full = ((0, 1), (0, 1))

    def residual_comp(f):
        fw = FormField(w.n, 1, 1, {k: f * v for k, v in w.comps.items()}, w.grid_ndim)
        r = geom.d_hol(geom.d_bar(fw)).comps.get(full)
        return np.zeros(geom.grid_shape, dtype=np.complex128) if r is None else r

    f = np.ones(geom.grid_shape, dtype=np.complex128)
    history = []
    for _ in range(maxiter):
        r = residual_comp(f)
        res = float(np.max(np.abs(r)))
        history.append(res)
        if res < tol:
            break
        # dd-bar(df) ^ omega = i det(g) * (i Lambda dbar d df) * E + lower
        # order, so a flat spectral inverse is a uniformly good quasi-Newton
        # step; the outer loop measures the true residual.
        f = f + geom.flat_invert(1j * r / geom.volume_density)
    else:
        raise SolverError(
            f"gauduchon_correct did not reach tol {tol} "
            f"(last residual {history[-1]:.3e})", history)
    f = np.real(f)
    if float(f.min()) <= 0:
        raise SolverError("gauduchon_correct produced a nonpositive factor", history)
    n = geom.n
    num = float(np.sum(geom.volume_density)) * geom.cell_volume
    den = float(np.sum((f ** n) * geom.volume_density)) * geom.cell_volume
    f = f * (num / den) ** (1.0 / n)
    return conformal_scale(geom, f), f, history
