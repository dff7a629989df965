"""Complex exterior algebra on sampled fields.

A ``FormField`` of bidegree (p, q) on an n-dimensional complex manifold is
stored as a dict mapping index-key pairs ``(J, K)`` -> coefficient array,
where ``J`` (holomorphic) and ``K`` (antiholomorphic) are strictly
increasing tuples drawn from ``range(n)``.  The represented form is

    alpha = sum_{J,K} c_{J,K} dz^J ^ dzbar^K,

with ``dz^J = dz^{J[0]} ^ ... ^ dz^{J[p-1]}``.  Coefficient arrays carry
the sampling grid in their trailing ``grid_ndim`` axes; leading axes (if
any) are matrix indices for endomorphism-valued forms, and wedge products
compose them by matrix multiplication.

Derivatives live on the geometry object (they need its spectral calculus);
this module is purely algebraic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["FormField", "insert_index", "merge_indices"]


def insert_index(idx, indices):
    """Insert idx into the ascending tuple indices; return (tuple, sign) or None if duplicate."""
    if idx in indices:
        return None
    pos = sum(1 for i in indices if i < idx)
    out = indices[:pos] + (idx,) + indices[pos:]
    return out, (-1) ** pos


def merge_indices(a, b):
    """Wedge-merge two ascending tuples; return (tuple, sign) or None on repetition."""
    if any(x in b for x in a):
        return None
    inversions = sum(1 for x in a for y in b if x > y)
    return tuple(sorted(a + b)), (-1) ** inversions


def _mul(x, y, grid_ndim):
    """Pointwise product of coefficient arrays; matrix product on leading axes when both are endomorphism-valued."""
    if x.ndim > grid_ndim and y.ndim > grid_ndim:
        return np.einsum("ab...,bc...->ac...", x, y)
    if x.ndim > grid_ndim:  # endo * scalar
        return x * y
    return y * x if y.ndim > grid_ndim else x * y


class FormField:
    __slots__ = ("n", "p", "q", "comps", "grid_ndim")

    def __init__(self, n, p, q, comps=None, grid_ndim=4):
        self.n = n
        self.p = p
        self.q = q
        self.grid_ndim = grid_ndim
        self.comps = {} if comps is None else comps

    @classmethod
    def scalar(cls, n, field, grid_ndim=4):
        return cls(n, 0, 0, {((), ()): np.asarray(field)}, grid_ndim)

    def copy(self):
        return FormField(self.n, self.p, self.q,
                         {k: v.copy() for k, v in self.comps.items()}, self.grid_ndim)

    def get(self, J, K):
        return self.comps.get((tuple(J), tuple(K)))

    def _accum(self, key, val):
        cur = self.comps.get(key)
        self.comps[key] = val if cur is None else cur + val

    def __add__(self, other):
        assert (self.p, self.q) == (other.p, other.q)
        out = self.copy()
        for k, v in other.comps.items():
            out._accum(k, v)
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return FormField(self.n, self.p, self.q,
                         {k: c * v for k, v in self.comps.items()}, self.grid_ndim)

    def wedge(self, other):
        assert self.n == other.n
        out = FormField(self.n, self.p + other.p, self.q + other.q,
                        grid_ndim=self.grid_ndim)
        if out.p > self.n or out.q > self.n:
            return out
        for (J1, K1), c1 in self.comps.items():
            for (J2, K2), c2 in other.comps.items():
                mj = merge_indices(J1, J2)
                if mj is None:
                    continue
                mk = merge_indices(K1, K2)
                if mk is None:
                    continue
                J, sj = mj
                K, sk = mk
                # dz^{J2} moves left across dzbar^{K1}
                sign = sj * sk * (-1) ** (len(J2) * len(K1))
                out._accum((J, K), sign * _mul(c1, c2, self.grid_ndim))
        return out

    def trace(self):
        """Matrix trace of an endomorphism-valued form."""
        out = FormField(self.n, self.p, self.q, grid_ndim=self.grid_ndim)
        for k, v in self.comps.items():
            out.comps[k] = np.einsum("aa...->...", v) if v.ndim > self.grid_ndim else v
        return out

    def conj(self):
        """Complex conjugate of a scalar-valued form; (p,q) -> (q,p)."""
        out = FormField(self.n, self.q, self.p, grid_ndim=self.grid_ndim)
        sign = (-1) ** (self.p * self.q)
        for (J, K), v in self.comps.items():
            if v.ndim > self.grid_ndim:
                raise ValueError("conj() is defined for scalar-valued forms only")
            out._accum((K, J), sign * np.conj(v))
        return out

    def sup(self):
        """Max absolute coefficient over all components and grid points."""
        m = 0.0
        for v in self.comps.values():
            if v.size:
                m = max(m, float(np.max(np.abs(v))))
        return m

    def drop_zeros(self, tol=0.0):
        self.comps = {k: v for k, v in self.comps.items()
                      if v.size and float(np.max(np.abs(v))) > tol}
        return self


class MixedForm:
    """Sum of forms of different bidegrees (what a full exterior derivative returns)."""

    __slots__ = ("parts",)

    def __init__(self, parts=()):
        self.parts = {}
        for f in parts:
            self.add(f)

    def add(self, form: FormField):
        key = (form.p, form.q)
        if key in self.parts:
            self.parts[key] = self.parts[key] + form
        else:
            self.parts[key] = form
        return self

    def sup(self):
        return max((f.sup() for f in self.parts.values()), default=0.0)
