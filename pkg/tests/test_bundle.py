import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hymlab import bundle as bd
from hymlab import chern_weil as cw
from hymlab import hermitian as hm
from hymlab.forms import FormField

from conftest import band_limited


def test_flat_line_zero_holonomy_is_trivial(flat8):
    fl = bd.flat_line(flat8, (0, 0, 0, 0))
    tr = bd.trivial_bundle(flat8, 1)
    assert fl.sectors == tr.sectors
    assert fl.a is None and fl.flux == (0, 0)


def test_flux_line_scalar_promotes_to_diagonal(flat8):
    assert bd.flux_line(flat8, 2).sectors[0].flux == (2, 2)
    assert bd.flux_line(flat8, (1, 0)).sectors[0].flux == (1, 0)


def test_nyquist_guard(flat8):
    with pytest.raises(bd.BundleError, match="Nyquist"):
        bd.flux_line(flat8, (3, 0))  # 8/4 = 2 is the cap
    bd.flux_line(flat8, (2, -2))


def test_extension_requires_closed_class(flat8):
    rng = np.random.default_rng(0)
    bad = FormField(2, 0, 1, {((), (0,)): band_limited(flat8, rng)}, grid_ndim=4)
    with pytest.raises(bd.BundleError, match="closed"):
        bd.extension_bundle(flat8, bad)


def test_extension_structure(flat8):
    ext = bd.extension_bundle(flat8, [0.5, 0.0])
    assert ext.rank == 2 and ext.flux == (0, 0)
    a = ext.a_matrix()
    assert np.allclose(a[0, 0, 1], 0.5)
    assert np.max(np.abs(a[0, 1, 0])) == 0.0  # strictly upper triangular
    assert bd.integrability_residual(ext) < 1e-12


def test_extension_exact_class_from_potential(flat8):
    # beta = dbar(f): the bundle is gauge-equivalent to the trivial one
    rng = np.random.default_rng(1)
    f = band_limited(flat8, rng)
    beta = flat8.d_bar(flat8.scalar_form(f))
    ext = bd.extension_bundle(flat8, beta)
    assert bd.integrability_residual(ext) < 1e-10


def test_integrability_residual_nonclosed(flat8):
    rng = np.random.default_rng(2)
    sp = bd.trivial_bundle(flat8, 2)
    comps = {((), (0,)): np.zeros((2, 2) + flat8.grid_shape, dtype=np.complex128)}
    comps[((), (0,))][0, 1] = band_limited(flat8, rng)
    sp.a = FormField(2, 0, 1, comps, grid_ndim=4)
    assert bd.integrability_residual(sp) > 0.01


def test_dual_negates_twists(flat8):
    fl = bd.flat_line(flat8, (0.3, -0.2, 0.1, 0.0))
    dl = bd.dual(fl)
    assert dl.sectors[0].holonomy == (-0.3, 0.2, -0.1, -0.0)
    L = bd.flux_line(flat8, (1, -2))
    assert bd.dual(L).sectors[0].flux == (-1, 2)


def test_det_of_flux_line_is_itself(flat8):
    L = bd.flux_line(flat8, (1, 0))
    assert bd.det(L).sectors[0].flux == (1, 0)


def test_det_of_extension_is_trivial(flat8):
    ext = bd.extension_bundle(flat8, [0.5, 0.0])
    d = bd.det(ext)
    assert d.rank == 1 and d.flux == (0, 0) and d.a is None


def test_det_of_direct_sum_is_tensor_of_dets(flat8):
    a = bd.flux_line(flat8, (1, 0))
    b = bd.flux_line(flat8, (0, -2))
    lhs = bd.det(bd.direct_sum(a, b))
    rhs = bd.tensor(bd.det(a), bd.det(b))
    assert lhs.sectors[0].flux == rhs.sectors[0].flux == (1, -2)


@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2))
@settings(max_examples=20, deadline=None)
def test_flux_composition(flat8, k1, k2, l1, l2):
    a = bd.flux_line(flat8, (k1, k2))
    b = bd.flux_line(flat8, (l1, l2))
    assert bd.tensor(a, b).flux == (k1 + l1, k2 + l2)
    assert bd.direct_sum(a, b).flux == (k1 + l1, k2 + l2)
    assert bd.dual(a).flux == (-k1, -k2)


def test_direct_sum_mask_blocks_cross_flux(flat8):
    s = bd.direct_sum(bd.flux_line(flat8, (1, 0)), bd.flux_line(flat8, (0, 0)))
    assert s.mask[0, 0] and s.mask[1, 1]
    assert not s.mask[0, 1] and not s.mask[1, 0]
    H = s.zero_endo()
    H[0, 0] = 1.0
    H[1, 1] = 1.0
    H[0, 1] = 0.1  # couples different fluxes
    H[1, 0] = 0.1
    with pytest.raises(hm.MetricError, match="sectors"):
        hm.validate_metric(s, H)


def test_cocycle_defect_integral_fluxes(flat8):
    for spec in (bd.flux_line(flat8, (2, -1)), bd.flat_line(flat8, (0.4, 0, 0, 0))):
        assert spec.cocycle_defect() < 1e-12


def test_holonomy_shift_components_allowed(flat8):
    # same flux, different holonomy: off-diagonal components carry a
    # constant background connection shift instead of being masked
    s = bd.direct_sum(bd.flat_line(flat8, (0.5, 0, 0, 0)),
                      bd.flat_line(flat8, (0.0, 0, 0, 0)))
    assert s.mask.all()
    assert np.any(s.shift_hol[0, 1] != 0)
    assert np.allclose(s.shift_hol[0, 1], -np.conj(s.shift_anti[0, 1]))


def test_deg_functoriality_via_chern(flat8):
    E = bd.extension_bundle(flat8, [0.4, 0.1])
    L = bd.flux_line(flat8, (1, 0))
    HE = hm.random_smooth_metric(E, seed=3)
    HL = hm.identity_metric(L)
    EL = bd.tensor(E, L)
    HEL = hm.identity_metric(EL)
    degE = cw.degree(E, HE)
    degL = cw.degree(L, HL)
    degEL = cw.degree(EL, HEL)
    assert degEL == pytest.approx(degE + E.rank * degL, abs=1e-8)
    assert cw.degree(bd.dual(L), hm.identity_metric(bd.dual(L))) == pytest.approx(-degL, abs=1e-10)
