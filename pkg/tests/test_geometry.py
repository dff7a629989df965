import numpy as np
import pytest

from hymlab import geometry as gm
from hymlab.forms import FormField

from conftest import band_limited, real_band_limited


def test_flat_volume_normalization(flat16):
    assert flat16.volume == pytest.approx(1.0, abs=1e-14)
    g = gm.make_flat_torus((8, 8, 8, 8), (1, 1, 2, 2))
    assert g.volume == pytest.approx(4.0, abs=1e-13)


def test_odd_grid_rejected():
    with pytest.raises(gm.GeometryError, match="even"):
        gm.make_flat_torus((15, 16, 16, 16), (1, 1, 1, 1))
    with pytest.raises(gm.GeometryError, match="even|>= 8"):
        gm.make_flat_torus((6, 8, 8, 8), (1, 1, 1, 1))


def test_degenerate_lattice_rejected():
    with pytest.raises(gm.GeometryError, match="degenerate"):
        gm.make_flat_torus((8, 8, 8, 8), (1.0, 0.0, 1.0, 1.0))
    with pytest.raises(gm.GeometryError, match="degenerate"):
        gm.make_flat_torus((8, 8, 8, 8), (1.0, -2.0, 1.0, 1.0))


def test_spectral_derivative_single_mode(flat16):
    x = flat16.coords
    f = np.exp(2j * np.pi * (3 * x[0] - 2 * x[1] + x[3]))
    kt = (2 * np.pi * 3 - 1j * 2 * np.pi * (-2)) / np.sqrt(2)
    df = flat16.dz(f, 0)
    assert np.max(np.abs(df - 1j * kt * f)) / np.max(np.abs(kt * f)) < 1e-12
    dfb = flat16.dzbar(f, 0)
    ktb = 1j * np.conj(kt)
    assert np.max(np.abs(dfb - ktb * f)) / np.max(np.abs(kt * f)) < 1e-12


def test_dbar_annihilates_holomorphic_data(flat16):
    # global holomorphic functions on the torus are constants; holomorphic
    # one-forms are constant combinations of the dz^a
    c = flat16.scalar_form(np.full(flat16.grid_shape, 2.3 - 0.7j))
    assert flat16.d_bar(c).sup() == 0.0
    ones = np.ones(flat16.grid_shape, dtype=np.complex128)
    hol_form = FormField(2, 1, 0, {((0,), ()): 1.5 * ones, ((1,), ()): -2j * ones},
                         grid_ndim=4)
    assert flat16.d_bar(hol_form).sup() < 1e-14
    assert flat16.d_hol(hol_form).sup() < 1e-14


def test_complex_structure_identities(flat16, sheared16):
    rng = np.random.default_rng(0)
    for geom in (flat16, sheared16):
        f = band_limited(geom, rng)
        sf = geom.scalar_form(f)
        assert geom.d_hol(geom.d_hol(sf)).sup() < 1e-10
        assert geom.d_bar(geom.d_bar(sf)).sup() < 1e-10
        anti = geom.d_hol(geom.d_bar(sf)) + geom.d_bar(geom.d_hol(sf))
        assert anti.sup() < 1e-10


def test_contract_omega_is_n(flat16, sheared16):
    for geom in (flat16, sheared16):
        lam = geom.contract(geom.omega())
        assert np.max(np.abs(lam - geom.n)) < 1e-12


def test_contract_matches_dense_trace_oracle(sheared16):
    # pointwise oracle: -i tr(g^{-1} A) with dense linalg at random points
    rng = np.random.default_rng(1)
    comps = {}
    for j in range(2):
        for k in range(2):
            comps[((j,), (k,))] = band_limited(sheared16, rng)
    form = FormField(2, 1, 1, comps, grid_ndim=4)
    lam = sheared16.contract(form)
    idx = [tuple(rng.integers(0, 16, size=4)) for _ in range(10)]
    for pt in idx:
        G = np.array([[sheared16.metric[j, k][pt] for k in range(2)] for j in range(2)])
        A = np.array([[comps[((j,), (k,))][pt] for k in range(2)] for j in range(2)])
        want = -1j * np.trace(np.linalg.inv(G) @ A)
        assert abs(lam[pt] - want) < 1e-12 * (1 + abs(want))


def test_integrate_constant_and_form(flat16, sheared16):
    for geom in (flat16, sheared16):
        assert geom.integrate(np.ones(geom.grid_shape)) == pytest.approx(geom.volume)
        w2 = geom.omega_power(2)
        assert geom.integrate_form(w2) == pytest.approx(geom.volume, rel=1e-12)


def test_stokes_exact_form_integrates_to_zero(flat16, sheared16):
    rng = np.random.default_rng(2)
    for geom in (flat16, sheared16):
        alpha = geom.scalar_form(band_limited(geom, rng))
        ddbar = geom.d_hol(geom.d_bar(alpha))
        val = geom.integrate_form(ddbar.wedge(geom.omega()))
        assert abs(val) < 1e-10


def test_ddbar_pairing_invariant(flat16, sheared16):
    # well-definedness mechanism behind the degree
    rng = np.random.default_rng(3)
    for geom in (flat16, sheared16):
        alpha = real_band_limited(geom, rng)
        form = geom.d_hol(geom.d_bar(geom.scalar_form(alpha)))
        w1 = geom.omega_power(geom.n - 1)
        assert abs(geom.integrate_form(form.wedge(w1))) < 1e-9


def test_form_norms(sheared16):
    assert np.max(np.abs(sheared16.form_norm2(sheared16.omega()) - 2)) < 1e-12
    # flat check of a unit (1,1) component
    g = gm.make_flat_torus((8, 8, 8, 8), (1, 1, 1, 1))
    one = np.ones(g.grid_shape, dtype=np.complex128)
    f = FormField(2, 1, 1, {((0,), (0,)): 1j * one}, grid_ndim=4)
    assert np.max(np.abs(g.form_norm2(f) - 1.0)) < 1e-13


def test_gauduchon_residuals(flat16, sheared16):
    r1, r2 = gm.gauduchon_residual(flat16)
    assert r1 < 1e-12 and r2 == 0.0
    r1, r2 = gm.gauduchon_residual(sheared16)
    assert r1 < 1e-10 and r2 == 0.0
    assert gm.kahler_residual(sheared16) > 1e-2
    assert gm.kahler_residual(flat16) < 1e-12


def test_conformal_distortion_breaks_gauduchon(flat16):
    x = flat16.coords
    geom = gm.conformal_scale(flat16, np.exp(np.sin(2 * np.pi * x[0])))
    r1, _ = gm.gauduchon_residual(geom)
    assert r1 > 1e-2


def test_sheared_amplitude_limits():
    gm.make_sheared_gauduchon_torus((8, 8, 8, 8), (1, 1, 1, 1), 0.0)
    with pytest.raises(gm.GeometryError, match="positivity|eigenvalue"):
        gm.make_sheared_gauduchon_torus((8, 8, 8, 8), (1, 1, 1, 1), 10.0)


def test_sheared_amplitude_zero_is_flat(flat16):
    g0 = gm.make_sheared_gauduchon_torus((16, 16, 16, 16), (1, 1, 1, 1), 0.0)
    assert np.allclose(g0.metric, flat16.metric)
    assert g0.is_flat


def test_gauduchon_correct_conformal(flat16):
    x = flat16.coords
    distorted = gm.conformal_scale(flat16, np.exp(0.2 * np.sin(2 * np.pi * x[0])))
    rho_before, _ = gm.gauduchon_residual(distorted)
    fixed, factor, history = gm.gauduchon_correct(distorted)
    rho_after, _ = gm.gauduchon_residual(fixed)
    assert rho_after < 1e-8
    assert rho_before / max(rho_after, 1e-300) > 1e4
    assert factor.min() > 0
    assert fixed.volume == pytest.approx(distorted.volume, rel=1e-10)
    # compare against the closed-form kernel of the conformal class
    want = np.exp(-0.2 * np.sin(2 * np.pi * x[0]))
    want = want * (distorted.volume /
                   float(np.sum((want ** 2) * distorted.volume_density) *
                         distorted.cell_volume)) ** 0.5
    assert np.max(np.abs(factor - want)) < 1e-6


def test_gauduchon_correct_idempotent(flat16):
    x = flat16.coords
    distorted = gm.conformal_scale(flat16, np.exp(0.2 * np.sin(2 * np.pi * x[0])))
    fixed, _, _ = gm.gauduchon_correct(distorted)
    _, factor2, _ = gm.gauduchon_correct(fixed)
    assert np.max(np.abs(factor2 - 1.0)) < 1e-7


def test_gauduchon_correct_already_gauduchon(sheared16):
    _, factor, history = gm.gauduchon_correct(sheared16)
    assert np.max(np.abs(factor - 1.0)) < 1e-10
    assert len(history) <= 2


def test_solve_scalar_flat_and_sheared(flat16, sheared16):
    rng = np.random.default_rng(4)
    for geom in (flat16, sheared16):
        u_true = real_band_limited(geom, rng)
        u_true -= geom.integrate(u_true) / geom.volume
        rhs = geom.laplacian_type(u_true)
        u = geom.solve_scalar(rhs)
        assert np.max(np.abs(u - u_true)) < 1e-9


def test_solve_scalar_flat_one_shot(flat16):
    rng = np.random.default_rng(5)
    rhs = real_band_limited(flat16, rng)
    u = flat16.solve_scalar(rhs)
    r = flat16.laplacian_type(u) - (rhs - flat16.integrate(rhs) / flat16.volume)
    assert np.max(np.abs(r)) < 1e-11


def test_checkpoint_roundtrip(tmp_path, flat8):
    from hymlab import fields_io
    rng = np.random.default_rng(6)
    arr = rng.normal(size=(2, 2) + flat8.grid_shape) + 1j * rng.normal(size=(2, 2) + flat8.grid_shape)
    path = tmp_path / "field.bin"
    fields_io.write_field(path, arr, {"t": 1.5, "grid_shape": list(flat8.grid_shape)})
    back, meta = fields_io.read_field(path)
    assert np.array_equal(back, arr)
    assert meta["t"] == 1.5


def test_checkpoint_bad_magic(tmp_path):
    from hymlab import fields_io
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(fields_io.CheckpointError, match="magic"):
        fields_io.read_field(p)
