import numpy as np
import pytest
from scipy.special import lambertw

from hymlab import bundle as bd
from hymlab import chern_weil as cw
from hymlab import flows as fl
from hymlab import hermitian as hm


def ext_rho(t, b=0.5, rho0=1.0):
    """Closed-form diagonal ratio along the metric flow of the constant
    extension: rho' = -4 |b|^2 rho^2."""
    return rho0 / (1.0 + 4.0 * b * b * rho0 * t)


@pytest.fixture(scope="module")
def ext16(flat16):
    return bd.extension_bundle(flat16, [0.5, 0.0])


def test_flow_matches_ode_oracle(flat16, ext16):
    opts = fl.FlowOptions(dt=2e-3, t_end=1.0, sample_stride=50)
    tr = fl.hym_flow(ext16, hm.identity_metric(ext16), lam=0.0, opts=opts)
    b = 0.5
    want_ym = 2 * b ** 4 * ext_rho(1.0) ** 2 * flat16.volume
    assert tr.ym_last == pytest.approx(want_ym, rel=5e-3)
    want_sup = np.sqrt(2) * b ** 2 * ext_rho(1.0)
    assert tr.rows[-1][4] == pytest.approx(want_sup, rel=5e-3)
    # metric stays diagonal with unit determinant
    H = tr.final_H
    assert np.max(np.abs(H[0, 1])) < 1e-12
    det = (H[0, 0] * H[1, 1]).real
    assert np.max(np.abs(det - 1.0)) < 1e-8


def test_flow_energy_monotone_and_identity(flat16, ext16):
    opts = fl.FlowOptions(dt=5e-3, t_end=0.5, sample_stride=1,
                          track_dissipation=True)
    tr = fl.hym_flow(ext16, hm.identity_metric(ext16), lam=0.0, opts=opts)
    ym = tr.column("ym_energy")
    assert all(b <= a + 1e-12 for a, b in zip(ym, ym[1:]))
    assert tr.energy_identity_error() < 0.05  # O(dt) at this coarse dt


def test_flow_identity_error_first_order(flat16, ext16):
    errs = []
    for dt in (0.01, 0.005):
        opts = fl.FlowOptions(dt=dt, t_end=0.25, sample_stride=5,
                              track_dissipation=True)
        tr = fl.hym_flow(ext16, hm.identity_metric(ext16), lam=0.0, opts=opts)
        errs.append(tr.energy_identity_error())
    assert errs[1] < 0.7 * errs[0]


def test_hermitian_einstein_fixed_point(flat16):
    L = bd.flux_line(flat16, 1)
    lam = cw.lambda_of(L)
    H0 = hm.identity_metric(L)
    opts = fl.FlowOptions(dt=0.01, t_end=0.2, sample_stride=10)
    tr = fl.hym_flow(L, H0, lam=lam, opts=opts)
    assert np.max(np.abs(tr.final_H - H0)) < 1e-10
    assert tr.rows[-1][5] < 1e-10


def test_flow_lambda_defaults_to_degree(flat16):
    L = bd.flux_line(flat16, 1)
    tr = fl.hym_flow(L, hm.identity_metric(L),
                     opts=fl.FlowOptions(dt=0.01, t_end=0.05, sample_stride=5))
    assert np.max(np.abs(tr.final_H - hm.identity_metric(L))) < 1e-10


def test_perturbed_solve_lambertw_oracle(flat16, ext16):
    b = 0.5
    K = hm.identity_metric(ext16)
    opts = fl.FlowOptions(dt=0.05, t_end=float("inf"), max_steps=20000,
                          sample_stride=100, dt_growth=1.1)
    for eps, seen in ((1.0, None), (0.25, None)):
        H, tr = fl.perturbed_solve(ext16, K, eps, opts=opts, tol=1e-9)
        # rho solves rho b^2 + (eps/2) log rho = 0, i.e.
        # rho = (eps/(2 b^2)) W(2 b^2 / eps)
        w = float(lambertw(2 * b * b / eps).real)
        want = eps / (2 * b * b) * w
        rho = float(np.real(H[0, 0] / H[1, 1]).flat[0])
        assert rho == pytest.approx(want, rel=1e-6, abs=1e-8)


def test_perturbed_solve_validations(flat16, ext16):
    K = hm.identity_metric(ext16)
    with pytest.raises(ValueError, match="eps"):
        fl.perturbed_solve(ext16, K, 0.0)
    with pytest.raises(ValueError, match="eps"):
        fl.perturbed_solve(ext16, K, 1.5)
    # reference metric must be trace-normalized
    bad = hm.random_smooth_metric(ext16, seed=3)
    with pytest.raises(fl.FlowError, match="trace"):
        fl.perturbed_solve(ext16, bad, 0.5)


def test_perturbed_flat_bundle_fixed_point(flat16):
    sp = bd.trivial_bundle(flat16, 2)
    K = hm.identity_metric(sp)
    H, tr = fl.perturbed_solve(sp, K, 0.5, tol=1e-10,
                               opts=fl.FlowOptions(dt=0.05, t_end=float("inf"),
                                                   max_steps=100, sample_stride=10))
    assert np.max(np.abs(H - K)) < 1e-12


def test_sigma_of_relation(flat16, ext16):
    H0 = hm.identity_metric(ext16)
    H = hm.random_smooth_metric(ext16, seed=4)
    sig = fl.sigma_of(H0, H)
    lhs = hm._matmul(np.conj(np.swapaxes(sig, 0, 1)), hm._matmul(H0, sig))
    assert np.max(np.abs(lhs - H)) < 1e-12


def test_gauge_flow_stationary_on_flat_bundle(flat16):
    sp = bd.trivial_bundle(flat16, 2)
    alpha, t = fl.gauge_flow(sp, hm.identity_metric(sp),
                             fl.FlowOptions(dt=0.01, t_end=0.05))
    assert np.max(np.abs(alpha)) == 0.0


def test_gauge_relation_zero_at_start(flat16, ext16):
    H0 = hm.identity_metric(ext16)
    res = fl.gauge_relation_residual(ext16, H0, ext16.a_matrix(), H0)
    assert res < 1e-14


def test_coevolution_residual_halves(flat8):
    # coarse, fast version of the convergence study
    ext = bd.extension_bundle(flat8, [0.5, 0.0])
    H0 = hm.identity_metric(ext)
    r1, _, _ = fl.co_evolved_gauge_relation(ext, H0, t_end=0.3, dt=0.02)
    r2, _, _ = fl.co_evolved_gauge_relation(ext, H0, t_end=0.3, dt=0.01)
    assert r2 < 0.7 * r1
    assert r1 < 1e-2


def test_local_energy(flat16, ext16):
    opts = fl.FlowOptions(dt=0.01, t_end=0.3, sample_stride=2,
                          retain_f2_stride=1)
    tr = fl.hym_flow(ext16, hm.identity_metric(ext16), lam=0.0, opts=opts)
    x0 = (0, 0, 0, 0)
    e = fl.local_energy(tr, flat16, x0, t0=0.15, R=0.2)
    # constant-density field: R^{-2} * |F|^2(t) integrated over ball x window;
    # the ball volume is the lattice one at this radius (3.2 spacings)
    b = 0.5
    f2_mid = 2 * (b ** 2 * ext_rho(0.15)) ** 2
    dist2 = sum(np.minimum(np.abs(np.arange(16) / 16 - 0),
                           1 - np.abs(np.arange(16) / 16 - 0))[
                    tuple([slice(None) if a == ax else None for a in range(4)])] ** 2
                for ax in range(4))
    ball = float(np.sum(dist2 <= 0.2 ** 2)) * flat16.cell_volume
    want = 2 * f2_mid * ball
    assert e == pytest.approx(want, rel=0.02)
    with pytest.raises(ValueError, match="injectivity"):
        fl.local_energy(tr, flat16, x0, t0=0.15, R=0.3)
    with pytest.raises(ValueError, match="cover"):
        fl.local_energy(tr, flat16, x0, t0=0.29, R=0.2)


def test_local_energy_flat_bundle_zero(flat16):
    sp = bd.trivial_bundle(flat16, 1)
    opts = fl.FlowOptions(dt=0.01, t_end=0.2, sample_stride=2, retain_f2_stride=1)
    tr = fl.hym_flow(sp, hm.identity_metric(sp), lam=0.0, opts=opts)
    assert fl.local_energy(tr, flat16, (0, 0, 0, 0), t0=0.1, R=0.2) == 0.0


def test_bochner_monitor(flat16, ext16):
    H0 = hm.identity_metric(ext16)
    opts = fl.FlowOptions(dt=0.01, t_end=0.02, sample_stride=1)
    tr = fl.hym_flow(ext16, H0, lam=0.0, opts=opts)
    rec = fl.bochner_monitor(ext16, H0, tr.final_H, dt=0.02)
    assert np.isfinite(rec["worst_margin"])
    assert rec["c1_star"] >= 0.0
    # flat bundle: everything vanishes
    sp = bd.trivial_bundle(flat16, 1)
    H = hm.identity_metric(sp)
    rec0 = fl.bochner_monitor(sp, H, H, dt=0.01)
    assert rec0["worst_margin"] == 0.0 and rec0["c1_star"] == 0.0


def test_pipeline_smoke(flat16, ext16):
    report = fl.approx_flat_pipeline(
        ext16, eps_schedule=(1.0, 0.5),
        flow_opts=fl.FlowOptions(dt=0.05, t_end=2.0, sample_stride=10),
        solve_opts=fl.FlowOptions(dt=0.05, t_end=float("inf"), max_steps=5000,
                                  sample_stride=25, dt_growth=1.1))
    assert report.hypothesis_ok
    assert not report.errors
    assert report.sup_f_monotone and report.he_monotone
    assert report.sup_f_after[1] <= report.sup_f_after[0] + 1e-9
    d = report.to_dict()
    assert set(d) >= {"eps_schedule", "he_residuals", "sup_f_after",
                      "hypothesis_ok", "final_ratio"}


def test_pipeline_negative_control_flags(flat16):
    s = bd.direct_sum(bd.flux_line(flat16, 1), bd.flux_line(flat16, -1))
    report = fl.approx_flat_pipeline(
        s, eps_schedule=(1.0,),
        flow_opts=fl.FlowOptions(dt=0.005, t_end=0.05, sample_stride=5),
        solve_opts=fl.FlowOptions(dt=0.02, t_end=float("inf"), max_steps=4000,
                                  sample_stride=25, dt_growth=1.1))
    assert not report.hypothesis_ok
    assert not report.passed


def test_trace_csv_schema(tmp_path, flat16, ext16):
    opts = fl.FlowOptions(dt=0.01, t_end=0.05, sample_stride=1)
    tr = fl.hym_flow(ext16, hm.identity_metric(ext16), lam=0.0, opts=opts)
    path = tmp_path / "trace.csv"
    with open(path, "w") as fh:
        tr.write_csv(fh)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema=1")
    assert lines[1] == ",".join(fl.TRACE_COLUMNS)
    assert len(lines) == 2 + len(tr.rows)
    ts = tr.column("t")
    assert all(b > a for a, b in zip(ts, ts[1:]))
