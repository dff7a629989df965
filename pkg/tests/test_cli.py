import json
import os

import numpy as np
import pytest

from hymlab import cli

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def run(args):
    return cli.main(args)


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_GEOM = """
[geometry]
kind = "flat_torus"
grid = [8, 8, 8, 8]
periods = [1.0, 1.0, 1.0, 1.0]
"""


def test_check_geometry(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + "\n[bundle]\nkind = \"trivial\"\n")
    out = tmp_path / "out"
    assert run(["check-geometry", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"geometry", "chern", "flow", "pipeline",
                            "projectivization", "errors"}
    assert summary["geometry"]["volume"] == pytest.approx(1.0)
    assert summary["chern"] is None


def test_chern_subcommand(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "extension"
beta = [0.5, 0.0]
""")
    out = tmp_path / "out"
    assert run(["chern", "--config", cfg, "--out", str(out)]) == 0
    chern = json.loads((out / "summary.json").read_text())["chern"]
    assert abs(chern["deg"]) < 1e-9
    assert chern["ch1_vanishes"] and chern["ch2_vanishes"]
    assert chern["energy_identity"]["residual"] < 1e-8


def test_flow_subcommand_and_outputs(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "extension"
beta = [0.5, 0.0]

[flow]
dt = 0.01
t_end = 0.05
sample_stride = 1
track_dissipation = true

[output]
checkpoint_stride = 2
""")
    out = tmp_path / "out"
    assert run(["flow", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "trace.csv").exists()
    assert (out / "final_metric.bin").exists()
    assert any(p.name.startswith("step_") for p in (out / "checkpoints").iterdir())
    flow = json.loads((out / "summary.json").read_text())["flow"]
    assert flow["ym_last"] < flow["ym_first"]
    assert flow["energy_identity_error"] < 0.05


def test_flow_resume_reproduces_tail(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "extension"
beta = [0.5, 0.0]

[flow]
dt = 0.01
t_end = 0.1
sample_stride = 1

[output]
checkpoint_stride = 4
""")
    out1 = tmp_path / "out1"
    out2 = tmp_path / "out2"
    assert run(["flow", "--config", cfg, "--out", str(out1)]) == 0
    ck = out1 / "checkpoints" / "step_00000004.bin"
    assert run(["flow", "--config", cfg, "--out", str(out2),
                "--resume", str(ck)]) == 0
    full = [l for l in (out1 / "trace.csv").read_text().splitlines()
            if not l.startswith(("#", "step"))]
    tail = [l for l in (out2 / "trace.csv").read_text().splitlines()
            if not l.startswith(("#", "step"))]
    assert full[-len(tail):] == tail


def test_deterministic_reruns(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "extension"
beta = [0.5, 0.0]

[metric]
kind = "random_smooth"
seed = 3

[flow]
dt = 0.01
t_end = 0.03
sample_stride = 1
""")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["flow", "--config", cfg, "--out", str(out)]) == 0
        outs.append((out / "trace.csv").read_text())
    assert outs[0] == outs[1]


def test_perturbed_subcommand(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "extension"
beta = [0.5, 0.0]

[flow]
dt = 0.05
solver_tol = 1e-7
""")
    out = tmp_path / "out"
    assert run(["perturbed", "--config", cfg, "--out", str(out),
                "--eps", "1.0"]) == 0
    flow = json.loads((out / "summary.json").read_text())["flow"]
    assert flow["eps"] == 1.0
    assert flow["he_residual"] < np.sqrt(2) * 0.25  # better than identity metric
    assert (out / "checkpoints" / "h_eps_1.bin").exists()


def test_nef_cert_lines(tmp_path):
    for flux, signs in ((1, [True, True, True]), (-1, [False, False, False])):
        cfg = write(tmp_path, SMALL_GEOM + f"""
[bundle]
kind = "flux_line"
flux = {flux}

[flow]
nef_eps = [0.0, 0.01, 0.1]
""", name=f"nef{flux}.toml")
        out = tmp_path / f"out{flux}"
        assert run(["nef-cert", "--config", cfg, "--out", str(out)]) == 0
        entries = json.loads((out / "summary.json").read_text())[
            "projectivization"]["nef_certificates"]
        assert [e["certified"] for e in entries] == signs


def test_segre_subcommand_small(tmp_path):
    cfg = write(tmp_path, SMALL_GEOM + """
[bundle]
kind = "trivial"
rank = 2

[metric]
kind = "random_smooth"
seed = 2
amplitude = 0.2

[projectivization]
fiber_res = 16
""")
    out = tmp_path / "out"
    assert run(["segre", "--config", cfg, "--out", str(out)]) == 0
    proj = json.loads((out / "summary.json").read_text())["projectivization"]
    assert abs(proj["fiber_volume"] - 1.0) < 1e-6
    assert proj["segre_checks"]["k2"] < 2e-3
    assert proj["oe1_invariance"] < 1e-4


def test_config_errors(tmp_path, capsys):
    missing = write(tmp_path, "[geometry]\nkind = \"flat_torus\"\n", "bad1.toml")
    assert run(["chern", "--config", missing, "--out", str(tmp_path / "o1")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and "bundle" in err["message"]

    bad_kind = write(tmp_path, SMALL_GEOM + "[bundle]\nkind = \"nope\"\n", "bad2.toml")
    assert run(["chern", "--config", bad_kind, "--out", str(tmp_path / "o2")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "nope" in err["message"]

    odd = write(tmp_path, """
[geometry]
kind = "flat_torus"
grid = [15, 16, 16, 16]

[bundle]
kind = "trivial"
""", "bad3.toml")
    assert run(["chern", "--config", odd, "--out", str(tmp_path / "o3")]) == 2
    capsys.readouterr()

    nyq = write(tmp_path, SMALL_GEOM + "[bundle]\nkind = \"flux_line\"\nflux = 9\n",
                "bad4.toml")
    assert run(["chern", "--config", nyq, "--out", str(tmp_path / "o4")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "Nyquist" in err["message"]

    noexist = str(tmp_path / "missing.toml")
    assert run(["chern", "--config", noexist, "--out", str(tmp_path / "o5")]) == 2


def test_bundled_configs_parse():
    from hymlab.config import ExperimentConfig
    for name in os.listdir(CONFIG_DIR):
        if name.endswith(".toml"):
            ExperimentConfig.load(os.path.join(CONFIG_DIR, name))
