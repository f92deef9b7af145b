"""Batch-driver checks: config parsing, validation, studies, artifacts.

Monte Carlo configs reuse ensembles whose sigma distances were measured in
the estimator tests; everything here is seed-pinned and deterministic.
"""

import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from nelson_lab.cli import main
from nelson_lab.matter import build_matter_grid, dirichlet_laplacian

GROUND_CFG = """\
model.box = 5
model.spacing = 0.5
model.potential = well,-1.5,0.6
model.mu = 1.0
model.e = 0.0
model.lambda = 3.0
disc.radial_nodes = 2
disc.k_range = 0.4,2.2
disc.cap = 3
study.name = ground
study.levels = 3
"""

FK_BASE = """\
model.box = 5
model.spacing = 0.5
model.potential = well,-1.5,0.6
model.e = 0.1
model.lambda = 3.0
disc.radial_nodes = 2
disc.k_range = 0.4,2.2
disc.cap = 3
"""


def cfg_file(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    return header, [dict(zip(header, ln.split(","))) for ln in lines[1:]]


# ------------------------------------------------------------- validation

def test_malformed_line_reports_lineno(tmp_path, capsys):
    path = cfg_file(tmp_path, "model.box = 5\nmodel.spacing 0.5\n")
    assert main(["run", path]) == 2
    assert "line 2" in capsys.readouterr().err


def test_duplicate_and_undotted_keys_rejected(tmp_path, capsys):
    path = cfg_file(tmp_path, "study.name = ground\nstudy.name = binding\n")
    assert main(["run", path]) == 2
    assert "duplicate" in capsys.readouterr().err
    path = cfg_file(tmp_path, "box = 5\n", name="b.cfg")
    assert main(["validate", path]) == 2


def test_validate_reports_dimension_and_ok(tmp_path, capsys):
    path = cfg_file(tmp_path, GROUND_CFG)
    assert main(["validate", path]) == 0
    out = capsys.readouterr().out
    # 5 sites x C(3 + 4, 4) = 5 x 35
    assert "dimension: 175" in out
    assert out.rstrip().endswith("ok")


def test_validate_rejects_massless_ir_endpoint(tmp_path, capsys):
    text = GROUND_CFG.replace("model.mu = 1.0", "model.mu = 0.0") \
                     .replace("disc.k_range = 0.4,2.2",
                              "disc.k_range = 0.0,2.2")
    assert main(["validate", cfg_file(tmp_path, text)]) == 2
    assert "rejected" in capsys.readouterr().out


def test_validate_overflow_warning_then_rejection(tmp_path, capsys):
    big = """\
model.box = 9,9
model.spacing = 0.5
disc.radial_nodes = 4
disc.k_range = 0.4,3.0
disc.angular = antipodal-pairs
disc.cap = 4
study.name = ground
"""
    assert main(["validate", cfg_file(tmp_path, big)]) == 0
    out = capsys.readouterr().out
    assert "warning" in out and "ok" in out
    worse = big.replace("disc.cap = 4", "disc.cap = 6")
    assert main(["validate", cfg_file(tmp_path, worse, name="w.cfg")]) == 2
    assert "overflow guard" in capsys.readouterr().out


def test_unknown_study_and_missing_key(tmp_path, capsys):
    path = cfg_file(tmp_path, "study.name = eigenfrobnicate\n")
    assert main(["validate", path]) == 2
    assert "unknown study" in capsys.readouterr().out
    nocap = GROUND_CFG.replace("disc.cap = 3\n", "")
    assert main(["run", cfg_file(tmp_path, nocap, name="n.cfg")]) == 2
    assert "disc.cap" in capsys.readouterr().err


def test_fk_time_window_is_a_config_error(tmp_path, capsys):
    text = FK_BASE + ("study.name = fk-energy\nstudy.t0 = 4.0\n"
                      "study.t1 = 2.0\nmc.t = 4.0\nmc.paths = 1024\n")
    assert main(["run", cfg_file(tmp_path, text)]) == 2
    assert "t0" in capsys.readouterr().err


# ------------------------------------------------------------- dense runs

def test_ground_free_matter_artifacts(tmp_path):
    out = tmp_path / "out"
    rc = main(["run", cfg_file(tmp_path, GROUND_CFG), "--out", str(out)])
    assert rc == 0
    header, rows = read_csv(out / "ground_ground.csv")
    assert header[:2] == ["energy", "residual"]
    matter = build_matter_grid((5,), 0.5, V=("well", -1.5, 0.6))
    T = dirichlet_laplacian(matter).toarray() + np.diag(matter.active_V)
    assert abs(float(rows[0]["energy"]) - np.linalg.eigvalsh(T)[0]) < 1e-8
    _, lev = read_csv(out / "ground_levels.csv")
    assert len(lev) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["study"] == "ground"
    assert all(c["pass"] for c in summary["checks"])
    # hash is over the sorted canonical key=value text, nothing else
    text = (tmp_path / "run.cfg").read_text(encoding="utf-8")
    pairs = dict(ln.split(" = ") for ln in text.strip().splitlines())
    canon = "\n".join(f"{k}={v}" for k, v in sorted(pairs.items()))
    assert summary["config_hash"] == hashlib.sha256(canon.encode()).hexdigest()
    assert len(summary["git_rev"]) in (7, 40) or summary["git_rev"] == "unknown"


def test_csv_bodies_byte_identical_across_reruns(tmp_path):
    path = cfg_file(tmp_path, GROUND_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", path, "--out", str(a)]) == 0
    assert main(["run", path, "--out", str(b)]) == 0
    for name in ("ground_ground.csv", "ground_levels.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_masked_domain_raises_ground_energy(tmp_path):
    out_full = tmp_path / "full"
    out_ball = tmp_path / "ball"
    assert main(["run", cfg_file(tmp_path, GROUND_CFG),
                 "--out", str(out_full)]) == 0
    masked = GROUND_CFG + "model.mask = ball,0.6\n"
    assert main(["run", cfg_file(tmp_path, masked, name="m.cfg"),
                 "--threads", "1", "--out", str(out_ball)]) == 0
    _, full = read_csv(out_full / "ground_ground.csv")
    _, ball = read_csv(out_ball / "ground_ground.csv")
    # Dirichlet shrinkage: 3 active sites instead of 5
    assert float(ball[0]["energy"]) > float(full[0]["energy"]) + 0.1


def test_gross_representation_at_infinite_cutoff(tmp_path):
    text = GROUND_CFG.replace("model.e = 0.0", "model.e = 0.1") \
                     .replace("model.lambda = 3.0", "model.lambda = inf")
    text += "model.representation = gross\nmodel.K = 0.5\n"
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0


def test_identity_suite_all_pass(tmp_path):
    out = tmp_path / "out"
    path = cfg_file(tmp_path, "study.name = identity-suite\n")
    assert main(["run", path, "--out", str(out)]) == 0
    _, rows = read_csv(out / "identity-suite_registry.csv")
    assert len(rows) == 11
    assert all(r["passed"] == "true" for r in rows)


def test_renorm_sweep_rows(tmp_path):
    text = """\
model.box = 3
model.spacing = 0.5
model.e = 0.5
disc.radial_nodes = 3
disc.k_range = 0.3,6.0
disc.cap = 2
study.name = renorm-sweep
study.lambdas = 1.5,2.0,3.0,4.0,6.0
"""
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    header, rows = read_csv(out / "renorm-sweep_sweep.csv")
    assert header == ["lam", "energy_gross", "energy_nelson", "bare",
                      "counterterm", "resolvent_gap", "b_norm"]
    assert len(rows) == 5
    assert float(rows[-1]["b_norm"]) == 0.0  # reference row


def test_binding_thresholds(tmp_path):
    text = FK_BASE + "study.name = binding\nstudy.radii = 0.8,1.2\n"
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    _, rows = read_csv(out / "binding_thresholds.csv")
    assert len(rows) == 2


# -------------------------------------------------------------- fk studies

def test_fk_oracle_gate_pass(tmp_path):
    text = FK_BASE.replace("model.box = 5", "model.box = 3") \
                  .replace("well,-1.5,0.6", "well,-1.0,0.4") \
                  .replace("model.e = 0.1", "model.e = 0.2")
    text += ("study.name = fk-oracle\nstudy.max_rel_stderr = 0.05\n"
             "mc.dt = 0.5\nmc.t = 1.0\nmc.paths = 8192\nmc.seed = 71\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    _, rows = read_csv(out / "fk-oracle_gate.csv")
    assert len(rows) == 1
    assert 0.0 < float(rows[0]["ess"]) <= 8192.0
    assert float(rows[0]["sigma_distance"]) <= 3.0


def test_fk_oracle_precision_check_fails(tmp_path):
    text = FK_BASE.replace("model.box = 5", "model.box = 3") \
                  .replace("well,-1.5,0.6", "well,-1.0,0.4")
    text += ("study.name = fk-oracle\nstudy.max_rel_stderr = 0.001\n"
             "mc.dt = 0.5\nmc.t = 1.0\nmc.paths = 8192\nmc.seed = 71\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 1
    summary = json.loads((out / "summary.json").read_text())
    by_id = {c["id"]: c for c in summary["checks"]}
    assert by_id["fk-oracle-gate"]["pass"]
    assert not by_id["fk-oracle-precision"]["pass"]


def test_failed_gate_suppresses_estimates(tmp_path):
    # 16 paths at horizon 6: every path dies, the amplitude oracle cannot
    # pass, and no energy table may be written
    text = FK_BASE.replace("model.box = 5", "model.box = 3") \
                  .replace("well,-1.5,0.6", "well,-1.0,0.4")
    text += ("study.name = fk-energy\nstudy.t0 = 3.0\nstudy.t1 = 6.0\n"
             "mc.dt = 0.5\nmc.t = 6.0\nmc.paths = 16\nmc.seed = 3\n"
             "mc.x = 1\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 1
    assert (out / "fk-energy_gate.csv").exists()
    assert not (out / "fk-energy_energy.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert [c["id"] for c in summary["checks"]] == ["fk-oracle-gate"]


def test_fk_energy_within_3_sigma(tmp_path):
    text = FK_BASE + ("study.name = fk-energy\nstudy.t0 = 2.0\n"
                      "study.t1 = 4.0\nmc.dt = 0.5\nmc.t = 4.0\n"
                      "mc.paths = 49152\nmc.seed = 31\nmc.x = 2\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    _, rows = read_csv(out / "fk-energy_energy.csv")
    assert float(rows[0]["sigma_distance"]) <= 3.0


def test_fk_martingale_constancy(tmp_path):
    text = FK_BASE + ("study.name = fk-martingale\n"
                      "study.times = 0.5,1.0,2.0\nmc.dt = 0.5\nmc.t = 2.0\n"
                      "mc.paths = 60000\nmc.seed = 41\nmc.x = 2\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    _, rows = read_csv(out / "fk-martingale_martingale.csv")
    assert [r["t"] for r in rows] == ["0.5", "1", "2"]


def test_fk_generating_both_functionals(tmp_path):
    text = FK_BASE + ("study.name = fk-generating\nstudy.z_list = 0.5,1.0\n"
                      "study.L = 1.0\nstudy.h_norm = 0.4\n"
                      "study.t_sweep = 6.0\nmc.dt = 0.5\nmc.t = 6.0\n"
                      "mc.paths = 48000\nmc.seed = 51\nmc.x = 2\n")
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 0
    _, num = read_csv(out / "fk-generating_number_generating.csv")
    _, fld = read_csv(out / "fk-generating_field_generating.csv")
    assert len(num) == 2 and len(fld) == 2
    # number moments shrink under the boson-number suppression e^{-z N_L}
    assert all(0.0 < float(r["mean"]) < 1.0 for r in num)


def test_ir_divergent_grid_is_a_numerical_failure(tmp_path, capsys):
    text = """\
model.box = 3
model.spacing = 0.5
model.potential = well,-1.0,0.4
model.mu = 0.0
model.e = 0.05
model.lambda = 2.0
disc.radial_nodes = 2
disc.k_range = 0.2,2.0
disc.cap = 2
study.name = fk-generating
study.z_list = 0.5
mc.dt = 0.5
mc.t = 1.0
mc.paths = 4096
mc.seed = 7
"""
    out = tmp_path / "out"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(out)]) == 3
    assert "numerical failure" in capsys.readouterr().err


# --------------------------------------------------------------- plumbing

def test_module_invocation(tmp_path):
    path = cfg_file(tmp_path, GROUND_CFG)
    proc = subprocess.run([sys.executable, "-m", "nelson_lab.cli",
                           "validate", path], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ok" in proc.stdout


def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])
