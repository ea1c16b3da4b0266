import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from shockbif.cli import run
from shockbif.config import TEMPLATE, load_config, parse_config, reflection_matrix, validate
from shockbif.errors import ConfigError
from shockbif.tail import ModeStack

FAST = """
[model]
name = synthetic_crossing
[grid]
L = 30.0
N = 401
[crossing]
k_star = 1
[reduction]
K_max = 8
x_samples = 0.01, 0.02
[branch]
s_grid = 0.0, 0.01, 0.02
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def cli(tmp_path, command, text=FAST, out="out", extra=()):
    cfg = write(tmp_path, text)
    return run([command, "--config", cfg, "--out", str(tmp_path / out), *extra])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_init_writes_the_template_once(tmp_path, capsys):
    path = str(tmp_path / "cfg" / "run.ini")
    assert run(["init", "--config", path]) == 0
    assert open(path).read() == TEMPLATE
    assert run(["init", "--config", path]) == 2
    assert "exists" in capsys.readouterr().err


def test_template_parses_to_the_defaults():
    cfg = parse_config(TEMPLATE)
    validate(cfg)
    assert (cfg.N, cfg.K_max, cfg.Q, cfg.symmetry_mode) == (801, 16, 32, "auto")
    assert cfg.k_star == 1 and cfg.s_grid == [0.0, 0.0125, 0.025, 0.05]
    assert reflection_matrix(cfg, 1) is None  # identity


@pytest.mark.parametrize("text, message", [
    ("[model]\nname = burgers\n[grid]\nL = 30\n", "[grid] N"),
    ("[grid]\nL = 30\nN = 401\n", "[model]"),
    (FAST + "[extra]\nkey = 1\n", "unknown"),
])
def test_missing_or_unknown_keys(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message.replace("[", r"\[").replace("]", r"\]")):
        load_config(write(tmp_path, text))


@pytest.mark.parametrize("patch", ["N = 400", "N = 401\n[contour]\nQ = 24",
                                   "N = 401\n[tolerances]\ntol_fix = -1"])
def test_invalid_values_are_rejected(tmp_path, patch):
    text = FAST.replace("N = 401", patch)
    with pytest.raises(ConfigError):
        validate(load_config(write(tmp_path, text)))


def test_missing_k_star_is_a_config_error(tmp_path, capsys):
    text = "[model]\nname = synthetic_crossing\n[grid]\nL = 30\nN = 401\n"
    assert cli(tmp_path, "crossing", text) == 2
    assert "[crossing] k_star" in capsys.readouterr().err


def test_profile_command(tmp_path):
    assert cli(tmp_path, "profile") == 0
    rows = read_csv(tmp_path / "out" / "profile.csv")
    assert len(rows) == 401 and list(rows[0]) == ["x", "u0", "ux0"]
    x = float(rows[200]["x"])
    assert x == 0.0 and abs(float(rows[200]["u0"])) <= 1e-12
    lax = json.loads((tmp_path / "out" / "lax.json").read_text())
    assert lax["passed"] and lax["speed"] == 0.0


def test_non_lax_endstates_exit_with_the_model_code(tmp_path, capsys):
    text = FAST.replace("synthetic_crossing", "burgers\nu_minus = -1.0\nu_plus = 1.0")
    assert cli(tmp_path, "profile", text) == 3
    assert "error [model]" in capsys.readouterr().err


def test_spectrum_command_reports_conjugate_pairs(tmp_path):
    assert cli(tmp_path, "spectrum") == 0
    spec = json.loads((tmp_path / "out" / "spectrum.json").read_text())
    assert len(spec["samples"]) == 3
    assert max(s["conjugate_defect"] for s in spec["samples"]) <= 1e-10
    decay = json.loads((tmp_path / "out" / "decay.json").read_text())
    assert -2.2 <= decay["slope_inv"] <= -1.8


def test_lost_eigenvalue_exits_with_the_spectral_code(tmp_path):
    text = FAST + "[contour]\nradius = 0.001\n[parameter]\neps_min = -0.5\neps_max = 0.5\n"
    assert cli(tmp_path, "crossing", text) == 4


def test_crossing_command(tmp_path):
    assert cli(tmp_path, "crossing") == 0
    rep = json.loads((tmp_path / "out" / "crossing.json").read_text())
    assert rep["k_star"] == 1 and -0.05 < rep["eps_crit"] < 0.05
    assert rep["lambda_prime_re"] < 0


def test_reduce_command_is_odd_and_certified(tmp_path):
    assert cli(tmp_path, "reduce") == 0
    rows = read_csv(tmp_path / "out" / "reduced.csv")
    by_x = {float(r["x"]): float(r["re_f"]) for r in rows}
    assert by_x[0.02] == pytest.approx(-by_x[-0.02], rel=1e-8)
    real = json.loads((tmp_path / "out" / "realness.json").read_text())
    assert real["passed"] and real["mode"] == "O2"


def test_branch_command_is_deterministic(tmp_path):
    assert cli(tmp_path, "branch", out="a") == 0
    assert cli(tmp_path, "branch", out="b") == 0
    a = (tmp_path / "a" / "branch.csv").read_bytes()
    assert a == (tmp_path / "b" / "branch.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "branch.csv")
    assert [float(r["s"]) for r in rows] == [0.0, 0.01, 0.02]
    assert float(rows[0]["residual"]) == 0.0
    man = json.loads((tmp_path / "a" / "branch_manifest.json").read_text())
    assert man["kind"] == "O2_pitchfork" and man["K_max"] == 8 and len(man["config_hash"]) == 16


def test_threads_do_not_change_the_branch(tmp_path):
    assert cli(tmp_path, "branch", out="a") == 0
    assert cli(tmp_path, "branch", out="b", extra=("--threads", "3")) == 0
    assert (tmp_path / "a" / "branch.csv").read_bytes() == \
        (tmp_path / "b" / "branch.csv").read_bytes()


def test_so2_run_is_reinterpreted_as_hopf(tmp_path):
    text = FAST.replace("synthetic_crossing", "synthetic_crossing\ngamma = 0.5\ncenter = 0.5\n"
                        "depth = 2.0") + (
        "[parameter]\neps_min = -0.5\neps_max = 0.5\neps_samples = 5\n"
        "[crossing]\nguess_re = -0.1\nguess_im = -0.1\n[contour]\nradius = 0.2\n")
    text = text.replace("[crossing]\nk_star = 1\n", "")
    text = text.replace("[crossing]\nguess_re", "[crossing]\nk_star = 1\nguess_re")
    assert cli(tmp_path, "branch", text) == 0
    rows = read_csv(tmp_path / "out" / "branch.csv")
    for r in rows:
        assert float(r["period"]) == 2 * np.pi / abs(float(r["d"]))
    man = json.loads((tmp_path / "out" / "branch_manifest.json").read_text())
    assert man["kind"] == "O2_Hopf" and man["d_bar"] != 0


def test_synthesize_command(tmp_path):
    assert cli(tmp_path, "synthesize") == 0
    certs = json.loads((tmp_path / "out" / "certificates.json").read_text())
    assert len(certs) == 2
    for c in certs:
        assert c["ratio"] >= 3.0 and not c["spurious"]
    stack = ModeStack.load_npz(tmp_path / "out" / "modes_002.npz")
    assert stack.K_max == 8 and stack.reality_defect() <= 1e-15


def test_verify_passes_on_the_default_grid(tmp_path, capsys):
    assert cli(tmp_path, "verify", FAST.replace("N = 401", "N = 801")) == 0
    rows = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert all(r["passed"] for r in rows)
    assert "checks passed" in capsys.readouterr().out


def test_verify_flags_a_tiny_grid(tmp_path, capsys):
    assert cli(tmp_path, "verify", FAST.replace("N = 401", "N = 21")) == 1
    out = capsys.readouterr().out
    assert "FAIL  profile_convergence" in out and "increase [grid] N" in out


def test_verify_flags_a_corrupted_reflection(tmp_path, capsys):
    assert cli(tmp_path, "verify", FAST + "[reflection]\nR = 1.5\n") == 1
    out = capsys.readouterr().out
    assert "FAIL  reflection_orthogonal" in out and "[reflection] R" in out


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "shockbif.cli", "profile", "--config",
                           write(tmp_path, FAST), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "profile:" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "shockbif.cli", "profile"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "--config is required" in proc.stderr
