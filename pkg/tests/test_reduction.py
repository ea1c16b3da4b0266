import csv

import numpy as np
import pytest

from shockbif.errors import ConfigError, ContractionError
from shockbif.reduction import (ReducedEquation, certify_realness, split_complement,
                                write_reduced_csv)
from shockbif.tail import translate

XS = (0.02, 0.01)


@pytest.fixture(scope="module")
def o2_reduced(o2_family, o2_crossing):
    return ReducedEquation(o2_family, 1, d_bar=0.0, K_max=8)


@pytest.fixture(scope="module")
def so2_reduced(so2_family, so2_crossing):
    return ReducedEquation(so2_family, 1, d_bar=so2_crossing.d_bar, K_max=8, radius=0.2)


def test_symmetry_mode_is_validated(o2_family):
    with pytest.raises(ConfigError):
        ReducedEquation(o2_family, 1, symmetry_mode="O3")


def test_critical_eigenvalue_is_real_on_the_o2_model(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    assert abs(o2_reduced.lam(e).imag) <= 1e-8
    assert abs(o2_reduced.lam(e)) <= 1e-8
    c = o2_reduced.critical(e)
    assert abs(np.vdot(c.h, c.v) - 1) <= 1e-12


def test_reduced_function_is_odd_and_real(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    for x in XS:
        fp, fm = o2_reduced.f(x, e), o2_reduced.f(-x, e)
        assert abs(fp + fm) <= 1e-8 * abs(fp)
        assert abs(fp.imag) <= 1e-6 * abs(fp)


def test_reduced_function_is_cubic(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    ratio = o2_reduced.f(0.02, e).real / o2_reduced.f(0.01, e).real
    assert 7.5 <= ratio <= 8.5


def test_zero_amplitude_is_trivial(o2_reduced, o2_crossing):
    state = o2_reduced.solve(0.0, o2_crossing.eps_crit)
    assert state.f == 0 and state.stack.mnorm() == 0


def test_state_components(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    st = o2_reduced.solve(0.02, e)
    assert st.contraction_ratio <= 0.5
    assert st.stack.reality_defect() <= 1e-15
    crit = o2_reduced.critical(e)
    # the complement part has no component along v
    assert abs(np.vdot(crit.h, st.v_c)) <= 1e-10 * np.linalg.norm(st.v_c)
    assert np.abs(st.stack[2]).max() > 0 and np.abs(st.stack[0]).max() > 0


def test_gauge_rotation_leaves_f_unchanged(o2_reduced, o2_crossing):
    """Rotating the eigenvector by e^{i phi} is a y-translation of the state."""
    e = o2_crossing.eps_crit
    phi = 0.6
    a = o2_reduced.solve(0.02, e)
    b = o2_reduced.solve(0.02, e, gauge=np.exp(1j * phi))
    assert abs(a.f - b.f) <= 1e-10 * abs(a.f)
    assert (b.stack - translate(a.stack, phi)).mnorm() <= 1e-9


def test_warm_start_reaches_the_same_state(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    a = o2_reduced.solve(0.02, e)
    b = o2_reduced.solve(0.015, e, warm=a)
    c = o2_reduced.solve(0.015, e)
    assert abs(b.f - c.f) <= 1e-10 * abs(c.f)


def test_residual_vanishes_on_the_closed_equation(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    r = o2_reduced.residual(0.01, e)
    assert r == pytest.approx(0.01 * o2_reduced.lam(e) - o2_reduced.f(0.01, e), abs=1e-15)


def test_complement_is_quadratic(o2_reduced, o2_crossing):
    e = o2_crossing.eps_crit
    v = o2_reduced.eigenvector_field(e)
    cs = []
    for x in (0.02, 0.01):
        vc, info = split_complement(o2_reduced, e, x * v)
        cs.append(info["C_quadratic"])
        crit = o2_reduced.critical(e)
        assert abs(np.vdot(crit.h, crit.op.to_vector(vc))) <= 1e-10 * np.abs(vc).max()
    assert cs[0] == pytest.approx(cs[1], rel=0.05)


def test_complement_without_budget(o2_reduced, o2_crossing):
    v = o2_reduced.eigenvector_field(o2_crossing.eps_crit)
    with pytest.raises(ContractionError):
        split_complement(o2_reduced, o2_crossing.eps_crit, 0.02 * v, tol_fix=1e-300,
                         max_iter=1)


def test_certification_passes_on_the_o2_model(o2_reduced, o2_crossing):
    rep = certify_realness(o2_reduced, [o2_crossing.eps_crit], [0.01])
    assert rep.passed and rep.mode == "O2"
    assert rep.max_im_lambda <= 1e-8 and rep.max_rel_im_f <= 1e-6


def test_certification_downgrades_the_so2_model(so2_family, so2_crossing):
    red = ReducedEquation(so2_family, 1, d_bar=0.0, K_max=8, radius=0.2)
    assert abs(red.lam(so2_crossing.eps_crit).imag) > 1e-3
    rep = certify_realness(red, [so2_crossing.eps_crit], [0.01])
    assert not rep.passed and rep.mode == "SO2" and red.symmetry_mode == "SO2"
    assert any("downgraded" in w for w in rep.warnings)


def test_so2_reduced_function_has_an_imaginary_part(so2_reduced, so2_crossing):
    e = so2_crossing.eps_crit
    assert abs(so2_reduced.lam(e).imag) <= 1e-8
    fx = so2_reduced.f(0.02, e)
    assert abs(fx.imag) > 1e-3 * abs(fx)


def test_sample_table_csv(tmp_path, o2_reduced, o2_crossing):
    rows = o2_reduced.sample_table([0.01, -0.01], [o2_crossing.eps_crit])
    write_reduced_csv(rows, tmp_path / "reduced.csv")
    with open(tmp_path / "reduced.csv") as fh:
        got = list(csv.DictReader(fh))
    assert [r["x"] for r in got] == ["0.01", "-0.01"]
    assert float(got[0]["re_f"]) == pytest.approx(-float(got[1]["re_f"]), rel=1e-8)
