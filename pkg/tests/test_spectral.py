import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (critical_pair, dense_crossing, dense_mode_matrix, diagonal_test_matrix,
                     jordan_test_matrix, nearest_eigenvalue)
from shockbif.discretization import Grid1D
from shockbif.errors import ConfigError, NearSpectrumError, SimplicityError, SpectralError, \
    TrackingError
from shockbif.model import OperatorFamily, rank_one_family
from shockbif.spectral import (BlockOperator, Contour, DenseOperator, EigenTracker,
                               SpectralProjector, dunford_partial_inverse, dunford_project,
                               extract_eigenpair, fix_gauge, galilean_shift, left_eigenvector,
                               track_crossing)


def probes(n, count=20, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))


def test_contour_quadrature_and_validation():
    c = Contour(0.5j, 0.3, 16)
    assert c.circle_check() == pytest.approx(2j * np.pi)
    assert c.encloses(0.5j + 0.29) and not c.encloses(0.5j + 0.31)
    assert c.doubled().Q == 32
    for bad in [dict(radius=0.0), dict(Q=12)]:
        with pytest.raises(ConfigError):
            Contour(0.0, bad.get("radius", 1.0), bad.get("Q", 16))


def test_projector_of_a_diagonalizable_matrix():
    M, S = diagonal_test_matrix([0.05, 1.0, -2.0, 3.0 + 1.0j, 0.5 - 0.5j], seed=4)
    Sinv = np.linalg.inv(S)
    exact = np.outer(S[:, 0], Sinv[0])
    op = DenseOperator(M)
    P = np.column_stack([dunford_project(op, Contour(0.0, 0.3, 64), e) for e in np.eye(5)])
    np.testing.assert_allclose(P, exact, atol=1e-10)


def test_jordan_block_projector_and_partial_inverse():
    M, E = jordan_test_matrix(seed=2)
    op = DenseOperator(M)
    proj = SpectralProjector(op, Contour(0.3, 0.5, 64))
    X = probes(4)
    np.testing.assert_allclose(proj.apply(X), E @ X, atol=1e-9)
    # contour about 0 enclosing the Jordan block: L L^dagger = I - Pi
    proj0 = SpectralProjector(op, Contour(0.0, 0.8, 128))
    np.testing.assert_allclose(M @ proj0.partial_inverse(X), X - E @ X, atol=1e-8)
    np.testing.assert_allclose(proj0.partial_inverse(M @ X), X - E @ X, atol=1e-8)


def test_rank_detects_a_double_eigenvalue():
    M, _ = jordan_test_matrix(seed=1)
    with pytest.raises(SimplicityError):
        extract_eigenpair(DenseOperator(M), Contour(0.3, 0.5, 64))
    pair = extract_eigenpair(DenseOperator(M), Contour(0.3, 0.5, 64), require_simple=False)
    assert pair.multiplicity == 2
    np.testing.assert_allclose(pair.cluster, [0.3, 0.3], atol=1e-5)


def test_empty_contour_is_reported():
    M, _ = diagonal_test_matrix([1.0, 2.0, 3.0])
    with pytest.raises(SimplicityError):
        extract_eigenpair(DenseOperator(M), Contour(10.0, 0.5, 16))


def test_quadrature_node_on_the_spectrum():
    M = np.diag([0.5, 2.0]).astype(complex)
    with pytest.raises(NearSpectrumError):
        SpectralProjector(DenseOperator(M), Contour(0.0, 0.5, 4))


def test_partial_inverse_needs_zero_inside():
    M = np.diag([0.5, 2.0]).astype(complex)
    with pytest.raises(SpectralError):
        dunford_partial_inverse(DenseOperator(M), Contour(2.0, 0.1, 16), np.ones(2))


def test_burgers_zero_mode_projector_identities(burgers801):
    op = burgers801.mode(0.0, 0)
    proj = SpectralProjector(op, Contour(0.0, 0.1, 32))
    X = probes(op.size, 20)
    for j in range(X.shape[1]):
        x = X[:, j]
        px = proj.apply(x)
        scale = np.linalg.norm(x)
        assert np.linalg.norm(proj.apply(px) - px) <= 1e-8 * scale
        lx = proj.partial_inverse(x)
        assert np.linalg.norm(op.matvec(lx) - (x - px)) <= 1e-8 * scale
        assert np.linalg.norm(proj.partial_inverse(op.matvec(x)) - (x - px)) <= 1e-8 * scale
        assert np.linalg.norm(proj.partial_inverse(px)) <= 1e-8 * scale


def test_projector_is_independent_of_the_radius(burgers801):
    op = burgers801.mode(0.0, 0)
    X = probes(op.size, 5)
    a = SpectralProjector(op, Contour(0.0, 0.05, 32)).apply(X[:, 0])
    b = SpectralProjector(op, Contour(0.0, 0.1, 64)).apply(X[:, 0])
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(X[:, 0])


def test_adaptive_doubling_reaches_tolerance():
    M, _ = diagonal_test_matrix([0.05, 0.6, -0.7])
    proj = SpectralProjector(DenseOperator(M), Contour(0.0, 0.3, 4), adaptive=True)
    assert proj.contour.Q > 4


def test_threaded_projection_is_bit_identical(burgers801):
    op = burgers801.mode(0.0, 0)
    x = probes(op.size, 1)[:, 0]
    a = SpectralProjector(op, Contour(0.0, 0.1, 16), threads=1).apply(x)
    op.clear_cache()
    b = SpectralProjector(op, Contour(0.0, 0.1, 16), threads=3).apply(x)
    assert np.array_equal(a, b)


def test_eigenpair_gauge_and_left_vector():
    g = Grid1D(20.0, 201)
    fam = OperatorFamily(rank_one_family(2), g)
    op = fam.mode(0.0, 2)
    proj = SpectralProjector(op, Contour(1j, 0.2, 32))
    pair = extract_eigenpair(op, projector=proj)
    assert abs(pair.lam - 1j) <= 1e-9
    v = pair.vector
    j = np.argmax(np.abs(v))
    assert v[j].imag == 0 and v[j].real > 0
    assert np.sqrt(g.h) * np.linalg.norm(v) == pytest.approx(1.0)
    h = left_eigenvector(proj, v)
    assert abs(np.vdot(h, v) - 1) <= 1e-12
    x = probes(op.size, 1)[:, 0]
    np.testing.assert_allclose(proj.apply(x), v * np.vdot(h, x), atol=1e-8)
    _, v_ref, _ = critical_pair(op.dense(), 1j, g.h)
    np.testing.assert_allclose(v, v_ref, atol=1e-8)


def test_block_operator_projects_each_block():
    M1, _ = diagonal_test_matrix([0.05, 2.0])
    M2, _ = diagonal_test_matrix([-3.0, 4.0], seed=3)
    op = BlockOperator([DenseOperator(M1), DenseOperator(M2)])
    pair = extract_eigenpair(op, Contour(0.0, 0.2, 32))
    assert pair.lam == pytest.approx(0.05)
    assert np.linalg.norm(pair.vector[2:]) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(phase=st.floats(0, 2 * np.pi))
def test_gauge_removes_a_global_phase(phase):
    v = np.array([0.3, -1.2 + 0.4j, 0.5j])
    np.testing.assert_allclose(fix_gauge(np.exp(1j * phase) * v), fix_gauge(v), atol=1e-14)


def test_galilean_shift_on_the_synthetic_model(o2_family):
    lam0 = EigenTracker(o2_family, 1, 0.0).at(0.01, [0.0]).lam
    for d in (0.4, -1.3):
        lam_d = EigenTracker(o2_family, 1, d, radius=0.1).at(0.01, [galilean_shift(lam0, 1, d)]).lam
        assert abs(lam_d - galilean_shift(lam0, 1, d)) <= 1e-10


def test_rank_one_crossing_is_exact():
    g = Grid1D(20.0, 201)
    fam = OperatorFamily(rank_one_family(2), g)
    rep = track_crossing(fam, 2, np.linspace(-0.5, 0.5, 5), guess=-0.5 + 1j, radius=0.1)
    assert abs(rep.eps_crit) <= 1e-6
    assert abs(rep.lambda_prime - 1) <= 1e-6
    assert rep.d_bar == pytest.approx(0.5)


def test_synthetic_crossing_matches_dense_oracle(o2_family, o2_crossing):
    g = o2_family.grid
    ubar = o2_family.profile(0.0).ubar[0]
    shape = np.exp(-g.x**2)
    M = lambda e: dense_mode_matrix(g.x, ubar, 1, potential=-(1.79 + e) * shape)
    ref = dense_crossing(M, -0.05, 0.05)
    assert abs(o2_crossing.eps_crit - ref) <= 1e-7
    assert abs(o2_crossing.lambda_crit) <= 1e-8
    assert o2_crossing.lambda_prime.real < 0


def test_crossing_report_json(tmp_path, o2_crossing):
    path = tmp_path / "crossing.json"
    o2_crossing.to_json(path)
    data = json.loads(path.read_text())
    assert {"k_star", "eps_crit", "lambda_prime_re", "lambda_prime_im", "d_bar",
            "samples"} <= set(data)
    assert len(data["samples"]) == 3
    assert o2_crossing.lam_interp(o2_crossing.eps[1]) == pytest.approx(o2_crossing.lam[1])


def test_no_sign_change_is_a_tracking_error(o2_family):
    with pytest.raises(TrackingError):
        track_crossing(o2_family, 1, np.linspace(0.01, 0.05, 3))
