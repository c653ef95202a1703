import numpy as np
import pytest

from conftest import make_patch
from instfuse.components import component_aggregates, connected_components, icc_messages
from instfuse.core import GlobalLabelMap, PixelGrid, default_config
from instfuse.meanfield import prepare
from instfuse.oracle import (
    OracleReport,
    OracleSizeError,
    cnn_matrix,
    energy,
    exact_gaussian_filter,
    exact_meanfield_step,
    exact_run,
    flood_components,
    naive_icc,
    relative_error,
    smoothness_matrix,
)
from instfuse.potentials import cnn_kernel_value

ZERO = dict(w_smo=0.0, w_cnn_large=0.0, w_cnn_medium=0.0, w_cnn_small=0.0, w_icc=0.0)


def test_exact_filter_single_point():
    assert exact_gaussian_filter([[0.3, 0.1]], [[1.0]])[0, 0] == 1.0


def test_exact_filter_two_points():
    d = 1.3
    out = exact_gaussian_filter([[0.0], [d]], [[0.0], [1.0]])
    assert out[0, 0] == pytest.approx(np.exp(-(d**2) / 2), rel=1e-15)


def test_exact_filter_linearity(rng):
    pts = rng.normal(size=(40, 3))
    v1, v2 = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
    lhs = exact_gaussian_filter(pts, 2.0 * v1 - 0.5 * v2)
    rhs = 2.0 * exact_gaussian_filter(pts, v1) - 0.5 * exact_gaussian_filter(pts, v2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_cnn_matrix_agrees_with_kernel_value(rng):
    p = make_patch(rng.dirichlet(np.ones(6), (2, 3)))
    probs = p.flat_probs()
    for t in range(-2, 3):
        K = cnn_matrix(p, t, 0.2)
        for i in range(6):
            np.testing.assert_allclose(K[i], cnn_kernel_value(probs[i], probs, t, 0.2), rtol=1e-13)


def test_smoothness_matrix_is_symmetric(rng):
    p = make_patch(rng.dirichlet(np.ones(6), (3, 3)))
    K = smoothness_matrix(p, 0.2, 40.0)
    np.testing.assert_allclose(K, K.T)
    np.testing.assert_allclose(np.diag(K), 1.0)


def test_flood_components_match_fast(rng):
    for conn in (4, 8):
        m = rng.uniform(size=(15, 15)) < 0.5
        np.testing.assert_array_equal(flood_components(m, conn), connected_components(m, conn).membership)


def test_naive_icc_single_component():
    q = np.full((4, 10), 0.1)
    assert np.all(naive_icc(q, np.array([[0, 0], [0, -1]]), 1.0) == 0)


def test_naive_icc_hand_values():
    member = np.array([[0, 0, -1, 1, 1]])
    q = np.zeros((5, 10))
    q[0, 1] = q[1, 2] = 1.0
    q[3, 1] = 1.0
    q[4, 1] = q[4, 3] = 0.5
    out = naive_icc(q, member, 1.0)
    # component 1 averages to [.., 1: 0.75, 3: 0.25]; component 0 to [1: 0.5, 2: 0.5]
    assert out[0, 1] == 0.75 and out[0, 3] == 0.25 and out[0].sum() == 1.0
    assert out[3, 1] == 0.5 and out[3, 2] == 0.5
    assert np.all(out[2] == 0)


def test_naive_icc_matches_fast(rng):
    m = rng.uniform(size=(24, 24)) < 0.5
    cs = connected_components(m)
    q = rng.dirichlet(np.ones(10), 576)
    rel = relative_error(icc_messages(component_aggregates(q, cs), cs, 1.0), naive_icc(q, cs.membership, 1.0))
    assert rel.max() <= 1e-12


def test_exact_step_zero_weights():
    grid = PixelGrid(2, 2)
    st = prepare([make_patch(np.full((2, 2, 6), 1 / 6))], grid, default_config().replace(**ZERO))
    np.testing.assert_allclose(exact_meanfield_step(st).q, 0.1, rtol=1e-15)


def test_exact_step_hand_two_pixels():
    # identical softmaxes, adjacent pixels: smoothness kernel k = exp(-1 / (2 * 40^2))
    grid = PixelGrid(2, 1)
    p = [[[0.5, 0.5, 0, 0, 0, 0]] * 2]
    cfg = default_config().replace(w_cnn_large=0.0, w_icc=0.0)
    st = prepare([make_patch(p)], grid, cfg)
    k = np.exp(-1.0 / (2 * 40.0**2))
    g = k * 0.1 / (1 + k)
    msg = 9 * g  # every label sees nine others
    expected = np.exp(-msg) / (10 * np.exp(-msg))
    np.testing.assert_allclose(exact_meanfield_step(st).q, expected, rtol=1e-14)


def test_exact_run_refuses_large_grids():
    grid = PixelGrid(65, 2)
    with pytest.raises(OracleSizeError):
        exact_run([make_patch(np.full((2, 65, 6), 1 / 6))], grid, default_config())


def test_energy_zero_weights_and_single_pixel(rng):
    grid = PixelGrid(2, 2)
    p = make_patch(rng.dirichlet(np.ones(6), (2, 2)))
    y = GlobalLabelMap.from_array(np.array([[1, 2], [2, 1]]))
    assert energy(y, [p], np.full((2, 2), -1), default_config().replace(**ZERO)) == 0.0
    one = PixelGrid(1, 1)
    y1 = GlobalLabelMap.from_array(np.array([[3]]))
    cfg = default_config().replace(w_icc=0.0)
    assert energy(y1, [make_patch(rng.dirichlet(np.ones(6), (1, 1)))], np.full((1, 1), -1), cfg) == 0.0


def test_energy_hand_two_pixels():
    p = make_patch([[[0, 1, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0]]])
    cfg = default_config().replace(w_smo=0.0, w_icc=2.0)
    member = np.array([[0, 1]])
    # labels (1, 3): only the t > 0 shifts have mu = -1; the t = 1 kernel is exactly 1
    y = GlobalLabelMap.from_array(np.array([[1, 3]]))
    e = energy(y, [p], member, cfg)
    K1 = cnn_matrix(p, 1, cfg.theta_cnn)[0, 1]
    K2 = cnn_matrix(p, 2, cfg.theta_cnn)[0, 1]
    assert K1 == 1.0
    assert e == pytest.approx(-(K1 + K2), abs=1e-15)
    same = GlobalLabelMap.from_array(np.array([[4, 4]]))
    K0 = cnn_matrix(p, 0, cfg.theta_cnn)[0, 1]
    assert energy(same, [p], member, cfg) == pytest.approx(-K0 + 2.0, abs=1e-15)


def test_report_lines():
    r = OracleReport()
    r.add("ok", np.ones(3), np.ones(3), 1e-12, 1e-12)
    r.add("bad", np.array([2.0]), np.array([1.0]), 0.5, None)
    assert not r.passed
    lines = r.lines()
    assert lines[0].startswith("PASS ok") and lines[1].startswith("FAIL bad")
