import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twapt.engine import Engine, QuadratureSpec
from twapt.envmode import (coherent_variable, entropy, gaussian_phase_integral, mode_rdm,
                           mode_rdm_raw, probe_mode, process_rdm, simplex_points,
                           weyl_polynomial_xp, weyl_projection, weyl_quadratic)
from twapt.model import UNITS, NumericalGuardError, ValidationError
from twapt.oracle import run_oracle

from conftest import qubit_system, single_mode_system

HB = UNITS.hbar
OMEGA = 300.0


def _a(x, p):
    return coherent_variable(OMEGA, x, p)


def test_weyl_examples():
    assert weyl_projection(0, 0, OMEGA, 0.0, 0.0) == pytest.approx(2.0)
    x, p = 0.7, 0.02
    a = _a(x, p)
    g = math.exp(-2 * abs(a) ** 2)
    assert weyl_projection(1, 1, OMEGA, x, p) == pytest.approx((8 * abs(a) ** 2 - 2) * g)
    # Laguerre form -2 L_1(4|a|^2) e^{-2|a|^2}
    assert weyl_projection(1, 1, OMEGA, x, p) == pytest.approx(-2 * (1 - 4 * abs(a) ** 2) * g)
    assert weyl_projection(1, 0, OMEGA, x, p) == pytest.approx(4 * np.conj(a) * g)
    with pytest.raises(ValidationError):
        weyl_projection(-1, 0, OMEGA, x, p)


@given(st.integers(0, 4), st.integers(0, 4), st.floats(-3, 3), st.floats(-0.1, 0.1))
def test_weyl_conjugation_symmetry(n, m, x, p):
    assert np.conj(weyl_projection(n, m, OMEGA, x, p)) == pytest.approx(
        weyl_projection(m, n, OMEGA, x, p), abs=1e-12)


@given(st.integers(0, 3), st.integers(0, 3), st.floats(-3, 3), st.floats(-0.1, 0.1))
def test_weyl_polynomial_form(n, m, x, p):
    P = weyl_polynomial_xp(n, m, OMEGA)
    z = np.array([x, p])
    poly = sum(P[i, j] * x ** i * p ** j for i in range(P.shape[0]) for j in range(P.shape[1]))
    val = poly * math.exp(-0.5 * z @ weyl_quadratic(OMEGA) @ z)
    assert val == pytest.approx(weyl_projection(n, m, OMEGA, x, p), abs=1e-10)


def _pair_integral(n, m, n2, m2):
    A = weyl_polynomial_xp(n, m, OMEGA)
    B = weyl_polynomial_xp(n2, m2, OMEGA)
    prod = np.zeros((A.shape[0] + B.shape[0] - 1, A.shape[1] + B.shape[1] - 1), complex)
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            prod[i:i + B.shape[0], j:j + B.shape[1]] += A[i, j] * B
    return gaussian_phase_integral(prod, None, None, 2 * weyl_quadratic(OMEGA))


def test_weyl_trace_orthonormality():
    idx = range(4)
    for n in idx:
        for m in idx:
            for n2 in idx:
                for m2 in idx:
                    val = _pair_integral(n, m, m2, n2)
                    ref = 1.0 if (n == n2 and m == m2) else 0.0
                    assert abs(val - ref) < 1e-10, (n, m, n2, m2, val)


def test_weyl_phase_space_trace():
    for n in range(5):
        for m in range(5):
            val = gaussian_phase_integral(weyl_polynomial_xp(n, m, OMEGA), None, None,
                                          weyl_quadratic(OMEGA))
            assert abs(val - (n == m)) < 1e-10


def _ground_widths(omega):
    w = omega / HB
    return math.sqrt(HB / (2 * w)), math.sqrt(HB * w / 2)


def test_gaussian_integral_examples():
    widths = (3.0, 0.05)
    assert gaussian_phase_integral([[1.0]], (0.4, -0.01), widths) == pytest.approx(1.0)
    A, B = 0.3, 12.0
    c = (0.4, -0.01)
    ref = np.exp(1j * (A * c[0] + B * c[1]) - 0.5 * (widths[0] * A) ** 2 - 0.5 * (widths[1] * B) ** 2)
    assert gaussian_phase_integral([[1.0]], c, widths, phase=(A, B)) == pytest.approx(ref)
    gw = _ground_widths(OMEGA)
    for n in range(3):
        for m in range(3):
            val = gaussian_phase_integral(weyl_polynomial_xp(n, m, OMEGA), (0, 0), gw,
                                          weyl_quadratic(OMEGA))
            assert abs(val - (n == m == 0)) < 1e-12


def test_gaussian_integral_rejects():
    with pytest.raises(ValidationError):
        gaussian_phase_integral([[1.0]], None, None)
    with pytest.raises(ValidationError):
        gaussian_phase_integral([[1.0]], (0, 0), (0.0, 1.0))
    with pytest.raises(ValidationError):
        gaussian_phase_integral([[1.0]], (0, 0), (1.0, 1.0), -10 * np.eye(2))


def test_entropy_examples():
    assert entropy(np.diag([1.0, 0.0, 0.0])) == 0.0
    assert entropy(np.diag([0.5, 0.5, 0.0])) == pytest.approx(0.693147, abs=1e-6)
    assert entropy(np.eye(3) / 3) == pytest.approx(1.098612, abs=1e-6)
    with pytest.raises(ValidationError):
        entropy(np.diag([0.5, 0.4]))


def test_process_rdm_clips_and_guards():
    rho = np.diag([0.7, 0.3 + 1e-3, -1e-10])
    out = process_rdm(rho)
    assert np.trace(out) == pytest.approx(1.0)
    assert np.linalg.eigvalsh(out).min() >= 0.0
    with pytest.raises(NumericalGuardError):
        process_rdm(np.diag([1.1, -0.1]))


def test_simplex_weights_integrate_polynomials():
    dt, m = 0.5, 20
    t = m * dt
    _, w1 = simplex_points(1, m, dt)
    assert w1.sum() == pytest.approx(t)
    idx, w2 = simplex_points(2, m, dt)
    assert w2.sum() == pytest.approx(t * t / 2)
    assert np.all(idx[:, 1] <= idx[:, 2])


def test_probe_mode_definitions():
    osys = single_mode_system()
    pr = probe_mode(osys, 0, 500.0)
    assert pr.x0 == pytest.approx(osys.bath.channels[0].x0[0])
    with pytest.raises(ValidationError):
        probe_mode(osys, 0, 400.0)
    q = qubit_system()
    pr = probe_mode(q, 0, 50.0, K=300)
    lam = 0.5 * (UNITS.to_fs(50.0) * pr.x0) ** 2
    d_omega = 1000.0 / 300
    assert lam == pytest.approx(q.bath.channels[0].J(50.0) * d_omega / (math.pi * 50.0))


def test_mode_rdm_requires_local_basis():
    osys = single_mode_system()
    eng = Engine(osys, QuadratureSpec(50.0, 11), "eigen")
    with pytest.raises(ValidationError):
        mode_rdm_raw(eng, probe_mode(osys, 0, 500.0), 5)


def test_mode_rdm_ground_state_at_origin():
    q = qubit_system()
    eng = Engine(q, QuadratureSpec(100.0, 21))
    rho = mode_rdm(eng, probe_mode(q, 0, 100.0), 0)
    ref = np.zeros((3, 3))
    ref[0, 0] = 1.0
    assert np.allclose(rho, ref, atol=1e-14)
    assert entropy(rho) == 0.0


def test_mode_stays_pure_without_transitions():
    osys = single_mode_system(delta=0.0, temperature=0.0)
    eng = Engine(osys, QuadratureSpec(200.0, 41))
    pr = probe_mode(osys, 0, 500.0)
    for m in (10, 25, 40):
        rho = mode_rdm(eng, pr, m, n_max=4)
        assert entropy(rho) < 1e-6


@pytest.mark.parametrize("centers", [None, (np.array([[0.001, 2.0]]),)])
def test_mode_rdm_matches_dense_oracle(centers):
    osys = single_mode_system(delta=10.0, rho0=np.array([[0.7, 0.3], [0.3, 0.3]]), centers=centers)
    spec = QuadratureSpec(150.0, 151)
    eng = Engine(osys, spec)
    orc = run_oracle(osys, spec.times, 30)
    pr = probe_mode(osys, 0, 500.0)
    for m in (0, 50, 150):
        raw = mode_rdm_raw(eng, pr, m, 3)
        r = sum(raw.values())
        assert np.max(np.abs(r - orc.rho_modes[0][m][:4, :4])) < 2e-4
