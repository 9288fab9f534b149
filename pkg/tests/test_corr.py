import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from twapt.corr import (Kernels, basis_kernels, channel_kernels, classical_trajectory,
                        discrete_g, gauss_legendre, integrated_trajectory, phi_G, phi_H, phi_tot,
                        phi_tot_trajectory)
from twapt.engine import PathTables
from twapt.model import (UNITS, BathSpec, DiscreteModes, DrudeLorentz, OpenSystem, SystemModel,
                         ValidationError, discretize_channel)
from twapt.pathways import LiouvillePathway, enumerate_pathways

from conftest import random_discrete_system

HB = UNITS.hbar


def _quad_sin(f, t):
    """int_0^inf f(w) sin(w t / hbar) dw with w in cm^-1 (QAWF for the tail)."""
    if t == 0:
        return 0.0
    head = quad(lambda w: f(w) * math.sin(w * t / HB), 0, 1.0, limit=400, epsabs=1e-14)[0]
    tail = quad(f, 1.0, np.inf, weight="sin", wvar=t / HB, limlst=200)[0]
    return head + tail


def _quad_cos(f, t, lo=0.0):
    head = quad(lambda w: f(w) * math.cos(w * t / HB), lo, lo + 1.0, limit=400, epsabs=1e-14)[0]
    tail = quad(f, lo + 1.0, np.inf, weight="cos", wvar=t / HB, limlst=200)[0]
    return head + tail


def test_gauss_legendre_exact_for_polynomials():
    x, w = gauss_legendre(0.0, 2.0, 3)
    assert np.sum(w * x ** 20) == pytest.approx(2.0 ** 21 / 21, rel=1e-13)
    x, w = gauss_legendre(0.0, 50.0, 40)
    assert np.sum(w * np.cos(x)) == pytest.approx(math.sin(50.0), abs=1e-12)


@pytest.mark.parametrize("t", [1.0, 20.0, 150.0, 500.0])
def test_h_closed_form_matches_quadrature(t):
    ch = DrudeLorentz(50.0, 100.0)
    bath = BathSpec((ch,), 0.0)
    h = channel_kernels(ch, bath, np.array([t]), ("h",))["h"][0]
    # h = (1/pi) int J / w^2 sin(w t) dw with w in fs^-1, i.e. hbar/pi int J/w^2 sin dw(cm)
    ref = HB / math.pi * _quad_sin(lambda w: float(ch.J(w)) / w ** 2, t)
    assert h == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("t", [5.0, 80.0, 400.0])
def test_jc_closed_form_matches_quadrature(t):
    ch = DrudeLorentz(50.0, 100.0)
    bath = BathSpec((ch,), 0.0)
    jc = channel_kernels(ch, bath, np.array([t]), ("Jc",))["Jc"][0]
    ref = 2.0 / math.pi * _quad_cos(lambda w: float(ch.J(w)) / w, t)
    assert jc == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_windowed_low_cut_kernels():
    ch = DrudeLorentz(50.0, 100.0, (57.735, math.inf))
    bath = BathSpec((ch,), 0.0)
    t = np.array([30.0, 200.0])
    h = channel_kernels(ch, bath, t, ("h",))["h"]
    for ti, hi in zip(t, h):
        f = lambda w: float(DrudeLorentz(50.0, 100.0).J(w)) / w ** 2
        ref = HB / math.pi * (_quad_sin(f, ti)
                              - quad(lambda w: f(w) * math.sin(w * ti / HB), 0, 57.735, epsabs=1e-14)[0])
        assert hi == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("T", [0.0, 300.0])
def test_dg_matches_lineshape_integral(T):
    ch = DrudeLorentz(1.0, 53.08)
    bath = BathSpec((ch,), T)
    t = np.array([10.0, 100.0, 1000.0])
    dg = channel_kernels(ch, bath, t, ("dg",))["dg"]
    coth = (lambda w: 1.0) if T == 0 else (lambda w: 1.0 / math.tanh(w / (2 * UNITS.kB * T)))
    for ti, val in zip(t, dg):
        f = lambda w: float(ch.J(w)) / w ** 2 * coth(w)
        head = quad(lambda w: f(w) * (1 - math.cos(w * ti / HB)), 0, 1.0, limit=2000, epsabs=1e-13)[0]
        rest = quad(f, 1.0, np.inf, limit=400, epsabs=1e-15)[0] - \
            quad(f, 1.0, np.inf, weight="cos", wvar=ti / HB, limlst=200)[0]
        # with s = hbar coth / 2 and w in cm^-1 the prefactor becomes hbar / pi
        ref = -HB * (head + rest) / math.pi
        assert val == pytest.approx(ref, rel=1e-6)


def test_kernel_parity_and_origin():
    ch = DrudeLorentz(20.0, 80.0, (0.0, 400.0))
    bath = BathSpec((ch,), 300.0)
    t = np.array([-120.0, -7.0, 0.0, 7.0, 120.0])
    k = channel_kernels(ch, bath, t)
    for tag in ("h", "I", "M"):
        assert np.allclose(k[tag], -k[tag][::-1], atol=1e-14)
    for tag in ("dg", "Jc", "L"):
        assert np.allclose(k[tag], k[tag][::-1], atol=1e-14)
    assert k["h"][2] == 0.0 and k["dg"][2] == 0.0
    assert np.all(k["dg"] <= 0.0)


def test_discrete_g_differences():
    m = DiscreteModes.from_reorganizations([150.0, 420.0], [3.0, 7.0])
    bath = BathSpec((m,), 300.0)
    t = np.linspace(0, 300, 7)
    dg = channel_kernels(m, bath, t, ("dg",))["dg"]
    assert np.allclose(dg, discrete_g(m, bath, t) - discrete_g(m, bath, 0.0), atol=1e-12)


def test_discrete_h_converges_to_closed_form():
    ch = DrudeLorentz(50.0, 100.0)
    bath = BathSpec((ch,), 0.0)
    t = np.linspace(0, 500, 251)
    ref = channel_kernels(ch, bath, t, ("h",))["h"]
    disc = discretize_channel(ch, 300, 1000.0)
    h = channel_kernels(disc, BathSpec((disc,), 0.0), t, ("h",))["h"]
    assert np.max(np.abs(h - ref)) / np.max(np.abs(ref)) < 1e-3


def _kern(rng, M=3):
    osys = random_discrete_system(rng, M, 3, centers=False)
    return osys, basis_kernels(osys, "local")


def test_indexed_kernel_symmetries(rng):
    _, kern = _kern(rng)
    t = np.array([0.0, 13.0, 250.0])
    for a, b, c, d in [(0, 1, 2, 1), (1, 2, 0, 0), (2, 0, 1, 2)]:
        H = kern.h_kernel(a, b, c, d, t)
        assert np.allclose(H, -kern.h_kernel(b, a, c, d, t))
        assert np.allclose(H, kern.h_kernel(a, b, d, c, t))
        assert np.allclose(kern.h_kernel(a, b, c, d, -t), -H)
        assert H[0] == 0.0
        G = kern.g_kernel_diff(a, b, c, d, t, 0.5 * t)
        assert np.allclose(G, kern.g_kernel_diff(c, d, a, b, t, 0.5 * t))
        assert np.allclose(G, kern.g_kernel_diff(b, a, d, c, t, 0.5 * t))
        assert np.allclose(G, -kern.g_kernel_diff(a, b, c, d, 0.5 * t, t))
        assert np.allclose(kern.g_kernel_diff(a, b, c, d, t, t), 0.0)
    assert kern.h_kernel(1, 1, 0, 2, t) == pytest.approx(np.zeros(3))


def test_h_kernel_derivative_is_k_combination(rng):
    _, kern = _kern(rng)
    t = np.array([5.0, 40.0, 180.0])
    e = 1e-3
    for a, b, c, d in [(0, 1, 2, 1), (1, 2, 0, 0), (2, 0, 1, 2)]:
        fd = (kern.h_kernel(a, b, c, d, t + e) - kern.h_kernel(a, b, c, d, t - e)) / (2 * e)
        K = 0.5 * (kern.appendix_kernel("K", (c, c), (a, b), t)
                   + kern.appendix_kernel("K", (d, d), (a, b), t))
        assert np.allclose(fd, K, rtol=1e-6, atol=1e-9)


def test_appendix_kernels_need_G():
    kern = Kernels(BathSpec((DrudeLorentz(1, 1),), 0.0), [[1.0], [0.0]])
    with pytest.raises(ValidationError):
        kern.appendix_kernel("I", (0, 1), (0, 0), 1.0)
    with pytest.raises(ValidationError):
        Kernels(BathSpec((DrudeLorentz(1, 1),), 0.0), [[1.0, 0.0], [0.0, 1.0]])


def test_zeroth_order_phase_is_dephasing(rng):
    osys, kern = _kern(rng, 2)
    p = LiouvillePathway((0,), (1,))
    phi = phi_tot(kern, p, [0.0, 200.0])
    assert phi.real < 0
    assert phi_G(kern, p, [0.0, 200.0]).imag == 0.0
    assert phi_H(kern, LiouvillePathway((1,), (1,)), [0.0, 50.0]) == 0.0
    with pytest.raises(ValidationError):
        phi_tot(kern, p, [0.0, 1.0, 2.0])
    with pytest.raises(ValidationError):
        phi_tot(kern, p, [1.0, 2.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3), st.integers(2, 3))
def test_phi_tot_matches_trajectory_route(seed, N, M):
    rng = np.random.default_rng(seed)
    osys = random_discrete_system(rng, M, 3, centers=False)
    kern = basis_kernels(osys, "local")
    paths = enumerate_pathways(M, N, (int(rng.integers(M)), int(rng.integers(M))))
    path = paths[int(rng.integers(len(paths)))]
    tau = np.concatenate([[0.0], np.sort(rng.uniform(0, 300, N + 1))])
    omegas, X = [], []
    for c, ch in enumerate(osys.bath.channels):
        for k in range(ch.freqs.size):
            omegas.append(ch.freqs[k])
            X.append(ch.x0[k] * osys.system.coefficients[:, c])
    sxsp = osys.bath.sxsp(np.array(omegas))
    ref = phi_tot_trajectory(path, tau, omegas, np.array(X), sxsp)
    val = phi_tot(kern, path, tau)
    assert val == pytest.approx(ref, rel=1e-9, abs=1e-10)


def test_trajectory_integral_matches_quadrature():
    p = LiouvillePathway((0, 1, 1), (0, 0, 1))
    tau = [0.0, 40.0, 90.0, 160.0]
    xs = [0.0, 0.02]
    for j in range(3):
        num = quad(lambda s: classical_trajectory(p, tau, 300.0, xs, (0.01, 0.3), s)[0],
                   tau[j], tau[j + 1], epsabs=1e-14)[0]
        assert integrated_trajectory(p, tau, 300.0, xs, (0.01, 0.3), j) == pytest.approx(num, rel=1e-9)


def _engine_phase(tb, path, idx):
    L, const = tb.log_tables(path)
    tot = const
    for u in range(len(idx)):
        for v in range(u + 1, len(idx)):
            tot += L[u, v, idx[v] - idx[u]]
    t = tb.times
    for j, (a, b) in enumerate(path.pairs):
        tot += 1j / HB * (tb.E[a] - tb.E[b]) * (t[idx[j + 1]] - t[idx[j]])
    return tot


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3))
def test_engine_pair_tables_reproduce_phi(seed, N):
    rng = np.random.default_rng(seed)
    osys = random_discrete_system(rng, 2, 2, centers=False)
    times = np.linspace(0, 200, 41)
    tb = PathTables(osys, times, "local")
    kern = basis_kernels(osys, "local")
    paths = enumerate_pathways(2, N, (0, 1))
    path = paths[int(rng.integers(len(paths)))]
    idx = [0] + sorted(rng.integers(0, 41, N).tolist()) + [40]
    val = _engine_phase(tb, path, idx)
    assert val == pytest.approx(phi_tot(kern, path, times[idx]), rel=1e-10, abs=1e-12)


def test_engine_center_phase_matches_classical_drive(rng):
    osys = random_discrete_system(rng, 2, 2, centers=True)
    bare = OpenSystem(osys.system, BathSpec(osys.bath.channels, osys.bath.temperature), osys.rho0)
    times = np.linspace(0, 150, 31)
    path = LiouvillePathway((0, 1, 1), (0, 0, 1))
    idx = [0, 7, 19, 30]
    diff = (_engine_phase(PathTables(osys, times), path, idx)
            - _engine_phase(PathTables(bare, times), path, idx))
    tau = times[idx]
    ref = 0.0
    for c, (ch, cen) in enumerate(zip(osys.bath.channels, osys.bath.centers)):
        g = osys.system.coefficients[:, c]
        for k in range(ch.freqs.size):
            w = ch.freqs[k] / HB
            A = B = 0.0
            for j, (a, b) in enumerate(path.pairs):
                dx = ch.x0[k] * (g[a] - g[b])
                A += w / HB * dx * (math.sin(w * tau[j + 1]) - math.sin(w * tau[j]))
                B -= dx / HB * (math.cos(w * tau[j + 1]) - math.cos(w * tau[j]))
            ref += 1j * (A * cen[k, 0] + B * cen[k, 1])
    assert diff == pytest.approx(ref, rel=1e-10)
