import math
import warnings

import numpy as np
import pytest

from twapt.model import BathSpec, DiscreteModes, DrudeLorentz, OpenSystem, SystemModel

warnings.filterwarnings("ignore", message=".*TBB.*")

ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def qubit_system(window=(0.0, math.inf), lam=50.0, wc=100.0, delta=10.0):
    """Spin-boson qubit: eps = 50, Delta = 10, Drude-Lorentz bath at T = 0."""
    ch = DrudeLorentz(lam, wc, window)
    sysm = SystemModel([25.0, -25.0], [[0.0, delta], [delta, 0.0]], [[1.0], [-1.0]])
    psi = np.array([1.0, 1.0]) / math.sqrt(2.0)
    return OpenSystem(sysm, BathSpec((ch,), 0.0), np.outer(psi, psi))


def weak_system(delta=10.0):
    """Two states, each with its own weak Drude-Lorentz channel at 300 K."""
    chs = (DrudeLorentz(1.0, 53.08), DrudeLorentz(1.0, 53.08))
    sysm = SystemModel([100.0, 0.0], [[0.0, delta], [delta, 0.0]], np.eye(2))
    psi = np.array([1.0, 1.0]) / math.sqrt(2.0)
    return OpenSystem(sysm, BathSpec(chs, 300.0), np.outer(psi, psi))


def single_mode_system(delta=10.0, rho0=None, centers=None, temperature=300.0):
    """Donor-acceptor pair with one 500 cm^-1 mode, lam = 25 cm^-1, resonant gap."""
    modes = DiscreteModes.from_reorganizations([500.0], [25.0])
    sysm = SystemModel([500.0, 0.0], [[0.0, delta], [delta, 0.0]], [[0.0], [1.0]])
    rho0 = np.diag([1.0, 0.0]) if rho0 is None else rho0
    return OpenSystem(sysm, BathSpec((modes,), temperature, centers=centers), rho0)


def random_discrete_system(rng, M, K, centers=True, temperature=None, coupling=20.0):
    """Random M-state system with K discrete modes split over two channels."""
    C = 2
    eps = rng.uniform(-200, 200, M)
    V = rng.normal(0, coupling, (M, M))
    V = 0.5 * (V + V.T)
    np.fill_diagonal(V, 0.0)
    g = rng.normal(0, 1, (M, C))
    chans, cens = [], []
    per = [K // 2 + K % 2, K // 2]
    for c in range(C):
        n = max(per[c], 1)
        ch = DiscreteModes.from_reorganizations(rng.uniform(50, 800, n), rng.uniform(1, 30, n))
        chans.append(ch)
        if centers:
            w = ch.freqs / 5308.837
            sx = np.sqrt(0.5 * 5308.837 / w)
            cens.append(np.column_stack([rng.normal(0, 1, n) * sx, rng.normal(0, 1, n) * sx * w]))
        else:
            cens.append(None)
    T = rng.uniform(0, 400) if temperature is None else temperature
    A = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    rho = A @ A.conj().T
    rho /= np.trace(rho).real
    return OpenSystem(SystemModel(eps, V, g), BathSpec(tuple(chans), T, centers=tuple(cens)), rho)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
