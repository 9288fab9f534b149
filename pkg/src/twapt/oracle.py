"""Dense reference propagation of the system plus a few truncated Fock modes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import UNITS, DiscreteModes, NumericalGuardError, OpenSystem, ValidationError

MAX_DIM = 20000


@dataclass(frozen=True)
class DenseModel:
    H: np.ndarray
    M: int
    dims: tuple
    omegas: np.ndarray  # cm^-1
    X: np.ndarray  # (K, M) per-state displacements

    @property
    def dim(self):
        return self.H.shape[0]


def _ladder(d):
    return np.diag(np.sqrt(np.arange(1, d)), 1)


def _embed(op, k, dims):
    out = np.ones((1, 1))
    for q, d in enumerate(dims):
        out = np.kron(out, op if q == k else np.eye(d))
    return out


def dense_modes(osys: OpenSystem):
    """Per-mode frequencies and per-state displacements of the discrete channels."""
    om, X = [], []
    g = osys.system.coefficients
    for c, ch in enumerate(osys.bath.channels):
        if not isinstance(ch, DiscreteModes):
            raise ValidationError("the dense oracle needs discrete channels")
        for k in range(ch.freqs.size):
            om.append(ch.freqs[k])
            X.append(ch.x0[k] * g[:, c])
    return np.array(om), np.array(X)


def build_hamiltonian(osys: OpenSystem, fock_dims, units=UNITS) -> DenseModel:
    """H = sum_n |n><n| (eps_n + sum_k [hbar w (a^+a + 1/2) - w^2 x_k^(n) x_k + w^2 x_k^(n)^2 / 2]) + Delta."""
    omegas, X = dense_modes(osys)
    dims = tuple(int(d) for d in np.broadcast_to(fock_dims, omegas.shape))
    M = osys.system.M
    D = int(np.prod(dims)) if dims else 1
    if M * D > MAX_DIM:
        raise NumericalGuardError(f"dense dimension {M * D} exceeds {MAX_DIM}")
    hb = units.hbar
    H = np.zeros((M * D, M * D), complex)
    bath_free = np.zeros((D, D))
    xops = []
    for k, (om, d) in enumerate(zip(omegas, dims)):
        a = _ladder(d)
        bath_free += _embed(om * (a.T @ a + 0.5 * np.eye(d)), k, dims)
        w = om / hb
        xops.append(_embed(math.sqrt(hb / (2 * w)) * (a + a.T), k, dims))
    for n in range(M):
        blk = bath_free + osys.system.energies[n] * np.eye(D)
        for k, om in enumerate(omegas):
            w = om / hb
            blk = blk - w ** 2 * X[k, n] * xops[k] + 0.5 * w ** 2 * X[k, n] ** 2 * np.eye(D)
        H[n * D:(n + 1) * D, n * D:(n + 1) * D] = blk
    H += np.kron(osys.system.couplings, np.eye(D))
    if np.max(np.abs(H - H.conj().T)) > 1e-10:
        raise NumericalGuardError("dense Hamiltonian is not Hermitian")
    return DenseModel(H, M, dims, omegas, X)


def mode_state(omega, d, bath, center=None, units=UNITS):
    """Initial single-mode density: thermal (or ground) state, optionally displaced."""
    hb = units.hbar
    n = np.arange(d)
    if bath.width_rule == "groundState" or bath.temperature == 0:
        p = (n == 0).astype(float)
    else:
        x = omega / (units.kB * bath.temperature)
        p = np.exp(-x * n)
        p /= p.sum()
        tail = math.exp(-x * d)
        if tail > 1e-10:
            raise NumericalGuardError(f"Fock dimension {d} too small for the thermal state")
    rho = np.diag(p).astype(complex)
    if center is not None and np.any(center):
        w = omega / hb
        alpha = math.sqrt(w / (2 * hb)) * (center[0] + 1j * center[1] / w)
        a = _ladder(d)
        gen = alpha * a.T - np.conj(alpha) * a
        Dop = expm(gen)
        rho = Dop @ rho @ Dop.conj().T
    return rho


def initial_density(osys: OpenSystem, dense: DenseModel, units=UNITS):
    rho = np.asarray(osys.rho0, complex)
    cen = []
    for ch, ce in zip(osys.bath.channels, osys.bath.centers):
        cen.extend([None] * ch.freqs.size if ce is None else list(ce))
    for k, (om, d) in enumerate(zip(dense.omegas, dense.dims)):
        rho = np.kron(rho, mode_state(om, d, osys.bath, cen[k], units))
    return rho


@dataclass
class OracleResult:
    times: np.ndarray
    rho_sys: np.ndarray  # (T, M, M)
    rho_modes: list  # per mode (T, d, d)
    energy: np.ndarray
    trace: np.ndarray
    herm_err: np.ndarray

    def bloch(self):
        r = self.rho_sys
        return np.stack([2 * r[:, 0, 1].real, -2 * r[:, 0, 1].imag,
                         (r[:, 0, 0] - r[:, 1, 1]).real], axis=1)

    def purity(self):
        return np.einsum("tab,tba->t", self.rho_sys, self.rho_sys).real

    def populations(self):
        return np.einsum("taa->ta", self.rho_sys).real


def _partial(rho, M, dims, keep):
    """Reduced density of subsystem keep (0 = system, k+1 = mode k)."""
    shape = (M,) + tuple(dims)
    r = rho.reshape(shape + shape)
    n = len(shape)
    idx_l = list(range(n))
    idx_r = list(range(n, 2 * n))
    for q in range(n):
        if q != keep:
            idx_r[q] = idx_l[q]
    out = [keep, n + keep]
    return np.einsum(r, idx_l + idx_r, out)


def propagate(dense: DenseModel, rho0, times, units=UNITS, keep_modes=True) -> OracleResult:
    rho0 = np.asarray(rho0, complex)
    ev = np.linalg.eigvalsh(0.5 * (rho0 + rho0.conj().T))
    if ev.min() < -1e-10:
        raise ValidationError("initial density is not positive semidefinite")
    E, V = np.linalg.eigh(dense.H)
    r0 = V.conj().T @ rho0 @ V
    hb = units.hbar
    Hd = np.diag(E)
    rs, modes, en, tr, he = [], [[] for _ in dense.dims], [], [], []
    for t in np.asarray(times, float):
        ph = np.exp(-1j * E * t / hb)
        rt = (ph[:, None] * r0) * np.conj(ph)[None, :]
        en.append(np.einsum("ii,ii->", rt, Hd).real)
        rho = V @ rt @ V.conj().T
        tr.append(np.trace(rho).real)
        he.append(np.max(np.abs(rho - rho.conj().T)))
        rs.append(_partial(rho, dense.M, dense.dims, 0))
        if keep_modes:
            for k in range(len(dense.dims)):
                modes[k].append(_partial(rho, dense.M, dense.dims, k + 1))
    modes = [np.array(m) for m in modes] if keep_modes else []
    return OracleResult(np.asarray(times, float), np.array(rs), modes,
                        np.array(en), np.array(tr), np.array(he))


def run_oracle(osys: OpenSystem, times, fock_dims=20, units=UNITS) -> OracleResult:
    dense = build_hamiltonian(osys, fock_dims, units)
    return propagate(dense, initial_density(osys, dense, units), times, units)
