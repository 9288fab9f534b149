"""Nested time quadrature and order-by-order assembly of reduced density matrices.

Every order-N integrand is evaluated on a uniform grid t_i = i dt. In the
local basis (and for environment-free couplings) the integrand of a
pathway factorizes into pair tables F_uv(tau_v - tau_u) over the time
points tau_0 = 0, tau_1..tau_N, tau_{N+1} = t, which makes the simplex
sums cheap. Eigenbasis weights add the chi factor, assembled from signed
lag tables of the N and P functions.

The simplex integral uses iterated trapezoid weights on the grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .corr import basis_kernels
from .model import UNITS, NumericalGuardError, OpenSystem, ValidationError
from .pathways import enumerate_pathways, theta_envfree

log = logging.getLogger(__name__)

MAX_ORDER = {"local": 3, "eigen": 2}


@dataclass(frozen=True)
class QuadratureSpec:
    t_max: float
    grid_points: int = 400
    max_order: int = 2

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValidationError("grid_points must be at least 2")
        if not self.t_max > 0:
            raise ValidationError("t_max must be positive")
        if not 0 <= self.max_order <= 3:
            raise ValidationError("max_order must lie in 0..3")

    @property
    def dt(self):
        return self.t_max / (self.grid_points - 1)

    @property
    def times(self):
        return np.arange(self.grid_points) * self.dt


# -- numba kernels ----------------------------------------------------------

@nb.njit(inline="always")
def _w(i, m, dt):
    if m == 0:
        return 0.0
    if i == 0 or i == m:
        return 0.5 * dt
    return dt


@nb.njit(parallel=True, cache=True)
def _sum_order0(F, dt):
    npath, P = F.shape[0], F.shape[3]
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            out[p, m] = F[p, 0, 1, m]
    return out


@nb.njit(parallel=True, cache=True)
def _sum_order1(F, dt):
    npath, P = F.shape[0], F.shape[3]
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            acc = 0.0 + 0.0j
            for i1 in range(m + 1):
                acc += _w(i1, m, dt) * F[p, 0, 1, i1] * F[p, 1, 2, m - i1]
            out[p, m] = acc * F[p, 0, 2, m]
    return out


@nb.njit(parallel=True, cache=True)
def _sum_order2(F, dt):
    npath, P = F.shape[0], F.shape[3]
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            acc = 0.0 + 0.0j
            for i2 in range(m + 1):
                w2 = _w(i2, m, dt)
                if w2 == 0.0:
                    continue
                f2 = F[p, 0, 2, i2] * F[p, 2, 3, m - i2]
                inner = 0.0 + 0.0j
                for i1 in range(i2 + 1):
                    inner += (_w(i1, i2, dt) * F[p, 0, 1, i1] * F[p, 1, 2, i2 - i1]
                              * F[p, 1, 3, m - i1])
                acc += w2 * f2 * inner
            out[p, m] = acc * F[p, 0, 3, m]
    return out


@nb.njit(parallel=True, cache=True)
def _sum_order3(F, dt):
    npath, P = F.shape[0], F.shape[3]
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            acc = 0.0 + 0.0j
            for i3 in range(m + 1):
                w3 = _w(i3, m, dt)
                if w3 == 0.0:
                    continue
                f3 = F[p, 0, 3, i3] * F[p, 3, 4, m - i3]
                acc3 = 0.0 + 0.0j
                for i2 in range(i3 + 1):
                    w2 = _w(i2, i3, dt)
                    if w2 == 0.0:
                        continue
                    f2 = F[p, 0, 2, i2] * F[p, 2, 3, i3 - i2] * F[p, 2, 4, m - i2]
                    inner = 0.0 + 0.0j
                    for i1 in range(i2 + 1):
                        inner += (_w(i1, i2, dt) * F[p, 0, 1, i1] * F[p, 1, 2, i2 - i1]
                                  * F[p, 1, 3, i3 - i1] * F[p, 1, 4, m - i1])
                    acc3 += w2 * f2 * inner
                acc += w3 * f3 * acc3
            out[p, m] = acc * F[p, 0, 4, m]
    return out


@nb.njit(parallel=True, cache=True)
def _sum_eigen1(F, T, dt):
    # T[p, j, v, lag + P - 1]; chi1 = T-sum for step 1 (sign folded in)
    npath, P = F.shape[0], F.shape[3]
    off = P - 1
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            acc = 0.0 + 0.0j
            for i1 in range(m + 1):
                n1 = (T[p, 1, 0, off - i1] + T[p, 1, 1, off] + T[p, 1, 2, off + m - i1])
                acc += _w(i1, m, dt) * F[p, 0, 1, i1] * F[p, 1, 2, m - i1] * n1
            out[p, m] = acc * F[p, 0, 2, m]
    return out


@nb.njit(parallel=True, cache=True)
def _sum_eigen2(F, T, Pt, dt):
    npath, P = F.shape[0], F.shape[3]
    off = P - 1
    out = np.zeros((npath, P), np.complex128)
    for m in nb.prange(P):
        for p in range(npath):
            acc = 0.0 + 0.0j
            for i2 in range(m + 1):
                w2 = _w(i2, m, dt)
                if w2 == 0.0:
                    continue
                f2 = F[p, 0, 2, i2] * F[p, 2, 3, m - i2]
                n2a = T[p, 2, 0, off - i2] + T[p, 2, 2, off] + T[p, 2, 3, off + m - i2]
                inner = 0.0 + 0.0j
                for i1 in range(i2 + 1):
                    n2 = n2a + T[p, 2, 1, off + i1 - i2]
                    n1 = (T[p, 1, 0, off - i1] + T[p, 1, 1, off] + T[p, 1, 2, off + i2 - i1]
                          + T[p, 1, 3, off + m - i1])
                    chi = n2 * n1 + Pt[p, i2 - i1]
                    inner += (_w(i1, i2, dt) * F[p, 0, 1, i1] * F[p, 1, 2, i2 - i1]
                              * F[p, 1, 3, m - i1] * chi)
                acc += w2 * f2 * inner
            out[p, m] = acc * F[p, 0, 3, m]
    return out


_LOCAL_SUMS = {0: _sum_order0, 1: _sum_order1, 2: _sum_order2, 3: _sum_order3}


# -- tables -----------------------------------------------------------------

class PathTables:
    """Grid tables shared by all pathways of one basis.

    C[P, Q, lag] = (i/hbar) H^P_Q(t) - (1/hbar) (G^P_Q(t) - G^P_Q(0)) with
    pair index P = a*M + b, Sc[a, i] the Wigner-center phase of state a and
    E the energies entering the segment phases.
    """

    def __init__(self, osys: OpenSystem, times, basis="local", units=UNITS, n_nodes=2000):
        self.osys = osys
        self.basis = basis
        self.units = units
        self.times = np.asarray(times, float)
        M = osys.system.M
        self.M = M
        self.kern = basis_kernels(osys, basis, units, n_nodes)
        if basis == "local":
            self.E = osys.system.energies.astype(float)
            self.V = osys.system.couplings
            self.U = np.eye(M)
            self.rho0 = np.asarray(osys.rho0, complex)
        else:
            eb = osys.eigenbasis()
            self.E = eb.energies
            self.U = eb.vectors
            self.V = None
            self.rho0 = self.U.conj().T @ osys.rho0 @ self.U
        hb = units.hbar
        P = self.times.size
        tags = ("h", "dg") if basis == "local" else ("h", "dg", "I", "Jc", "L", "M")
        if basis == "eigen":
            signed = np.arange(-(P - 1), P) * (self.times[1] - self.times[0])
            bs = self.kern.base(signed, tags)
            self.signed = bs
            base = {k: v[:, P - 1:] for k, v in bs.items()}
        else:
            base = self.kern.base(self.times, tags)
        self.base = base
        d = self.kern.d
        pairs = [(a, b) for a in range(M) for b in range(M)]
        hc = np.array([[(d[a] - d[b]) * (d[c] + d[e]) for (c, e) in pairs] for (a, b) in pairs])
        gc = np.array([[(d[a] - d[b]) * (d[c] - d[e]) for (c, e) in pairs] for (a, b) in pairs])
        self.C = (1j / hb) * np.einsum("pqc,ci->pqi", hc, base["h"]) \
            - (1.0 / hb) * np.einsum("pqc,ci->pqi", gc, base["dg"])
        Zc, Zs = self.kern.center_terms(self.times)
        self.has_centers = osys.bath.has_centers()
        self.Sc = (1j / hb) * d @ Zs  # (M, P)
        if basis == "eigen":
            self.Zc_signed = self.kern.center_terms(signed)[0]

    def pair_index(self, a, b):
        return a * self.M + b

    def log_tables(self, path):
        """Pairwise log-factor tables (N+2, N+2, P) and the constant log weight."""
        N = path.order
        P = self.times.size
        hb = self.units.hbar
        t = self.times
        L = np.zeros((N + 2, N + 2, P), np.complex128)
        const = 0.0 + 0.0j
        pairs = path.pairs
        idx = [self.pair_index(a, b) for a, b in pairs]
        for j, (a, b) in enumerate(pairs):
            L[j, j + 1] += -1j / hb * (self.E[a] - self.E[b]) * t
            L[j, j + 1] -= self.C[idx[j], idx[j]]
            if self.has_centers:
                cab = self.Sc[a] - self.Sc[b]
                L[0, j + 1] += cab
                if j == 0:
                    const -= cab[0]
                else:
                    L[0, j] -= cab
        for j in range(1, N + 1):
            for l in range(j):
                Cjl = self.C[idx[j], idx[l]]
                L[l + 1, j + 1] += Cjl
                L[l, j + 1] -= Cjl
                L[l, j] += Cjl
                if l + 1 < j:
                    L[l + 1, j] -= Cjl
        return L, const

    def factor_tables(self, paths):
        if not paths:
            return np.zeros((0, 1, 1, self.times.size), np.complex128), np.zeros(0, np.complex128)
        N = paths[0].order
        F = np.zeros((len(paths), N + 2, N + 2, self.times.size), np.complex128)
        consts = np.zeros(len(paths), np.complex128)
        for p, path in enumerate(paths):
            L, c = self.log_tables(path)
            F[p] = np.exp(L)
            consts[p] = c
        return F, consts

    # eigenbasis weight tables
    def _appendix_signed(self, tag, ab, cd):
        base_tag = {"I": "I", "J": "Jc", "K": "Jc", "L": "L", "M": "M"}[tag]
        coef = self.kern.appendix_coef(tag, ab, cd)
        return np.tensordot(coef, self.signed[base_tag], 1)

    def chi_tables(self, paths):
        """T[p, j, v, signed lag] so that s_j N_j = sum_v T[p, j, v, i_v - i_j], and P(t)."""
        N = paths[0].order
        P = self.times.size
        off = P - 1
        T = np.zeros((len(paths), N + 1, N + 2, 2 * P - 1), np.complex128)
        Pt = np.zeros((len(paths), P), np.complex128)
        for p, path in enumerate(paths):
            pr = path.pairs
            for j in range(1, N + 1):
                ab = path.step_indices(j)
                s = path.signs[j - 1]
                S = s
                acc = np.zeros((N + 2, 2 * P - 1), np.complex128)
                for i in range(N + 1):
                    fI = self._appendix_signed("I", ab, pr[i])
                    acc[i + 1] += 1j * fI
                    acc[i] -= 1j * fI
                    if i < j:
                        fJ = self._appendix_signed("J", ab, pr[i])
                        acc[i + 1] += fJ
                        acc[i] -= fJ
                    else:
                        fK = self._appendix_signed("K", ab, pr[i])
                        acc[i + 1] -= 0.5 * S * fK
                        acc[i] += 0.5 * S * fK
                # N = -(acc) - Z(tau_j); Z depends on tau_j - tau_0 = -(i_0 - i_j)
                T[p, j] = -acc
                if self.has_centers:
                    z = self.kern.G[:, ab[0], ab[1]] @ self.Zc_signed
                    T[p, j, 0] -= z[::-1]
                T[p, j] *= s
            if N == 2:
                ab1, ab2 = path.step_indices(1), path.step_indices(2)
                s1, s2 = path.signs
                L = self._appendix_signed("L", ab2, ab1)[off:]
                Mk = self._appendix_signed("M", ab2, ab1)[off:]
                Pt[p] = s1 * s2 * (L - 0.5j * s1 * Mk)
        return T, Pt


# -- engine -------------------------------------------------------------------

@dataclass
class TimeSeriesResult:
    times: np.ndarray
    basis: str
    orders: dict  # N -> (P, M, M) contribution in the local basis
    rdm: np.ndarray = field(default=None)  # cumulative, processed
    raw: np.ndarray = field(default=None)  # cumulative, before post-processing

    @property
    def M(self):
        return self.rdm.shape[1]

    def cumulative(self, upto):
        out = np.zeros_like(next(iter(self.orders.values())))
        for N, r in self.orders.items():
            if N <= upto:
                out = out + r
        return out

    def bloch(self, rho=None):
        rho = self.rdm if rho is None else rho
        if rho.shape[1] != 2:
            raise ValidationError("Bloch vector needs a two-level system")
        sx = 2.0 * rho[:, 0, 1].real
        sy = -2.0 * rho[:, 0, 1].imag
        sz = (rho[:, 0, 0] - rho[:, 1, 1]).real
        return np.stack([sx, sy, sz], axis=1)

    def purity(self, rho=None):
        rho = self.rdm if rho is None else rho
        return np.einsum("tab,tba->t", rho, rho).real

    def populations(self, rho=None):
        rho = self.rdm if rho is None else rho
        return np.einsum("taa->ta", rho).real


def postprocess(rho):
    """Hermitize and trace-normalize a stack of density matrices."""
    h = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    tr = np.einsum("...aa->...", h).real
    if np.any(np.abs(tr) < 1e-12):
        raise NumericalGuardError("density matrix with vanishing trace")
    return h / tr[..., None, None]


class Engine:
    """Perturbative RDM evaluator for one system, basis and time grid."""

    def __init__(self, osys: OpenSystem, spec: QuadratureSpec, basis="local",
                 units=UNITS, n_nodes=2000):
        if basis not in MAX_ORDER:
            raise ValidationError(f"unknown basis {basis!r}")
        self.osys = osys
        self.spec = spec
        self.basis = basis
        self.units = units
        self.tables = PathTables(osys, spec.times, basis, units, n_nodes)

    @property
    def times(self):
        return self.spec.times

    def pathways(self, N, final):
        tb = self.tables
        rho0 = tb.rho0
        keep = (lambda a, b: abs(rho0[a, b]) > 0)
        coup = tb.V if self.basis == "local" else None
        if self.basis == "eigen":
            G = tb.kern.G
            coup = np.any(np.abs(G) > 0, axis=0).astype(float)
            np.fill_diagonal(coup, 0.0)
        return enumerate_pathways(tb.M, N, final, keep, coup)

    def element_order(self, N, final):
        """Order-N contribution to one RDM element (active basis) over the grid."""
        if N > MAX_ORDER[self.basis]:
            raise ValidationError(f"order {N} exceeds the {self.basis}-basis cap")
        paths = self.pathways(N, final)
        P = self.times.size
        if not paths:
            return np.zeros(P, complex)
        tb = self.tables
        F, consts = tb.factor_tables(paths)
        hb = self.units.hbar
        pref = (-1j / hb) ** N
        w = np.array([tb.rho0[p.left[0], p.right[0]] for p in paths]) * np.exp(consts) * pref
        if self.basis == "local":
            w = w * np.array([theta_envfree(p, tb.V) for p in paths])
            sums = _LOCAL_SUMS[N](F, self.spec.dt)
        elif N == 0:
            sums = _sum_order0(F, self.spec.dt)
        else:
            T, Pt = tb.chi_tables(paths)
            if N == 1:
                sums = _sum_eigen1(F, T, self.spec.dt)
            else:
                sums = _sum_eigen2(F, T, Pt, self.spec.dt)
        return w @ sums

    def order_rdm(self, N, elements="all"):
        """Order-N RDM contribution in the active basis, shape (P, M, M).

        elements="upper" evaluates n <= m and fills the rest by Hermitian
        conjugation (exact for the pathway sums, half the cost).
        """
        M = self.tables.M
        out = np.zeros((self.times.size, M, M), complex)
        for a in range(M):
            for b in range(M):
                if elements == "upper" and b < a:
                    continue
                out[:, a, b] = self.element_order(N, (a, b))
        if elements == "upper":
            for a in range(M):
                for b in range(a):
                    out[:, a, b] = np.conj(out[:, b, a])
        return out

    def to_local(self, rho):
        U = self.tables.U
        return U @ rho @ U.conj().T

    def series(self, orders=None, elements="all"):
        """Order contributions (in the local basis) and the processed cumulative RDM."""
        orders = range(self.spec.max_order + 1) if orders is None else orders
        res = {}
        for N in orders:
            r = self.order_rdm(N, elements)
            res[N] = self.to_local(r) if self.basis == "eigen" else r
        raw = sum(res.values())
        return TimeSeriesResult(self.times, self.basis, res, postprocess(raw), raw)


def assemble_series(osys, spec: QuadratureSpec, basis="local", orders=None,
                    elements="all", **kw) -> TimeSeriesResult:
    return Engine(osys, spec, basis, **kw).series(orders, elements)


def _grid_index(engine, t):
    i = int(round(t / engine.spec.dt))
    if i < 0 or i >= engine.times.size or abs(i * engine.spec.dt - t) > 1e-9 * max(1.0, t):
        raise ValidationError(f"time {t} is not on the quadrature grid")
    return i


def local_rdm_order(engine: Engine, N, t, element):
    if engine.basis != "local":
        raise ValidationError("engine is not in the local basis")
    return engine.element_order(N, element)[_grid_index(engine, t)]


def eigen_rdm_order(engine: Engine, N, t, element):
    if engine.basis != "eigen":
        raise ValidationError("engine is not in the eigenbasis")
    return engine.element_order(N, element)[_grid_index(engine, t)]


def eigen_rdm_order0(engine, t, element):
    return eigen_rdm_order(engine, 0, t, element)


def eigen_rdm_order1(engine, t, element):
    return eigen_rdm_order(engine, 1, t, element)


def eigen_rdm_order2(engine, t, element):
    return eigen_rdm_order(engine, 2, t, element)


def order_contribution_envfree(engine: Engine, observable, N):
    """Order-N contribution to <O>(t) for a system observable O (M x M)."""
    r = engine.order_rdm(N)
    if engine.basis == "eigen":
        r = engine.to_local(r)
    return np.einsum("tab,ba->t", r, np.asarray(observable))
