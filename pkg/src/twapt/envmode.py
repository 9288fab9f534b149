"""Environmental mode observables.

Weyl symbols of harmonic projectors, Gaussian phase-space moment
integrals, per-mode reduced density matrices along Liouville pathways and
the von Neumann entropy.

Phase-space integrals use the measure dx dp / (2 pi hbar), which equals
d^2a / pi for the coherent variable a = sqrt(w / 2 hbar) (x + i p / w).
A Gaussian Wigner state with widths sigma_x sigma_p and center a' then has
the symbol kappa exp(-kappa |a - a'|^2) with kappa = hbar / (sigma_x sigma_p).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import UNITS, DrudeLorentz, DiscreteModes, NumericalGuardError, ValidationError
from .pathways import enumerate_pathways, theta_envfree

log = logging.getLogger(__name__)

CLIP_TOL = 1e-8
TRUNCATION_WARN = 0.99


# -- Weyl symbols -------------------------------------------------------------

def weyl_coefficients(n, m):
    """c[k] such that (|n><m|)_W = sum_k c[k] (a*)^(n-k) a^(m-k) exp(-2|a|^2)."""
    if n < 0 or m < 0:
        raise ValidationError("Fock indices must be non-negative")
    pre = 2.0 ** (m + 1) / math.sqrt(math.factorial(n) * math.factorial(m))
    return np.array([pre * math.factorial(k) * math.comb(n, k) * math.comb(m, k)
                     * 2.0 ** (n - k) * (-0.5) ** k for k in range(min(n, m) + 1)])


def coherent_variable(omega, x, p, units=UNITS):
    w = omega / units.hbar
    return np.sqrt(w / (2 * units.hbar)) * (np.asarray(x) + 1j * np.asarray(p) / w)


def weyl_projection(n, m, omega, x, p, units=UNITS):
    """Weyl symbol of |n><m| for a mode of frequency omega (cm^-1) at (x, p)."""
    c = weyl_coefficients(n, m)
    a = coherent_variable(omega, x, p, units)
    ac = np.conj(a)
    val = sum(c[k] * ac ** (n - k) * a ** (m - k) for k in range(c.size))
    return val * np.exp(-2.0 * np.abs(a) ** 2)


def weyl_polynomial_xp(n, m, omega, units=UNITS):
    """Polynomial part of (|n><m|)_W as coefficients P[i, j] of x^i p^j."""
    hb = units.hbar
    w = omega / hb
    s = math.sqrt(w / (2 * hb))
    deg = n + m
    # a = s x + i (s / w) p, a* = s x - i (s / w) p
    pa = np.zeros((2, 2), complex)
    pa[1, 0], pa[0, 1] = s, 1j * s / w
    pac = np.conj(pa)
    out = np.zeros((deg + 1, deg + 1), complex)
    for k, ck in enumerate(weyl_coefficients(n, m)):
        term = np.ones((1, 1), complex)
        for _ in range(n - k):
            term = _polymul(term, pac)
        for _ in range(m - k):
            term = _polymul(term, pa)
        out[:term.shape[0], :term.shape[1]] += ck * term
    return out


def _polymul(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1), complex)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] != 0:
                out[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    return out


def weyl_quadratic(omega, units=UNITS):
    """Q such that exp(-2|a|^2) = exp(-z^T Q z / 2) with z = (x, p)."""
    w = omega / units.hbar
    return np.diag([2 * w / units.hbar, 2 / (units.hbar * w)])


# -- Gaussian moment integrals ------------------------------------------------

def _gaussian_moments(mu, S, deg):
    """E[x^i p^j] for a (complex) Gaussian with mean mu and covariance S.

    Stein recursion: E[z_a f] = mu_a E[f] + sum_b S_ab E[d_b f].
    """
    E = np.zeros((deg + 1, deg + 1), complex)
    E[0, 0] = 1.0
    for tot in range(1, deg + 1):
        for i in range(tot + 1):
            j = tot - i
            if i > 0:
                v = mu[0] * E[i - 1, j]
                if i > 1:
                    v += S[0, 0] * (i - 1) * E[i - 2, j]
                if j > 0:
                    v += S[0, 1] * j * E[i - 1, j - 1]
            else:
                v = mu[1] * E[i, j - 1]
                if j > 1:
                    v += S[1, 1] * (j - 1) * E[i, j - 2]
            E[i, j] = v
    return E


def gaussian_phase_integral(poly, center, widths, extra_quadratic=None, phase=(0.0, 0.0),
                            units=UNITS):
    """int dx dp / (2 pi hbar) poly(x, p) W(x, p) exp(-z^T Q z / 2) exp(i (A x + B p)).

    poly[i, j] multiplies x^i p^j. W is the normalized Gaussian Wigner
    density with the given center (x', p') and widths (sigma_x, sigma_p),
    or 1 when widths is None; Q is an optional extra real symmetric
    quadratic form.
    """
    poly = np.atleast_2d(np.asarray(poly, complex))
    phase = 1j * np.asarray(phase, float)
    Q = np.zeros((2, 2))
    if extra_quadratic is not None:
        Q = Q + np.asarray(extra_quadratic, float)
    if widths is None:
        # flat measure: dx dp / (2 pi hbar) only
        L = phase
        log_norm = 0.0
        scale = 1.0 / units.hbar
    else:
        sx, sp = (float(v) for v in widths)
        if sx <= 0 or sp <= 0:
            raise ValidationError("widths must be positive")
        c = np.asarray(center, float)
        Wq = np.diag([1 / sx ** 2, 1 / sp ** 2])
        Q = Q + Wq
        L = Wq @ c + phase
        log_norm = -0.5 * c @ Wq @ c
        scale = 1.0 / (sx * sp)
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) <= 0):
        raise ValidationError("quadratic form is not positive definite")
    S = np.linalg.inv(Q)
    mu = S @ L
    norm = scale * np.exp(log_norm + 0.5 * L @ mu) / np.sqrt(np.linalg.det(Q))
    deg = poly.shape[0] + poly.shape[1] - 2
    E = _gaussian_moments(mu, S, deg)
    return complex(norm * np.sum(poly * E[:poly.shape[0], :poly.shape[1]]))


# -- per-mode reduced density matrix -------------------------------------------

def _binom_table(n):
    return np.array([[math.comb(i, j) for j in range(n + 1)] for i in range(n + 1)], float)


def _weyl_table(n_max):
    W = np.zeros((n_max + 1, n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for m in range(n_max + 1):
            c = weyl_coefficients(n, m)
            W[n, m, :c.size] = c
    return W


@nb.njit(cache=True)
def _mode_ratio(tau, dx, xb, w, hb, kappa, sx2, sp2, xc, pc, W, binom, out):
    """out[n, m] = Tr(rho |n><m|)-integral divided by the mode characteristic function."""
    nseg = dx.size
    t = tau[nseg]
    A = 0.0
    B = 0.0
    cx = 0.0
    cp = 0.0
    for j in range(nseg):
        A += w / hb * dx[j] * (math.sin(w * tau[j + 1]) - math.sin(w * tau[j]))
        B -= dx[j] / hb * (math.cos(w * tau[j + 1]) - math.cos(w * tau[j]))
        cx += xb[j] * (math.cos(w * (t - tau[j + 1])) - math.cos(w * (t - tau[j])))
        cp += xb[j] * w * (math.sin(w * (t - tau[j])) - math.sin(w * (t - tau[j + 1])))
    s = math.sqrt(w / (2 * hb))
    b = s * (cx + 1j * cp / w)
    Ap = A * math.sqrt(2 * hb / w)
    Bp = B * math.sqrt(2 * hb * w)
    e = complex(math.cos(w * t), math.sin(w * t))
    lw = e * (1j * Ap + Bp) * 0.5
    lwc = e.conjugate() * (1j * Ap - Bp) * 0.5
    apt = s * (xc + 1j * pc / w) * e.conjugate()
    gam = kappa * apt.conjugate() - 2 * b.conjugate() + lw
    bet = kappa * apt - 2 * b + lwc
    c = kappa + 2.0
    const = -kappa * abs(apt) ** 2 - 2 * abs(b) ** 2
    logchar = 1j * (A * xc + B * pc) - 0.5 * sx2 * A * A - 0.5 * sp2 * B * B
    pre = kappa / c * np.exp(bet * gam / c + const - logchar)
    mu = bet / c + b  # mean of a
    nu = gam / c + b.conjugate()  # mean of a*
    nm = W.shape[0]
    for n in range(nm):
        for m in range(nm):
            acc = 0.0 + 0.0j
            for k in range(min(n, m) + 1):
                p = n - k
                q = m - k
                mom = 0.0 + 0.0j
                fj = 1.0
                for j in range(min(p, q) + 1):
                    if j > 0:
                        fj *= j
                    mom += binom[p, j] * binom[q, j] * fj * c ** (-j) * nu ** (p - j) * mu ** (q - j)
                acc += W[n, m, k] * mom
            out[n, m] = pre * acc


@nb.njit(parallel=True, cache=True)
def _mode_sum(F, wts, DX, XB, times, idx, wq, w, hb, kappa, sx2, sp2, xc, pc, W, binom):
    """Sum over simplex points idx[q] = (0, i_1, .., i_N, m) with weights wq[q]."""
    npath = F.shape[0]
    npts, nt = idx.shape
    nm = W.shape[0]
    part = np.zeros((npts, nm, nm), np.complex128)
    for q in nb.prange(npts):
        tau = np.empty(nt)
        for u in range(nt):
            tau[u] = times[idx[q, u]]
        buf = np.zeros((nm, nm), np.complex128)
        for p in range(npath):
            f = wts[p]
            for u in range(nt):
                for v in range(u + 1, nt):
                    f *= F[p, u, v, idx[q, v] - idx[q, u]]
            _mode_ratio(tau, DX[p], XB[p], w, hb, kappa, sx2, sp2, xc, pc, W, binom, buf)
            for a in range(nm):
                for c in range(nm):
                    part[q, a, c] += wq[q] * f * buf[a, c]
    out = np.zeros((nm, nm), np.complex128)
    for q in range(npts):
        out += part[q]
    return out


def _trap(i, m, dt):
    if m == 0:
        return 0.0
    return 0.5 * dt if i in (0, m) else dt


def simplex_points(N, m, dt):
    """Grid points (0, i_1, .., i_N, m) of the order-N simplex and their weights."""
    if N == 0:
        return np.array([[0, m]], np.int64), np.ones(1)
    if N == 1:
        i1 = np.arange(m + 1)
        w = np.array([_trap(i, m, dt) for i in i1])
        return np.stack([np.zeros_like(i1), i1, np.full_like(i1, m)], 1), w
    pts, wts = [], []
    for i2 in range(m + 1):
        w2 = _trap(i2, m, dt)
        for i1 in range(i2 + 1):
            w1 = _trap(i1, i2, dt)
            if w1 * w2 != 0.0:
                pts.append((0, i1, i2, m))
                wts.append(w1 * w2)
    if not pts:
        return np.zeros((0, 4), np.int64), np.zeros(0)
    return np.array(pts, np.int64), np.array(wts)


@dataclass(frozen=True)
class ProbeMode:
    """One environmental mode of channel `channel` with frequency omega and x0."""
    channel: int
    omega: float
    x0: float
    center: tuple = (0.0, 0.0)


def probe_mode(osys, channel, omega, d_omega=None, K=300, units=UNITS):
    """Probe mode of a Drude-Lorentz channel: reorganization J(w) dw / (pi w).

    The probe stands for one bin of the continuum (default width w_max / K
    with w_max the window top or 10 w_c), so its bath influence is already
    contained in the continuum kernels.
    """
    ch = osys.bath.channels[channel]
    if isinstance(ch, DiscreteModes):
        k = int(np.argmin(np.abs(ch.freqs - omega)))
        if abs(ch.freqs[k] - omega) > 1e-9 * max(1.0, omega):
            raise ValidationError(f"no discrete mode at {omega} cm^-1")
        cen = osys.bath.centers[channel]
        cen = (0.0, 0.0) if cen is None else tuple(cen[k])
        return ProbeMode(channel, float(ch.freqs[k]), float(ch.x0[k]), cen)
    if not isinstance(ch, DrudeLorentz):
        raise ValidationError("unsupported channel type")
    if d_omega is None:
        top = ch.window[1] if math.isfinite(ch.window[1]) else 10.0 * ch.wc
        d_omega = top / K
    lam = float(ch.J(omega)) * d_omega / (math.pi * omega)
    w = units.to_fs(omega)
    return ProbeMode(channel, float(omega), math.sqrt(2 * lam) / w)


def mode_rdm_raw(engine, probe: ProbeMode, m_index, n_max=2, orders=(0, 1, 2)):
    """Unprocessed Tr(rho |n><m|) sums per order (dict N -> matrix) at time index m."""
    if engine.basis != "local":
        raise ValidationError("mode observables need the local basis")
    if n_max < 0:
        raise ValidationError("n_max must be non-negative")
    tb = engine.tables
    units = engine.units
    hb = units.hbar
    times = engine.times
    osys = engine.osys
    w = probe.omega / hb
    sxsp = float(osys.bath.sxsp(probe.omega, units))
    kappa = hb / sxsp
    xs = probe.x0 * osys.system.coefficients[:, probe.channel]
    W = _weyl_table(n_max)
    binom = _binom_table(n_max)
    res = {}
    for N in orders:
        if N > 2:
            raise ValidationError("mode observables are available up to second order")
        paths = [p for a in range(tb.M) for p in engine.pathways(N, (a, a))]
        if not paths:
            res[N] = np.zeros((n_max + 1, n_max + 1), complex)
            continue
        F, consts = tb.factor_tables(paths)
        wts = np.array([tb.rho0[p.left[0], p.right[0]] * theta_envfree(p, tb.V) for p in paths])
        wts = wts * np.exp(consts) * (-1j / hb) ** N
        DX = np.array([[xs[a] - xs[b] for a, b in p.pairs] for p in paths])
        XB = np.array([[0.5 * (xs[a] + xs[b]) for a, b in p.pairs] for p in paths])
        idx, wq = simplex_points(N, int(m_index), engine.spec.dt)
        raw = _mode_sum(F, wts, DX, XB, times, idx, wq, w, hb, kappa,
                        sxsp / w, sxsp * w, float(probe.center[0]), float(probe.center[1]),
                        W, binom)
        res[N] = raw.T  # Tr(rho |n><m|) = rho_mn
    return res


def process_rdm(rho, clip_tol=CLIP_TOL):
    """Hermitize, clip small negative eigenvalues and renormalize."""
    h = 0.5 * (rho + rho.conj().T)
    ev, vec = np.linalg.eigh(h)
    if ev.min() < -clip_tol * max(1.0, ev.max()):
        raise NumericalGuardError(f"mode density has eigenvalue {ev.min():.3e}")
    ev = np.clip(ev, 0.0, None)
    if ev.sum() <= 0:
        raise NumericalGuardError("mode density has vanishing trace")
    return (vec * (ev / ev.sum())) @ vec.conj().T


def mode_rdm(engine, probe: ProbeMode, m_index, n_max=2, order=2, clip_tol=CLIP_TOL):
    """Processed (n_max+1)^2 mode density at grid index m, summed to `order`."""
    raw = mode_rdm_raw(engine, probe, m_index, n_max, range(order + 1))
    rho = sum(raw.values())
    pop = np.trace(rho).real
    if pop < TRUNCATION_WARN:
        log.warning("mode %.1f cm^-1: truncated population %.4f", probe.omega, pop)
    return process_rdm(rho, clip_tol)


def entropy(rho, tol=1e-6):
    """Von Neumann entropy -Tr rho ln rho (k_B = 1)."""
    rho = np.asarray(rho)
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValidationError("density matrix trace differs from 1")
    ev = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    ev = ev[ev > 0]
    return float(-np.sum(ev * np.log(ev))) + 0.0
