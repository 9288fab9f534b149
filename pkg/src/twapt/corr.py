"""Bath correlation kernels and accumulated influence phases.

Base kernels are defined per bath channel with unit coefficients (w in
fs^-1, J in cm^-1, s = sigma_x sigma_p in cm^-1 fs):

    h(t)  = (1/pi)  int J/w^2 sin(wt)
    dg(t) = (2/pi)  int (s/hbar) J/w^2 (cos(wt) - 1)
    I(t)  = (2/pi)  int (s/hbar) J/w sin(wt)
    Jc(t) = (2/pi)  int J/w cos(wt)
    L(t)  = (2/pi)  int s J cos(wt)
    M(t)  = (2hbar/pi) int J sin(wt)

State indexed kernels are linear combinations of these with the channel
coefficients of the active basis: d[n, c] (diagonal displacement pattern)
and G[c, a, b] (full pattern, used by the eigenbasis weights).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import sici

from .model import UNITS, BathSpec, DiscreteModes, DrudeLorentz, ValidationError

TAGS = ("h", "dg", "I", "Jc", "L", "M")
ODD = {"h": True, "dg": False, "I": True, "Jc": False, "L": False, "M": True}

GL_ORDER = 16
CUTOFF_FACTOR = 20.0
DG_CUTOFF_FACTOR = 200.0  # dg decays only like w^-3, so it gets a longer range
CHUNK = 4096


@lru_cache(maxsize=None)
def _gl_ref(order):
    return np.polynomial.legendre.leggauss(order)


def gauss_legendre(lo, hi, n_panels, order=GL_ORDER):
    """Composite Gauss-Legendre nodes and weights on [lo, hi]."""
    x, w = _gl_ref(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def spectral_nodes(ch, t_span, n_nodes=2000, units=UNITS, cutoff=CUTOFF_FACTOR):
    """Frequency nodes (fs^-1) and weights so that int f(w) J(w) dw = sum W f(w).

    Drude-Lorentz channels use composite Gauss-Legendre on the window cut
    at cutoff * wc; the panel count grows with the largest time so that every
    oscillation period gets at least two panels. Discrete channels return
    their delta-comb weights.
    """
    if isinstance(ch, DiscreteModes):
        return units.to_fs(ch.freqs), ch.J_weights(units)
    lo, hi = ch.window
    top = min(hi, cutoff * ch.wc)
    if top <= lo:
        return np.zeros(0), np.zeros(0)
    lo_f, top_f = lo / units.hbar, top / units.hbar
    periods = (top_f - lo_f) * t_span / (2.0 * math.pi)
    n_panels = max(int(math.ceil(n_nodes / GL_ORDER)), int(math.ceil(2.0 * periods)) + 1)
    w, wts = gauss_legendre(lo_f, top_f, n_panels)
    return w, wts * ch.J(w * units.hbar)


def _dl_tail_h(ch, t, units):
    """Closed-form h for the unrestricted Drude-Lorentz density."""
    wcf = ch.wc / units.hbar
    return ch.lam / wcf * (-np.expm1(-wcf * np.abs(t))) * np.sign(t)


def _dl_tail_jc(ch, t, units):
    wcf = ch.wc / units.hbar
    return 2.0 * ch.lam * np.exp(-wcf * np.abs(t))


def _tail_cube(a):
    """int_a^inf (1 - cos u) / u^3 du for a > 0."""
    if math.isinf(a):
        return 0.0
    si, ci = sici(a)
    return (1.0 - math.cos(a)) / (2.0 * a * a) + math.sin(a) / (2.0 * a) - ci / 2.0


def _dl_tail_dg(ch, bath, t, units):
    """dg contribution of the Drude-Lorentz spectrum above the quadrature cutoff.

    Far above wc the integrand is 2 lam wc (cos(wt) - 1) / (pi w^3) times the
    thermal factor, which is frozen at the cutoff.
    """
    top = DG_CUTOFF_FACTOR * ch.wc
    hi = ch.window[1]
    if hi <= top or ch.window[0] >= top:
        return np.zeros_like(t)
    hb = units.hbar
    wcf, Wf, Hf = ch.wc / hb, top / hb, hi / hb
    thermal = float(bath.sxsp(top, units)) / (0.5 * hb)
    out = np.zeros_like(t)
    for i, ti in enumerate(np.abs(t)):
        if ti > 0:
            out[i] = ti * ti * (_tail_cube(Wf * ti) - _tail_cube(Hf * ti))
    return -2.0 * ch.lam * wcf / np.pi * thermal * out


def channel_kernels(ch, bath: BathSpec, t, tags=TAGS, n_nodes=2000, units=UNITS):
    """Evaluate base kernels of one channel at arbitrary times (fs).

    Returns a dict tag -> array with the shape of t. h and Jc of a
    Drude-Lorentz channel whose window reaches infinity use the closed form
    (minus a finite quadrature below the window), every other continuum
    kernel is a quadrature on the window cut at 20 wc (200 wc for dg, plus
    an asymptotic tail).
    """
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    at = np.abs(flat)
    span = float(at.max()) if at.size else 0.0
    out = {}
    closed = isinstance(ch, DrudeLorentz) and math.isinf(ch.window[1])
    need_quad = [tag for tag in tags if not (closed and tag in ("h", "Jc"))]
    hb = units.hbar
    for tag in need_quad:
        if tag not in ODD:
            raise ValidationError(f"unknown kernel tag {tag!r}")
    groups = [[tag for tag in need_quad if tag != "dg"], [tag for tag in need_quad if tag == "dg"]]
    for group, cut in zip(groups, (CUTOFF_FACTOR, DG_CUTOFF_FACTOR)):
        if not group:
            continue
        w, W = spectral_nodes(ch, span, n_nodes, units, cut)
        s = bath.sxsp(w * hb, units)
        coef = {
            "h": W / (np.pi * w * w),
            "dg": 2.0 / np.pi * s / hb * W / (w * w),
            "I": 2.0 / np.pi * s / hb * W / w,
            "Jc": 2.0 / np.pi * W / w,
            "L": 2.0 / np.pi * s * W,
            "M": 2.0 * hb / np.pi * W,
        }
        acc = {tag: np.zeros(at.size) for tag in group}
        for k in range(0, w.size, CHUNK):
            wt = np.outer(w[k:k + CHUNK], at)
            sn = np.sin(wt) if any(ODD[tag] for tag in group) else None
            cs = np.cos(wt) if any(tag in ("Jc", "L") for tag in group) else None
            for tag in group:
                c = coef[tag][k:k + CHUNK]
                if tag == "dg":
                    f = -2.0 * np.sin(0.5 * wt) ** 2
                else:
                    f = sn if ODD[tag] else cs
                acc[tag] += c @ f
        for tag in group:
            val = acc[tag]
            if tag == "dg" and isinstance(ch, DrudeLorentz):
                val = val + _dl_tail_dg(ch, bath, at, units)
            if ODD[tag]:
                val = val * np.sign(flat)
            out[tag] = val.reshape(t.shape)
    if closed:
        lo = ch.window[0]
        for tag, fn in (("h", _dl_tail_h), ("Jc", _dl_tail_jc)):
            if tag not in tags:
                continue
            val = fn(ch, flat, units)
            if lo > 0:
                # remove the part of the spectrum below the window
                sub = DrudeLorentz(ch.lam, ch.wc, (0.0, lo))
                val = val - channel_kernels(sub, bath, flat, (tag,), n_nodes, units)[tag]
            out[tag] = val.reshape(t.shape)
    return out


def discrete_g(modes: DiscreteModes, bath: BathSpec, t, units=UNITS):
    """Standalone G base kernel (2/pi) int (s/hbar) J/w^2 cos(wt), finite for discrete baths."""
    w = units.to_fs(modes.freqs)
    s = bath.sxsp(modes.freqs, units)
    c = 2.0 / np.pi * s / units.hbar * modes.J_weights(units) / w ** 2
    return (c[:, None] * np.cos(np.outer(w, np.ravel(t)))).sum(0).reshape(np.shape(t))


class Kernels:
    """State indexed kernels for one basis.

    d: (M, C) real diagonal displacement pattern, G: optional (C, M, M)
    complex coupling pattern (eigenbasis). Base kernels are evaluated on
    demand at arbitrary times, or tabulated on a uniform grid with table().
    """

    def __init__(self, bath: BathSpec, d, G=None, units=UNITS, n_nodes=2000):
        self.bath = bath
        self.d = np.asarray(d, dtype=float)
        if self.d.ndim == 1:
            self.d = self.d[:, None]
        if self.d.shape[1] != len(bath.channels):
            raise ValidationError("coefficient pattern does not match the bath channels")
        self.G = None if G is None else np.asarray(G)
        self.units = units
        self.n_nodes = n_nodes

    @property
    def M(self):
        return self.d.shape[0]

    def center_terms(self, t):
        """Per-channel drives from the Wigner centers (x', p') of discrete modes.

        Returns (Zc, Zs), each (C, *shape(t)):
        Zc = sum_k w^2 x0_k (x' cos wt + p'/w sin wt) (eigenbasis weights),
        Zs = sum_k x0_k (w x' sin wt - p' cos wt) (segment phases).
        """
        t = np.asarray(t, dtype=float)
        C = len(self.bath.channels)
        Zc = np.zeros((C,) + t.shape)
        Zs = np.zeros((C,) + t.shape)
        for c, (ch, cen) in enumerate(zip(self.bath.channels, self.bath.centers)):
            if cen is None:
                continue
            w = self.units.to_fs(ch.freqs)
            wt = np.multiply.outer(w, t)
            xp, pp = cen[:, 0], cen[:, 1]
            shp = (-1,) + (1,) * t.ndim
            cw, sw = np.cos(wt), np.sin(wt)
            Zc[c] = ((w ** 2 * ch.x0 * xp).reshape(shp) * cw
                     + (w * ch.x0 * pp).reshape(shp) * sw).sum(0)
            Zs[c] = ((ch.x0 * w * xp).reshape(shp) * sw - (ch.x0 * pp).reshape(shp) * cw).sum(0)
        return Zc, Zs

    def base(self, t, tags=TAGS):
        """Stacked base kernels: dict tag -> (C, *shape(t))."""
        res = {tag: [] for tag in tags}
        for ch in self.bath.channels:
            k = channel_kernels(ch, self.bath, t, tags, self.n_nodes, self.units)
            for tag in tags:
                res[tag].append(k[tag])
        return {tag: np.array(v) for tag, v in res.items()}

    # coefficient vectors over channels
    def h_coef(self, a, b, c, d):
        D = self.d
        return (D[a] - D[b]) * (D[c] + D[d])

    def g_coef(self, a, b, c, d):
        D = self.d
        return (D[a] - D[b]) * (D[c] - D[d])

    def _need_G(self):
        if self.G is None:
            raise ValidationError("appendix kernels need the full coupling pattern G")
        return self.G

    def appendix_coef(self, tag, ab, cd):
        G = self._need_G()
        a, b = ab
        c, d = cd
        D = self.d
        if tag == "I":
            return G[:, a, b] * (D[c] - D[d])
        if tag == "J":
            return G[:, a, b] * 0.5 * (D[c] + D[d])
        if tag == "K":
            return G[:, a, b] * (D[c] - D[d])
        if tag in ("L", "M"):
            return G[:, a, b] * G[:, c, d]
        raise ValidationError(f"unknown appendix kernel {tag!r}")

    def h_kernel(self, a, b, c, d, t):
        return np.tensordot(self.h_coef(a, b, c, d), self.base(t, ("h",))["h"], 1)

    def g_kernel_diff(self, a, b, c, d, t1, t2):
        t1, t2 = np.broadcast_arrays(np.asarray(t1, float), np.asarray(t2, float))
        g = self.base(np.stack([t1, t2]), ("dg",))["dg"]
        return np.tensordot(self.g_coef(a, b, c, d), g[:, 0] - g[:, 1], 1)

    def appendix_kernel(self, tag, ab, cd, t):
        base_tag = {"I": "I", "J": "Jc", "K": "Jc", "L": "L", "M": "M"}.get(tag)
        if base_tag is None:
            raise ValidationError(f"unknown appendix kernel {tag!r}")
        return np.tensordot(self.appendix_coef(tag, ab, cd), self.base(t, (base_tag,))[base_tag], 1)


def basis_kernels(osys, basis="local", units=UNITS, n_nodes=2000):
    """Kernels for the local basis (d = g) or the eigenbasis (d = diag G)."""
    if basis == "local":
        g = osys.system.coefficients
        G = np.einsum("nc,nm->cnm", g, np.eye(osys.system.M))
        return Kernels(osys.bath, g, G, units, n_nodes)
    eb = osys.eigenbasis()
    d = np.einsum("caa->ac", eb.G).real
    return Kernels(osys.bath, d, eb.G, units, n_nodes)


# -- influence phases ------------------------------------------------------

def _check_times(times, N):
    tau = np.asarray(times, dtype=float)
    if tau.size != N + 2:
        raise ValidationError(f"expected {N + 2} times for a pathway of order {N}")
    if tau[0] != 0.0 or np.any(np.diff(tau) < 0):
        raise ValidationError("times must start at 0 and be non-decreasing")
    return tau


def _phase_terms(N, tau):
    """(j, l, sign, argument) of the pairwise interval terms shared by phi_H and phi_G."""
    terms = []
    for j in range(1, N + 1):
        for l in range(j):
            terms.append((j, l, +1.0, tau[j + 1] - tau[l + 1]))
            terms.append((j, l, -1.0, tau[j + 1] - tau[l]))
            terms.append((j, l, +1.0, tau[j] - tau[l]))
            terms.append((j, l, -1.0, tau[j] - tau[l + 1]))
    return terms


def phi_H(kern: Kernels, pathway, times):
    """Accumulated H-kernel phase of a pathway (complex, purely imaginary)."""
    N = pathway.order
    tau = _check_times(times, N)
    P = pathway.pairs
    hb = kern.units.hbar
    diag = [tau[j + 1] - tau[j] for j in range(N + 1)]
    terms = _phase_terms(N, tau)
    args = np.array(diag + [t for *_, t in terms])
    h = kern.base(args, ("h",))["h"]
    total = 0.0
    for j in range(N + 1):
        a, b = P[j]
        total -= kern.h_coef(a, b, a, b) @ h[:, j]
    for q, (j, l, sgn, _) in enumerate(terms):
        a, b = P[j]
        c, d = P[l]
        total += sgn * (kern.h_coef(a, b, c, d) @ h[:, N + 1 + q])
    return 1j / hb * total


def phi_G(kern: Kernels, pathway, times):
    """Accumulated G-kernel (Gaussian width) contribution; real and non-positive for N=0."""
    N = pathway.order
    tau = _check_times(times, N)
    P = pathway.pairs
    hb = kern.units.hbar
    diag = [tau[j + 1] - tau[j] for j in range(N + 1)]
    terms = _phase_terms(N, tau)
    args = np.array(diag + [t for *_, t in terms])
    g = kern.base(args, ("dg",))["dg"]  # already G(t) - G(0)
    total = 0.0
    for j in range(N + 1):
        a, b = P[j]
        total += kern.g_coef(a, b, a, b) @ g[:, j]
    # the cross terms are grouped as differences, so G(0) cancels
    for q, (j, l, sgn, _) in enumerate(terms):
        a, b = P[j]
        c, d = P[l]
        total -= sgn * (kern.g_coef(a, b, c, d) @ g[:, N + 1 + q])
    return total / hb


def phi_tot(kern: Kernels, pathway, times):
    return phi_H(kern, pathway, times) + phi_G(kern, pathway, times)


# -- classical trajectories (discrete modes) -----------------------------

def _segment(times, s):
    tau = np.asarray(times, dtype=float)
    if s < 0 or s > tau[-1]:
        raise ValidationError("time outside the propagation interval")
    j = int(np.searchsorted(tau, s, side="right") - 1)
    return min(max(j, 0), tau.size - 2)


def classical_trajectory(pathway, times, omega, xs, initial, s, units=UNITS):
    """Position and momentum of one mode at time s along a pathway.

    omega in cm^-1, xs[n] the displacement of the mode in state n,
    initial = (x0, p0).
    """
    w = omega / units.hbar
    tau = _check_times(times, pathway.order)
    j = _segment(tau, s)
    x0, p0 = initial
    xb = [0.5 * (xs[a] + xs[b]) for a, b in pathway.pairs]
    x = x0 * np.cos(w * s) + p0 / w * np.sin(w * s) + xb[j] * (1 - np.cos(w * (s - tau[j])))
    p = -x0 * w * np.sin(w * s) + p0 * np.cos(w * s) + xb[j] * w * np.sin(w * (s - tau[j]))
    for l in range(j):
        x += xb[l] * (np.cos(w * (s - tau[l + 1])) - np.cos(w * (s - tau[l])))
        p += xb[l] * w * (-np.sin(w * (s - tau[l + 1])) + np.sin(w * (s - tau[l])))
    return float(x), float(p)


def integrated_trajectory(pathway, times, omega, xs, initial, j, units=UNITS):
    """Closed form of the integral of x along segment j."""
    N = pathway.order
    tau = _check_times(times, N)
    if not 0 <= j <= N:
        raise ValidationError(f"segment {j} outside 0..{N}")
    w = omega / units.hbar
    x0, p0 = initial
    xb = [0.5 * (xs[a] + xs[b]) for a, b in pathway.pairs]
    t0, t1 = tau[j], tau[j + 1]
    val = x0 / w * (np.sin(w * t1) - np.sin(w * t0)) - p0 / w ** 2 * (np.cos(w * t1) - np.cos(w * t0))
    for l in range(j):
        val += xb[l] / w * (np.sin(w * (t1 - tau[l + 1])) - np.sin(w * (t1 - tau[l]))
                            + np.sin(w * (t0 - tau[l])) - np.sin(w * (t0 - tau[l + 1])))
    val += -xb[j] / w * np.sin(w * (t1 - t0)) + xb[j] * (t1 - t0)
    return float(val)


def phi_tot_trajectory(pathway, times, omegas, X, sxsp, units=UNITS):
    """Independent Phi^Tot for a discrete bath at zero Wigner centers.

    Built from the classical-trajectory phase at (x0, p0) = 0 plus the log
    of the Gaussian characteristic function of the initial-condition
    phase. X[k, n] are per-state displacements of mode k.
    """
    N = pathway.order
    tau = _check_times(times, N)
    hb = units.hbar
    total = 0.0 + 0.0j
    for k, om in enumerate(omegas):
        w = om / hb
        xs = X[k]
        lam_n = 0.5 * w ** 2 * np.asarray(xs) ** 2
        A = 0.0
        B = 0.0
        for j, (a, b) in enumerate(pathway.pairs):
            dx = xs[a] - xs[b]
            seg = integrated_trajectory(pathway, tau, om, xs, (0.0, 0.0), j, units)
            total += -1j / hb * (lam_n[a] - lam_n[b]) * (tau[j + 1] - tau[j])
            total += 1j / hb * w ** 2 * dx * seg
            A += w / hb * dx * (np.sin(w * tau[j + 1]) - np.sin(w * tau[j]))
            B -= dx / hb * (np.cos(w * tau[j + 1]) - np.cos(w * tau[j]))
        sx2 = sxsp[k] / w
        total += -0.5 * sx2 * A ** 2 - 0.5 * sxsp[k] * w * B ** 2
    return total
