"""Liouville pathways and their weights.

A pathway of order N is the sequence of (left, right) state pairs
(n_j, n'_j), j = 0..N. Every step changes exactly one side. S_j = +1 when
step j acts on the left (ket) index, -1 when it acts on the right.

Eigenbasis weights chi1/chi2 are available twice: directly from the per
mode theta/zeta helpers and from the assembled N/P kernel expressions.
The kernel form is what the engine tabulates; the direct form is kept as
an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import UNITS, DiscreteModes, ValidationError


@dataclass(frozen=True)
class LiouvillePathway:
    left: tuple
    right: tuple

    def __post_init__(self):
        if len(self.left) != len(self.right) or len(self.left) == 0:
            raise ValidationError("left and right sequences must have equal nonzero length")
        for j in range(1, len(self.left)):
            dl = self.left[j] != self.left[j - 1]
            dr = self.right[j] != self.right[j - 1]
            if dl == dr:
                raise ValidationError(f"step {j} must change exactly one side")

    @property
    def order(self):
        return len(self.left) - 1

    @property
    def pairs(self):
        return list(zip(self.left, self.right))

    @property
    def signs(self):
        """S_j for j = 1..N."""
        return tuple(1 if self.left[j] != self.left[j - 1] else -1 for j in range(1, len(self.left)))

    def step_indices(self, j):
        """Index pair (a, b) of the coupling element used at step j."""
        if self.left[j] != self.left[j - 1]:
            return self.left[j], self.left[j - 1]
        return self.right[j - 1], self.right[j]

    def __str__(self):
        body = " -> ".join(f"({a},{b})" for a, b in self.pairs)
        sg = "".join("L" if s > 0 else "R" for s in self.signs)
        return f"{body}  [{sg or '-'}]"


@lru_cache(maxsize=None)
def _enumerate(M, N, final):
    if N == 0:
        return ((final,),)
    out = []
    n, m = final
    for prev in _enumerate_prev(M, n, m):
        for head in _enumerate(M, N - 1, prev):
            out.append(head + (final,))
    return tuple(out)


def _enumerate_prev(M, n, m):
    prev = [(k, m) for k in range(M) if k != n]
    prev += [(n, k) for k in range(M) if k != m]
    return prev


def enumerate_pathways(M, N, final, initial_filter=None, couplings=None):
    """All pathways of order N that end in the pair final.

    initial_filter(n0, n0') may drop pathways by their starting pair and
    couplings (an M x M matrix) drops steps through vanishing elements.
    """
    if N < 0:
        raise ValidationError("order must be non-negative")
    final = (int(final[0]), int(final[1]))
    if not (0 <= final[0] < M and 0 <= final[1] < M):
        raise ValidationError("final pair out of range")
    out = []
    for seq in _enumerate(M, N, final):
        p = LiouvillePathway(tuple(a for a, _ in seq), tuple(b for _, b in seq))
        if initial_filter is not None and not initial_filter(*seq[0]):
            continue
        if couplings is not None and any(
                couplings[p.step_indices(j)] == 0 for j in range(1, N + 1)):
            continue
        out.append(p)
    return out


def theta_envfree(pathway: LiouvillePathway, V):
    """Product of coupling matrix elements with a minus sign per right step."""
    V = np.asarray(V)
    w = 1.0 + 0.0j
    for j in range(1, pathway.order + 1):
        a, b = pathway.step_indices(j)
        s = pathway.signs[j - 1]
        w *= s * V[a, b]
    return w


# -- direct (per mode) route ----------------------------------------------

@dataclass(frozen=True)
class ModeSet:
    """Explicit modes for the direct weight route.

    omega (K,) cm^-1, X (K, M, M) displacement matrices x^(a,b) in the
    active basis, sxsp (K,), centers (K, 2).
    """
    omega: np.ndarray
    X: np.ndarray
    sxsp: np.ndarray
    centers: np.ndarray

    @property
    def K(self):
        return self.omega.size


def mode_set(osys, basis="local", units=UNITS):
    """Flatten the discrete channels of a system into a ModeSet."""
    bath = osys.bath
    if basis == "local":
        g = osys.system.coefficients
        G = np.einsum("nc,nm->cnm", g, np.eye(osys.system.M))
    else:
        G = osys.eigenbasis().G
    om, X, cen = [], [], []
    for c, (ch, ce) in enumerate(zip(bath.channels, bath.centers)):
        if not isinstance(ch, DiscreteModes):
            raise ValidationError("the direct weight route needs discrete channels")
        om.append(ch.freqs)
        X.append(ch.x0[:, None, None] * G[c][None])
        cen.append(np.zeros((ch.freqs.size, 2)) if ce is None else ce)
    om = np.concatenate(om)
    return ModeSet(om, np.concatenate(X), bath.sxsp(om, units), np.concatenate(cen))


def _seg_data(pathway, modes, k):
    diag = np.real(np.einsum("aa->a", modes.X[k]))
    dx = np.array([diag[a] - diag[b] for a, b in pathway.pairs])
    xb = np.array([0.5 * (diag[a] + diag[b]) for a, b in pathway.pairs])
    return dx, xb


def x_nonlocal(pathway, times, modes, k, upto, t, units=UNITS):
    """sum_{i=0}^{upto} xbar^i [cos(w(t - tau_{i+1})) - cos(w(t - tau_i))]."""
    w = modes.omega[k] / units.hbar
    tau = np.asarray(times, float)
    _, xb = _seg_data(pathway, modes, k)
    return sum(xb[i] * (np.cos(w * (t - tau[i + 1])) - np.cos(w * (t - tau[i])))
               for i in range(upto + 1))


def theta_helper(pathway, times, modes: ModeSet, k, j, units=UNITS):
    """theta^(k)_{j,N}: classical argument of the j-th interaction."""
    N = pathway.order
    if not 1 <= j <= N:
        raise ValidationError(f"step {j} outside 1..{N}")
    tau = np.asarray(times, float)
    w = modes.omega[k] / units.hbar
    dx, _ = _seg_data(pathway, modes, k)
    tj = tau[j]
    fl = sum(dx[l] * (np.sin(w * (tau[l + 1] - tj)) - np.sin(w * (tau[l] - tj)))
             for l in range(N + 1))
    xp, pp = modes.centers[k]
    val = 1j / units.hbar * modes.sxsp[k] * fl
    val += xp * np.cos(w * tj) + pp / w * np.sin(w * tj)
    val += x_nonlocal(pathway, tau, modes, k, j - 1, tj, units)
    return val


def zeta_helper(pathway, times, modes: ModeSet, k, j, units=UNITS):
    """zeta^(k)_{j,N}: momentum-fluctuation derivative term of step j."""
    N = pathway.order
    if not 1 <= j <= N:
        raise ValidationError(f"step {j} outside 1..{N}")
    tau = np.asarray(times, float)
    w = modes.omega[k] / units.hbar
    dx, _ = _seg_data(pathway, modes, k)
    tj = tau[j]
    return float(sum(dx[l] * (np.cos(w * (tau[l + 1] - tj)) - np.cos(w * (tau[l] - tj)))
                     for l in range(j, N + 1)))


def _step_vector(pathway, modes, j, units=UNITS):
    """s_j * w_k^2 x_k^(a_j b_j) over modes."""
    a, b = pathway.step_indices(j)
    w = modes.omega / units.hbar
    return pathway.signs[j - 1] * w ** 2 * modes.X[:, a, b]


def _bracket(pathway, times, modes, j, units):
    S = pathway.signs[j - 1]
    return np.array([theta_helper(pathway, times, modes, k, j, units)
                     - 0.5 * S * zeta_helper(pathway, times, modes, k, j, units)
                     for k in range(modes.K)])


def chi1_direct(pathway, times, modes: ModeSet, units=UNITS):
    if pathway.order != 1:
        raise ValidationError("chi1 needs a first order pathway")
    v = _step_vector(pathway, modes, 1, units)
    return -np.sum(v * _bracket(pathway, times, modes, 1, units))


def chi2_direct(pathway, times, modes: ModeSet, units=UNITS):
    if pathway.order != 2:
        raise ValidationError("chi2 needs a second order pathway")
    tau = np.asarray(times, float)
    v1 = _step_vector(pathway, modes, 1, units)
    v2 = _step_vector(pathway, modes, 2, units)
    b1 = _bracket(pathway, tau, modes, 1, units)
    b2 = _bracket(pathway, tau, modes, 2, units)
    w = modes.omega / units.hbar
    S1 = pathway.signs[0]
    dt = tau[2] - tau[1]
    cross = modes.sxsp / w * np.cos(w * dt) - 0.5j * units.hbar / w * S1 * np.sin(w * dt)
    return np.sum(v2 * b2) * np.sum(v1 * b1) + np.sum(v1 * v2 * cross)


# -- kernel (assembled) route ----------------------------------------------

def N_function(kern, pathway, times, j, ab):
    """N^{ab}_{j,N} from the I/J/K kernels plus the Wigner-center drive."""
    N = pathway.order
    tau = np.asarray(times, float)
    tj = tau[j]
    S = pathway.signs[j - 1]
    P = pathway.pairs
    val = 0.0 + 0.0j
    for i in range(N + 1):
        dI = (kern.appendix_kernel("I", ab, P[i], tau[i + 1] - tj)
              - kern.appendix_kernel("I", ab, P[i], tau[i] - tj))
        val += 1j * dI
        if i < j:
            val += (kern.appendix_kernel("J", ab, P[i], tau[i + 1] - tj)
                    - kern.appendix_kernel("J", ab, P[i], tau[i] - tj))
        else:
            val -= 0.5 * S * (kern.appendix_kernel("K", ab, P[i], tau[i + 1] - tj)
                              - kern.appendix_kernel("K", ab, P[i], tau[i] - tj))
    Zc, _ = kern.center_terms(tj)
    z = kern.G[:, ab[0], ab[1]] @ Zc
    return -val - z


def chi1_kernel(kern, pathway, times):
    if pathway.order != 1:
        raise ValidationError("chi1 needs a first order pathway")
    return pathway.signs[0] * N_function(kern, pathway, times, 1, pathway.step_indices(1))


def P_function(kern, pathway, times):
    tau = np.asarray(times, float)
    ab1, ab2 = pathway.step_indices(1), pathway.step_indices(2)
    s1, s2 = pathway.signs
    dt = tau[2] - tau[1]
    L = kern.appendix_kernel("L", ab2, ab1, dt)
    Mk = kern.appendix_kernel("M", ab2, ab1, dt)
    return s1 * s2 * (L - 0.5j * s1 * Mk)


def chi2_kernel(kern, pathway, times):
    if pathway.order != 2:
        raise ValidationError("chi2 needs a second order pathway")
    s1, s2 = pathway.signs
    n2 = N_function(kern, pathway, times, 2, pathway.step_indices(2))
    n1 = N_function(kern, pathway, times, 1, pathway.step_indices(1))
    return s1 * s2 * n2 * n1 + P_function(kern, pathway, times)
