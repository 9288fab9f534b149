"""Domain types, units and model constructors.

Energies and frequencies are in cm^-1, times in fs. Mode coordinates are
mass weighted, so a displacement x has units cm^-1/2 fs and the
reorganization energy of a mode is 0.5 * (omega/hbar)**2 * x**2.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HBAR = 5308.837  # cm^-1 fs
KB = 0.695035  # cm^-1 / K


class ValidationError(ValueError):
    """Invalid user input (maps to CLI exit code 2)."""


class NumericalGuardError(RuntimeError):
    """A numerical sanity guard was tripped (maps to CLI exit code 3)."""


@dataclass(frozen=True)
class UnitSystem:
    hbar: float = HBAR
    kB: float = KB

    def __post_init__(self):
        if not (self.hbar > 0 and self.kB > 0):
            raise ValidationError("hbar and kB must be positive")

    def phase(self, energy, t):
        """Phase (radians) accrued by an energy (cm^-1) over a time (fs)."""
        return np.asarray(energy) * np.asarray(t) / self.hbar

    def to_fs(self, omega_cm):
        """Angular frequency in fs^-1 for a wavenumber in cm^-1."""
        return np.asarray(omega_cm, dtype=float) / self.hbar


UNITS = UnitSystem()


@dataclass(frozen=True)
class DrudeLorentz:
    """J(w) = 2 lam (w/wc) / (1 + (w/wc)^2), optionally restricted to a window."""
    lam: float
    wc: float
    window: tuple = (0.0, math.inf)

    def __post_init__(self):
        lo, hi = self.window
        if not (self.lam > 0 and self.wc > 0):
            raise ValidationError("Drude-Lorentz needs lam > 0 and wc > 0")
        if not (0.0 <= lo < hi):
            raise ValidationError(f"bad spectral window {self.window}")
        object.__setattr__(self, "window", (float(lo), float(hi)))

    @property
    def windowed(self):
        return self.window != (0.0, math.inf)

    def J(self, w):
        w = np.asarray(w, dtype=float)
        r = w / self.wc
        out = 2.0 * self.lam * r / (1.0 + r * r)
        lo, hi = self.window
        return np.where((w >= lo) & (w <= hi), out, 0.0)

    def reorg_cdf(self, w):
        """(1/pi) * integral of J/w from 0 to w, without the window."""
        return 2.0 * self.lam / np.pi * np.arctan(np.asarray(w, dtype=float) / self.wc)

    def reorganization(self):
        lo, hi = self.window
        return float(self.reorg_cdf(hi) - self.reorg_cdf(lo))


@dataclass(frozen=True)
class DiscreteModes:
    """Explicit harmonic modes: frequencies (cm^-1) and unit displacements."""
    freqs: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        x = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if w.shape != x.shape or w.ndim != 1 or w.size == 0:
            raise ValidationError("freqs and x0 must be equal-length 1d arrays")
        if np.any(w <= 0):
            raise ValidationError("mode frequencies must be positive")
        if np.unique(w).size != w.size:
            raise ValidationError("mode frequencies must be distinct")
        w.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "freqs", w)
        object.__setattr__(self, "x0", x)

    @classmethod
    def from_reorganizations(cls, freqs, lams, units=UNITS):
        w = np.asarray(freqs, dtype=float)
        lams = np.asarray(lams, dtype=float)
        if np.any(lams < 0):
            raise ValidationError("negative mode reorganization energy")
        return cls(w, np.sqrt(2.0 * lams) / units.to_fs(w))

    def reorganizations(self, units=UNITS):
        return 0.5 * units.to_fs(self.freqs) ** 2 * self.x0 ** 2

    def reorganization(self, units=UNITS):
        return float(self.reorganizations(units).sum())

    def J_weights(self, units=UNITS):
        """Weights c_k such that J(w) = sum_k c_k delta(w - w_k) with w in fs^-1."""
        wf = units.to_fs(self.freqs)
        return 0.5 * np.pi * wf ** 3 * self.x0 ** 2


@dataclass(frozen=True)
class SystemModel:
    """Discrete system.

    energies are the potential minimum energies eps_n; the vertical
    energies eps~_n add the reorganization sum_c g_n^c^2 lam_c.
    coefficients[n, c] scales the displacement pattern of bath channel c
    felt by state n.
    """
    energies: np.ndarray
    couplings: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        d = np.asarray(self.couplings, dtype=complex)
        g = np.asarray(self.coefficients, dtype=float)
        M = e.size
        if e.ndim != 1 or M < 1:
            raise ValidationError("energies must be a nonempty 1d array")
        if d.shape != (M, M):
            raise ValidationError("couplings must be an M x M matrix")
        if g.ndim == 1:
            g = g[:, None]
        if g.shape[0] != M:
            raise ValidationError("channel coefficients need one row per state")
        if np.max(np.abs(d - d.conj().T)) > 1e-12:
            raise ValidationError("couplings must be Hermitian")
        if np.max(np.abs(np.diag(d))) > 0:
            raise ValidationError("couplings must have zero diagonal")
        if np.all(d.imag == 0):
            d = d.real.copy()
        for a in (e, d, g):
            a.setflags(write=False)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "couplings", d)
        object.__setattr__(self, "coefficients", g)

    @property
    def M(self):
        return self.energies.size

    @property
    def n_channels(self):
        return self.coefficients.shape[1]

    def with_coupling(self, scale):
        """Copy with the inter-state couplings multiplied by scale."""
        return SystemModel(self.energies, self.couplings * scale, self.coefficients)


@dataclass(frozen=True)
class BathSpec:
    """Bath channels plus the Gaussian Wigner initial state.

    centers holds, per channel, None or a (K, 2) array of (x', p') for a
    discrete channel.
    """
    channels: tuple
    temperature: float = 0.0
    width_rule: str = "thermal"
    centers: tuple = None

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) == 0:
            raise ValidationError("bath needs at least one channel")
        for ch in chans:
            if not isinstance(ch, (DrudeLorentz, DiscreteModes)):
                raise ValidationError(f"unknown channel type {type(ch).__name__}")
        if self.temperature < 0:
            raise ValidationError("temperature must be non-negative")
        if self.width_rule not in ("thermal", "groundState"):
            raise ValidationError(f"unknown width rule {self.width_rule!r}")
        cen = self.centers
        if cen is None:
            cen = (None,) * len(chans)
        cen = tuple(cen)
        if len(cen) != len(chans):
            raise ValidationError("centers must list one entry per channel")
        fixed = []
        for ch, c in zip(chans, cen):
            if c is None:
                fixed.append(None)
                continue
            if not isinstance(ch, DiscreteModes):
                raise ValidationError("Wigner centers are only supported for discrete channels")
            c = np.asarray(c, dtype=float).reshape(-1, 2)
            if c.shape[0] != ch.freqs.size:
                raise ValidationError("one (x', p') pair per mode expected")
            if np.all(c == 0):
                c = None
            else:
                c.setflags(write=False)
            fixed.append(c)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "centers", tuple(fixed))

    @property
    def beta(self):
        return math.inf if self.temperature == 0 else 1.0 / (KB * self.temperature)

    def sxsp(self, w_cm, units=UNITS):
        """sigma_x * sigma_p (cm^-1 fs) for modes of frequency w (cm^-1)."""
        w = np.asarray(w_cm, dtype=float)
        half = 0.5 * units.hbar
        if self.width_rule == "groundState" or self.temperature == 0:
            return np.full_like(w, half)
        y = w / (2.0 * units.kB * self.temperature)
        with np.errstate(divide="ignore"):
            return half / np.tanh(y)

    def reorganizations(self, units=UNITS):
        out = []
        for ch in self.channels:
            out.append(ch.reorganization(units) if isinstance(ch, DiscreteModes)
                       else ch.reorganization())
        return np.array(out)

    def has_centers(self):
        return any(c is not None for c in self.centers)


@dataclass(frozen=True)
class EigenBasisModel:
    """System eigenbasis including the reorganization shift.

    vectors[:, alpha] are the coefficients c_n^alpha, G[c] the coupling
    pattern of channel c rotated into the eigenbasis (<alpha|g^c|beta>).
    """
    vertical: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    G: np.ndarray

    def displacements(self, channel, x0):
        """x0^(alpha,beta) for every mode of one channel: (K, M, M)."""
        return np.asarray(x0)[:, None, None] * self.G[channel][None]


def diagonalize_system(model: SystemModel, channel_reorg: Sequence[float]) -> EigenBasisModel:
    """Diagonalize h = diag(eps~) + Delta with eps~ = eps + sum_c g^2 lam_c."""
    lam = np.asarray(channel_reorg, dtype=float)
    if lam.shape != (model.n_channels,):
        raise ValidationError("one reorganization energy per channel expected")
    if model.M < 2:
        raise ValidationError("diagonalization needs at least two states")
    g = model.coefficients
    vertical = model.energies + (g ** 2) @ lam
    if not np.any(model.couplings):
        # permutation into ascending energy, ties kept in index order
        order = np.argsort(vertical, kind="stable")
        U = np.eye(model.M)[:, order]
        Et = vertical[order]
    else:
        h = np.diag(vertical).astype(model.couplings.dtype) + model.couplings
        Et, U = np.linalg.eigh(h)
        # fix the phase: largest component of each eigenvector real positive
        idx = np.argmax(np.abs(U), axis=0)
        ph = U[idx, np.arange(model.M)]
        U = U * (np.abs(ph) / ph)[None, :]
        if np.iscomplexobj(U) and not np.any(U.imag):
            U = U.real
    G = np.einsum("na,nc,nb->cab", U.conj(), g, U)
    if np.iscomplexobj(G) and np.max(np.abs(G.imag)) == 0:
        G = G.real
    diag = np.einsum("caa->ca", G).real
    E = Et - (diag ** 2).T @ lam
    return EigenBasisModel(Et, E, U, G)


def suppression_cutoffs(lam: float, wc: float, alpha: float):
    """Window edges that keep a fraction alpha of the reorganization energy.

    Returns (nu_h, nu_l): keeping [0, nu_h] or [nu_l, inf) both retain
    alpha * lam. lam is accepted for symmetry with the config files; the
    edges only depend on wc and alpha.
    """
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    nu_h = wc * math.tan(math.pi * alpha / 2.0)
    nu_l = wc * math.tan(math.pi * (1.0 - alpha) / 2.0)
    return nu_h, nu_l


def discretize_channel(ch: DrudeLorentz, K: int, w_max: float, scheme: str = "graded",
                       units: UnitSystem = UNITS) -> DiscreteModes:
    """Replace a continuous channel by K modes.

    "equal": midpoints of K equal bins on window intersected with (0, w_max],
    lam_k = J(w_k) dw / (pi w_k); the tail above w_max is dropped.

    "graded": bin edges w = wc sinh(u) with u uniform, covering the window
    up to 4 w_max; each mode sits at its bin midpoint and carries the exact
    reorganization of its bin, the last bin absorbing everything above.
    """
    if not isinstance(ch, DrudeLorentz):
        raise ValidationError("only Drude-Lorentz channels can be discretized")
    if K < 1:
        raise ValidationError("K must be at least 1")
    if not w_max > 0:
        raise ValidationError("w_max must be positive")
    lo, hi = ch.window
    if scheme == "equal":
        top = min(hi, w_max)
        if top <= lo:
            raise ValidationError("window lies entirely above w_max")
        edges = np.linspace(lo, top, K + 1)
        w = 0.5 * (edges[1:] + edges[:-1])
        lams = ch.J(w) * (edges[1] - edges[0]) / (np.pi * w)
    elif scheme == "graded":
        top = min(hi, 4.0 * w_max)
        if top <= lo:
            raise ValidationError("window lies entirely above the graded range")
        u = np.linspace(np.arcsinh(lo / ch.wc), np.arcsinh(top / ch.wc), K + 1)
        edges = ch.wc * np.sinh(u)
        w = 0.5 * (edges[1:] + edges[:-1])
        upper = edges[1:].copy()
        upper[-1] = hi
        lams = ch.reorg_cdf(upper) - ch.reorg_cdf(edges[:-1])
    else:
        raise ValidationError(f"unknown discretization scheme {scheme!r}")
    return DiscreteModes.from_reorganizations(w, lams, units)


def discretize_bath(bath: BathSpec, K: int, w_max_factor: float = 10.0,
                    scheme: str = "graded") -> BathSpec:
    chans = []
    for ch in bath.channels:
        if isinstance(ch, DrudeLorentz):
            ch = discretize_channel(ch, K, w_max_factor * ch.wc, scheme)
        chans.append(ch)
    return BathSpec(tuple(chans), bath.temperature, bath.width_rule, bath.centers)


def validate_density(rho, M, tol=1e-12):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (M, M):
        raise ValidationError(f"initial density must be {M} x {M}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValidationError("initial density is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-10:
        raise ValidationError("initial density must have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValidationError("initial density is not positive semidefinite")
    return rho


@dataclass(frozen=True)
class OpenSystem:
    """A system, its bath and the factorized initial system density."""
    system: SystemModel
    bath: BathSpec
    rho0: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bath is not None and len(self.bath.channels) != self.system.n_channels:
            raise ValidationError("number of bath channels does not match channel coefficients")
        rho = self.rho0
        if rho is None:
            rho = np.zeros((self.system.M, self.system.M), complex)
            rho[0, 0] = 1.0
        rho = validate_density(rho, self.system.M)
        rho.setflags(write=False)
        object.__setattr__(self, "rho0", rho)

    def eigenbasis(self):
        return diagonalize_system(self.system, self.bath.reorganizations())


# -- JSON model files -----------------------------------------------------

def _channel_from_dict(d):
    kind = d.get("type", "drude_lorentz").lower().replace("-", "_")
    if kind in ("drude_lorentz", "drudelorentz"):
        win = d.get("window") or [0.0, None]
        lo = float(win[0] or 0.0)
        hi = math.inf if win[1] is None else float(win[1])
        return DrudeLorentz(float(d["lambda"]), float(d["wc"]), (lo, hi))
    if kind == "discrete":
        modes = np.asarray(d["modes"], dtype=float).reshape(-1, 2)
        return DiscreteModes(modes[:, 0], modes[:, 1])
    if kind == "discrete_reorg":
        modes = np.asarray(d["modes"], dtype=float).reshape(-1, 2)
        return DiscreteModes.from_reorganizations(modes[:, 0], modes[:, 1])
    raise ValidationError(f"unknown channel type {kind!r}")


def _channel_to_dict(ch):
    if isinstance(ch, DrudeLorentz):
        lo, hi = ch.window
        return {"type": "drude_lorentz", "lambda": ch.lam, "wc": ch.wc,
                "window": [lo, None if math.isinf(hi) else hi]}
    return {"type": "discrete", "modes": np.column_stack([ch.freqs, ch.x0]).tolist()}


def _complex_matrix(rows, M):
    a = np.asarray(rows, dtype=float)
    if a.shape == (M, M):
        return a.astype(complex)
    if a.shape == (M, M, 2):
        return a[..., 0] + 1j * a[..., 1]
    if a.size == 2 * M * M:
        a = a.reshape(M * M, 2)
        return (a[:, 0] + 1j * a[:, 1]).reshape(M, M)
    raise ValidationError("cannot read complex matrix: expected M*M (re, im) pairs")


def model_from_dict(d) -> OpenSystem:
    try:
        s = d["system"]
        b = d["bath"]
        energies = np.asarray(s["energies"], dtype=float)
        M = energies.size
        coup = _complex_matrix(s.get("couplings", np.zeros((M, M))), M)
        coef = np.asarray(s["channel_coefficients"], dtype=float)
        system = SystemModel(energies, coup, coef)
        chans = tuple(_channel_from_dict(c) for c in b["channels"])
        bath = BathSpec(chans, float(b.get("temperature_K", 0.0)),
                        b.get("width_rule", "thermal"), b.get("centers"))
        rho = d.get("initial_density")
        rho = None if rho is None else _complex_matrix(rho, M)
        return OpenSystem(system, bath, rho)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model file: {exc}") from exc


def model_to_dict(osys: OpenSystem):
    s, b = osys.system, osys.bath
    rho = osys.rho0.ravel()
    coup = np.asarray(s.couplings, dtype=complex)
    return {
        "system": {
            "energies": s.energies.tolist(),
            "couplings": [[z.real, z.imag] for z in coup.ravel()],
            "channel_coefficients": s.coefficients.tolist(),
        },
        "bath": {
            "channels": [_channel_to_dict(c) for c in b.channels],
            "temperature_K": b.temperature,
            "width_rule": b.width_rule,
            "centers": [None if c is None else c.tolist() for c in b.centers],
        },
        "initial_density": [[z.real, z.imag] for z in rho],
    }


def load_model(path) -> OpenSystem:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)


def save_model(osys: OpenSystem, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(osys), fh, indent=2)
