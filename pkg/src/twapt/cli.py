"""Command line drivers for the numerical experiments.

twapt <experiment> [--config PATH] [--out DIR] [--orders 0,1,2] [--grid N] [--oracle]

Exit codes: 0 success, 2 validation error, 3 numerical guard.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .corr import basis_kernels, channel_kernels
from .engine import MAX_ORDER, Engine, QuadratureSpec
from .envmode import entropy, mode_rdm_raw, probe_mode, process_rdm
from .model import (UNITS, BathSpec, DrudeLorentz, NumericalGuardError, OpenSystem, SystemModel,
                    ValidationError, discretize_channel, model_from_dict, model_to_dict,
                    suppression_cutoffs)
from .oracle import run_oracle
from .svg import plot_csv

log = logging.getLogger("twapt")

EXPERIMENTS = ("qubit-decoherence", "suppression-scan", "weak-coupling", "single-mode", "kernels")

_HALF = [[0.5, 0.5], [0.5, 0.5]]

QUBIT_MODEL = {
    "system": {"energies": [25.0, -25.0], "couplings": [[0.0, 10.0], [10.0, 0.0]],
               "channel_coefficients": [[1.0], [-1.0]]},
    "bath": {"channels": [{"type": "drude_lorentz", "lambda": 50.0, "wc": 100.0,
                           "window": [0.0, None]}],
             "temperature_K": 0.0, "width_rule": "groundState"},
    "initial_density": _HALF,
}

WEAK_MODEL = {
    "system": {"energies": [100.0, 0.0], "couplings": [[0.0, 10.0], [10.0, 0.0]],
               "channel_coefficients": [[1.0, 0.0], [0.0, 1.0]]},
    "bath": {"channels": [{"type": "drude_lorentz", "lambda": 1.0, "wc": 53.08,
                           "window": [0.0, None]}] * 2,
             "temperature_K": 300.0, "width_rule": "thermal"},
    "initial_density": _HALF,
}

SINGLE_MODEL = {
    "system": {"energies": [500.0, 0.0], "couplings": [[0.0, 10.0], [10.0, 0.0]],
               "channel_coefficients": [[0.0], [1.0]]},
    "bath": {"channels": [{"type": "discrete_reorg", "modes": [[500.0, 25.0]]}],
             "temperature_K": 300.0, "width_rule": "thermal"},
    "initial_density": [[1.0, 0.0], [0.0, 0.0]],
}

DEFAULTS = {
    "qubit-decoherence": {
        "model": QUBIT_MODEL, "t_max": 300.0, "grid": 400, "grid_order3": 200,
        "orders": [0, 1, 2, 3], "probes": [25.0, 50.0, 100.0, 200.0, 400.0, 800.0],
        "probe_bins": 300, "entropy_step_fs": 20.0, "n_max": 2, "oracle": False,
    },
    "suppression-scan": {
        "model": QUBIT_MODEL, "t_max": 300.0, "grid": 400, "orders": [0, 1, 2],
        "alpha": 2.0 / 3.0, "oracle": False,
    },
    "weak-coupling": {
        "model": WEAK_MODEL, "t_max": 2000.0, "grid": 400, "orders": [0, 1, 2],
        "bases": ["local", "eigen"], "oracle": False,
    },
    "single-mode": {
        "model": SINGLE_MODEL, "t_max": 500.0, "grid": 400, "orders": [0, 1, 2],
        "deltas": [10.0, 50.0, 100.0], "bases": ["local", "eigen"], "oracle": False,
        "fock_dim": 30, "oracle_window_fs": 250.0,
    },
    "kernels": {
        "model": QUBIT_MODEL, "t_max": 500.0, "grid": 501, "discrete_modes": 300,
        "alpha": 2.0 / 3.0, "oracle": False,
    },
}


# -- configuration ------------------------------------------------------------

def load_config(experiment, path=None):
    """Defaults for the experiment, updated by the JSON config at path."""
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {experiment!r}")
    cfg = copy.deepcopy(DEFAULTS[experiment])
    if path is None:
        return cfg, {}
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ValidationError("config must be a JSON object")
    exp = user.pop("experiment", experiment)
    if exp != experiment:
        raise ValidationError(f"config is for {exp!r}, not {experiment!r}")
    unknown = set(user) - set(cfg)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    model = user.get("model")
    if isinstance(model, str):
        mpath = model if os.path.isabs(model) else os.path.join(os.path.dirname(path), model)
        try:
            with open(mpath) as fh:
                user["model"] = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read model file {mpath}: {exc}") from exc
    overrides = {k: v for k, v in user.items() if cfg.get(k) != v}
    cfg.update(user)
    return cfg, overrides


def parse_orders(text):
    try:
        orders = sorted({int(v) for v in text.split(",") if v.strip() != ""})
    except ValueError as exc:
        raise ValidationError(f"bad order list {text!r}") from exc
    if not orders or orders[0] < 0:
        raise ValidationError("orders must be non-negative integers")
    return orders


def _check_orders(orders, basis):
    if max(orders) > MAX_ORDER[basis]:
        raise ValidationError(f"order {max(orders)} exceeds the {basis}-basis cap {MAX_ORDER[basis]}")


def _check_bases(bases, orders):
    if not bases:
        raise ValidationError("at least one basis is required")
    for b in bases:
        if b not in MAX_ORDER:
            raise ValidationError(f"unknown basis {b!r}")
        _check_orders(orders, b)


def _spec(cfg, orders, grid=None):
    return QuadratureSpec(float(cfg["t_max"]), int(grid or cfg["grid"]), max(orders))


# -- output helpers ------------------------------------------------------------

def write_csv(path, columns):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], float) for n in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    return path


def _order_columns(prefix, result, obs, orders):
    """<prefix>_order<N> from per-order contributions and <prefix>_total."""
    cols = {}
    for N in orders:
        cols[f"{prefix}_order{N}"] = obs(result.orders[N], raw=True)
    cols[f"{prefix}_total"] = obs(result.rdm, raw=False)
    return cols


def _bloch_obs(i):
    def f(rho, raw):
        if i == 0:
            return 2.0 * rho[:, 0, 1].real
        if i == 1:
            return -2.0 * rho[:, 0, 1].imag
        return (rho[:, 0, 0] - rho[:, 1, 1]).real
    return f


def _series_columns(result, orders):
    cols = {"t_fs": result.times}
    for i, name in enumerate(("sx", "sy", "sz")):
        cols.update(_order_columns(name, result, _bloch_obs(i), orders))
    cols["purity_total"] = result.purity()
    return cols


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out, experiment, cfg, overrides, derived, files):
    man = {
        "experiment": experiment,
        "version": __version__,
        "constants": {"hbar_cm_fs": UNITS.hbar, "kB_cm_per_K": UNITS.kB},
        "config": cfg,
        "overrides": overrides,
        "derived": derived,
        "outputs": {os.path.basename(f): _sha256(f) for f in files},
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(_jsonable(man), fh, indent=2, sort_keys=True)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _with_window(osys, window):
    chans = tuple(DrudeLorentz(c.lam, c.wc, window) for c in osys.bath.channels)
    b = osys.bath
    return OpenSystem(osys.system, BathSpec(chans, b.temperature, b.width_rule, b.centers), osys.rho0)


def _require_continuum(osys, what):
    if not all(isinstance(c, DrudeLorentz) for c in osys.bath.channels):
        raise ValidationError(f"{what} needs Drude-Lorentz channels")


def _no_oracle(cfg, experiment):
    if cfg.get("oracle"):
        raise ValidationError(f"the dense oracle needs a discrete bath; {experiment} uses a continuum")


# -- experiments ---------------------------------------------------------------

def run_qubit_decoherence(cfg, out):
    osys = model_from_dict(cfg["model"])
    if osys.system.M != 2:
        raise ValidationError("qubit-decoherence needs a two-level system")
    _no_oracle(cfg, "qubit-decoherence")
    orders = list(cfg["orders"])
    _check_orders(orders, "local")
    files, derived = [], {}
    groups = [g for g in ([N for N in orders if N <= 2], orders if max(orders) == 3 else []) if g]
    runs = {}
    for grp in groups:
        top = max(grp)
        eng = Engine(osys, _spec(cfg, grp, cfg["grid_order3"] if top == 3 else cfg["grid"]), "local")
        res = eng.series(grp)
        cols = _series_columns(res, grp)
        runs[top] = (eng, grp, cols)
        path = write_csv(os.path.join(out, f"bloch_n{top}.csv"), cols)
        files.append(path)
        files.append(plot_csv(path, os.path.join(out, f"bloch_n{top}.svg"), "t_fs",
                              ["sx_total", "sy_total", "sz_total", "purity_total"],
                              f"Bloch components and purity, order {top}", "t (fs)"))
        pur = res.purity()
        imin = int(np.argmin(pur))
        derived[f"order{top}"] = {"purity_min": pur[imin], "t_purity_min_fs": res.times[imin],
                                  "purity_final": pur[-1]}
    low = [v for k, v in runs.items() if k <= 2]
    if low and cfg["probes"]:
        eng, grp, _ = low[0]
        files += _entropy_outputs(cfg, osys, eng, grp, out, derived)
    if len(runs) == 2:
        (_, _, a), (_, _, b) = runs.values()
        derived["order2_vs_order3_gap"] = _gap(a, b, ("sx_total", "sy_total", "sz_total"))
    return files, derived


def _gap(a, b, cols):
    """Sup-norm difference of two CSV column sets, b interpolated onto a's times."""
    g = 0.0
    for c in cols:
        g = max(g, float(np.max(np.abs(a[c] - np.interp(a["t_fs"], b["t_fs"], b[c])))))
    return g


def _entropy_outputs(cfg, osys, engine, orders, out, derived):
    step = float(cfg["entropy_step_fs"])
    dt = engine.spec.dt
    idx = sorted({int(round(k * step / dt)) for k in range(int(cfg["t_max"] / step) + 1)})
    idx = [i for i in idx if i < engine.times.size]
    rows = {"t_fs": [], "omega_cm": [], "S": [], "truncated_population": []}
    for om in cfg["probes"]:
        pr = probe_mode(osys, 0, float(om), K=int(cfg["probe_bins"]))
        for m in idx:
            raw = mode_rdm_raw(engine, pr, m, int(cfg["n_max"]), orders)
            rho = sum(raw.values())
            rows["t_fs"].append(engine.times[m])
            rows["omega_cm"].append(pr.omega)
            rows["S"].append(entropy(process_rdm(rho)))
            rows["truncated_population"].append(np.trace(rho).real)
    path = write_csv(os.path.join(out, "entropy.csv"), rows)
    pops = np.array(rows["truncated_population"])
    derived["entropy_min_truncated_population"] = float(pops.min())
    if pops.min() < 0.99:
        log.warning("mode truncation keeps only %.4f of the population", pops.min())
    # one curve per probe frequency
    S = np.array(rows["S"]).reshape(len(cfg["probes"]), len(idx))
    cols = {"t_fs": engine.times[idx]}
    for om, s in zip(cfg["probes"], S):
        cols[f"S_{om:g}cm"] = s
    path2 = write_csv(os.path.join(out, "entropy_curves.csv"), cols)
    svg = plot_csv(path2, os.path.join(out, "entropy.svg"), "t_fs", [c for c in cols if c != "t_fs"],
                   "Single-mode entanglement entropy", "t (fs)")
    return [path, path2, svg]


def run_suppression_scan(cfg, out):
    osys = model_from_dict(cfg["model"])
    _require_continuum(osys, "suppression-scan")
    _no_oracle(cfg, "suppression-scan")
    orders = list(cfg["orders"])
    _check_orders(orders, "local")
    ch = osys.bath.channels[0]
    nu_h, nu_l = suppression_cutoffs(ch.lam, ch.wc, float(cfg["alpha"]))
    runs = {"full": (0.0, math.inf), "highcut": (0.0, nu_h), "lowcut": (nu_l, math.inf)}
    cols, derived = {}, {"nu_h_cm": nu_h, "nu_l_cm": nu_l, "windowed_reorganization_cm": {}}
    for name, win in runs.items():
        o = _with_window(osys, win)
        derived["windowed_reorganization_cm"][name] = o.bath.reorganizations().tolist()
        res = Engine(o, _spec(cfg, orders), "local").series(orders)
        cols.setdefault("t_fs", res.times)
        cols[f"purity_{name}_total"] = res.purity()
        for i, obs in enumerate(("sx", "sy", "sz")):
            cols[f"{obs}_{name}_total"] = res.bloch()[:, i]
        derived[f"purity_final_{name}"] = res.purity()[-1]
    path = write_csv(os.path.join(out, "suppression.csv"), cols)
    svg = plot_csv(path, os.path.join(out, "suppression.svg"), "t_fs",
                   ["purity_full_total", "purity_highcut_total", "purity_lowcut_total"],
                   "Purity under spectral suppression", "t (fs)")
    return [path, svg], derived


def _rho_obs(a, b, part):
    def f(rho, raw):
        z = rho[:, a, b]
        return z.real if part == "re" else z.imag
    return f


def _pop_obs(a):
    def f(rho, raw):
        return rho[:, a, a].real
    return f


def _sz(rho, raw):
    return (rho[:, 0, 0] - rho[:, 1, 1]).real


def run_weak_coupling(cfg, out):
    osys = model_from_dict(cfg["model"])
    if osys.system.M != 2:
        raise ValidationError("weak-coupling needs a two-level system")
    _no_oracle(cfg, "weak-coupling")
    orders = list(cfg["orders"])
    _check_bases(cfg["bases"], orders)
    cols, derived = {}, {}
    for basis in cfg["bases"]:
        res = Engine(osys, _spec(cfg, orders), basis).series(orders)
        cols.setdefault("t_fs", res.times)
        cols.update(_order_columns(f"sz_{basis}", res, _sz, orders))
        cols.update(_order_columns(f"re_rho21_{basis}", res, _rho_obs(1, 0, "re"), orders))
        cols.update(_order_columns(f"im_rho21_{basis}", res, _rho_obs(1, 0, "im"), orders))
    if {"local", "eigen"} <= set(cfg["bases"]):
        derived["sz_basis_gap"] = float(np.max(np.abs(cols["sz_local_total"] - cols["sz_eigen_total"])))
    eb = osys.eigenbasis()
    derived["eigen_splitting_cm"] = float(abs(eb.energies[0] - eb.energies[1]))
    path = write_csv(os.path.join(out, "weak_coupling.csv"), cols)
    svgs = [plot_csv(path, os.path.join(out, "weak_coupling_sz.svg"), "t_fs",
                     [f"sz_{b}_total" for b in cfg["bases"]], "<sigma_z>", "t (fs)"),
            plot_csv(path, os.path.join(out, "weak_coupling_rho21.svg"), "t_fs",
                     [f"{p}_rho21_{b}_total" for b in cfg["bases"] for p in ("re", "im")],
                     "rho_21", "t (fs)")]
    return [path] + svgs, derived


def _first_exit(t, pop, bound=0.6):
    hit = np.nonzero(np.abs(pop - 0.5) > bound)[0]
    return float(t[hit[0]]) if hit.size else None


def run_single_mode(cfg, out):
    base = model_from_dict(cfg["model"])
    if base.system.M != 2:
        raise ValidationError("single-mode needs a two-level system")
    orders = list(cfg["orders"])
    _check_bases(cfg["bases"], orders)
    files, derived = [], {}
    for D in cfg["deltas"]:
        D = float(D)
        s = base.system
        osys = OpenSystem(SystemModel(s.energies, [[0.0, D], [D, 0.0]], s.coefficients),
                          base.bath, base.rho0)
        cols, info = {}, {}
        for basis in cfg["bases"]:
            res = Engine(osys, _spec(cfg, orders), basis).series(orders)
            cols.setdefault("t_fs", res.times)
            cols.update(_order_columns(f"pop_donor_{basis}", res, _pop_obs(0), orders))
            info[f"first_exit_{basis}_fs"] = _first_exit(res.times, cols[f"pop_donor_{basis}_total"])
        if cfg["oracle"]:
            orc = run_oracle(osys, cols["t_fs"], int(cfg["fock_dim"]))
            cols["oracle_pop_donor"] = orc.populations()[:, 0]
            win = cols["t_fs"] <= float(cfg["oracle_window_fs"]) + 1e-9
            for basis in cfg["bases"]:
                info[f"oracle_sup_error_{basis}"] = float(np.max(np.abs(
                    cols[f"pop_donor_{basis}_total"][win] - cols["oracle_pop_donor"][win])))
        tag = f"{D:g}".replace(".", "p")
        path = write_csv(os.path.join(out, f"single_mode_delta{tag}.csv"), cols)
        ys = [f"pop_donor_{b}_total" for b in cfg["bases"]] + (["oracle_pop_donor"] if cfg["oracle"] else [])
        files += [path, plot_csv(path, os.path.join(out, f"single_mode_delta{tag}.svg"), "t_fs", ys,
                                 f"Donor population, Delta = {D:g} cm^-1", "t (fs)",
                                 styles={"oracle_pop_donor": "dashed"})]
        derived[f"delta_{D:g}"] = info
    return files, derived


def run_kernels(cfg, out):
    osys = model_from_dict(cfg["model"])
    _no_oracle(cfg, "kernels")
    t = QuadratureSpec(float(cfg["t_max"]), int(cfg["grid"]), 0).times
    kern = basis_kernels(osys, "local")
    base = kern.base(t)
    cols = {"t_fs": t}
    for c in range(len(osys.bath.channels)):
        for tag, val in base.items():
            cols[f"{tag}_c{c}"] = val[c]
    derived = {}
    for c, ch in enumerate(osys.bath.channels):
        if not isinstance(ch, DrudeLorentz):
            continue
        K = int(cfg["discrete_modes"])
        disc = discretize_channel(ch, K, 10.0 * ch.wc)
        dbath = BathSpec((disc,), osys.bath.temperature, osys.bath.width_rule)
        hd = channel_kernels(disc, dbath, t, ("h",))["h"]
        cols[f"h_discrete_c{c}"] = hd
        scale = np.max(np.abs(cols[f"h_c{c}"]))
        derived[f"h_discrete_rel_error_c{c}"] = float(np.max(np.abs(hd - cols[f"h_c{c}"])) / scale)
        derived[f"discrete_reorganization_c{c}"] = disc.reorganization()
        nu_h, nu_l = suppression_cutoffs(ch.lam, ch.wc, float(cfg["alpha"]))
        derived[f"cutoffs_c{c}"] = {
            "nu_h_cm": nu_h, "nu_l_cm": nu_l,
            "reorganization_below_nu_h": DrudeLorentz(ch.lam, ch.wc, (0.0, nu_h)).reorganization(),
            "reorganization_above_nu_l": DrudeLorentz(ch.lam, ch.wc, (nu_l, math.inf)).reorganization(),
        }
    path = write_csv(os.path.join(out, "kernels.csv"), cols)
    ys = [c for c in cols if c.startswith("h_")]
    svg = plot_csv(path, os.path.join(out, "kernels_h.svg"), "t_fs", ys, "h(t)", "t (fs)")
    return [path, svg], derived


RUNNERS = {
    "qubit-decoherence": run_qubit_decoherence,
    "suppression-scan": run_suppression_scan,
    "weak-coupling": run_weak_coupling,
    "single-mode": run_single_mode,
    "kernels": run_kernels,
}


def run(experiment, config=None, out=None, orders=None, grid=None, oracle=False):
    """Run one experiment and return (files, derived)."""
    cfg, overrides = load_config(experiment, config)
    if orders is not None:
        cfg["orders"] = list(orders)
        overrides["orders"] = list(orders)
    if grid is not None:
        if grid < 2:
            raise ValidationError("grid must be at least 2")
        cfg["grid"] = int(grid)
        overrides["grid"] = int(grid)
    if oracle:
        cfg["oracle"] = True
        overrides["oracle"] = True
    # validate the model early so a bad file fails before any work
    model_to_dict(model_from_dict(cfg["model"]))
    out = out or os.path.join("runs", experiment)
    os.makedirs(out, exist_ok=True)
    files, derived = RUNNERS[experiment](cfg, out)
    files.append(write_manifest(out, experiment, cfg, overrides, derived, files))
    return files, derived


def build_parser():
    p = argparse.ArgumentParser(prog="twapt", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON experiment config (defaults built in)")
    p.add_argument("--out", help="output directory (default runs/<experiment>)")
    p.add_argument("--orders", help="comma separated perturbation orders, e.g. 0,1,2")
    p.add_argument("--grid", type=int, help="time grid points")
    p.add_argument("--oracle", action="store_true", help="add dense-propagation reference curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        orders = parse_orders(args.orders) if args.orders else None
        files, derived = run(args.experiment, args.config, args.out, orders, args.grid, args.oracle)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
