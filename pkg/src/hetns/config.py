"""Run configuration: a TOML tree with documented defaults and aggregated validation.

Expressions (initial data, ``theta(t, x)``, virial coefficients ``B_n(theta)``)
are strings evaluated by :mod:`hetns.expr`.  TOML has no null, so optional
numbers use ``0`` as "unset" where noted.
"""
import copy
import math
import sys

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, HetnsError, LadderError
from .expr import coefficient_function, field_function
from .grid import BACKENDS, PeriodicGrid
from .kernels import MOLLIFIER_KINDS
from .pressure import ArtificialLadder, TabulatedPressure, VirialPressure, ladder_violations, power_law

PRESSURE_KINDS = ("power", "virial", "tabulated")

# section -> key -> (default, doc)
SCHEMA = {
    "grid": {
        "d": (1, "spatial dimension, 1 or 2 (d = 1 is a test harness)"),
        "n": (256, "points per axis"),
        "backend": ("spectral", "derivative backend: spectral, fd2 or fd4"),
    },
    "time": {
        "t_end": (0.05, "final time"),
        "cfl": (0.5, "CFL safety factor in (0, 1]"),
        "output_every": (0.01, "interval between stored snapshots"),
        "dt": (0.0, "fixed step; 0 selects the adaptive CFL step"),
    },
    "initial": {
        "rho": ("1 + 0.3*sin(2*pi*x)", "density expression in t, x[, y]"),
        "u": (["0.2*cos(2*pi*x)"], "one velocity expression per component"),
    },
    "pressure": {
        "kind": ("power", "power, virial or tabulated"),
        "gamma": (2.2, "adiabatic exponent"),
        "kappa": (1.0, "power law: P = kappa s^gamma"),
        "theta": ("1 + 0.5*sin(2*pi*x)", "virial: temperature field theta(t, x[, y])"),
        "b_coeffs": (["exp(-theta)", "0.5*exp(-theta)"], "virial: B_n(theta) for n = 0..floor(gamma/2)"),
        "s_max": (10.0, "upper density of the hypothesis sampling range"),
        "table": ("", "tabulated: CSV with columns t, x..., s, P"),
    },
    "ladder": {
        "etas": ([0.1], "artificial pressure coefficients"),
        "gammas": ([5.0], "artificial pressure exponents, strictly decreasing"),
    },
    "mollifier": {
        "eps": (0.1, "pressure mollification scale; 0 disables"),
        "kind": ("log-averaged", "plain or log-averaged"),
        "regularize_initial": (True, "mollify initial data when eps > 0"),
    },
    "cascade": {
        "eps_ladder": ([0.2, 0.1, 0.05], "decreasing eps values at fixed eta"),
        "eta_ladders": ([[0.1, 0.05, 0.025, 0.0]], "values taken by each eta_i in turn"),
        "p": (2.0, "exponent of the Lp distance between consecutive runs"),
        "h0": ([0.1, 0.01], "h0 values of the plain compactness table"),
    },
    "weights": {
        "enabled": (False, "evolve the penalized weight alongside the flow"),
        "lambda_pen": (1.0, "penalization strength"),
        "l_exp": (0.25, "exponent l in (0, 1/2)"),
        "h_w": (0.0, "smoothing scale inside the penalization; 0 means diagnostics h0[0]"),
        "pen_gamma": (0.0, "density power in the penalization; 0 means gamma"),
        "eta_thr": (0.1, "threshold of the low-weight monitor"),
    },
    "diagnostics": {
        "h0": ([0.05], "h0 values; one CSV row per (t, h0)"),
        "a": (1.0, "kernel singularity exponent"),
        "ladder_size": (32, "geometric rungs in [h0, 1]"),
        "subsample": (0, "x-stride for the pair sums; 0 chooses automatically"),
        "p": (0.0, "exponent of the plain criterion; 0 means 1 + l"),
    },
    "check": {
        "n_t": (3, "sample times in [0, t_end]"),
        "n_x": (8, "sample points per axis"),
        "n_s": (16, "sample densities, geometric in [s_min, s_max]"),
        "s_min": (1e-3, "lowest sampled density"),
        "n_random": (0, "extra random sample points drawn with the seed"),
        "grid_n": (32, "grid for the r_h sequence"),
        "h_ladder": ([0.25, 0.125, 0.0625], "h values of the r_h sequence"),
    },
    "kernel_table": {
        "h0": (0.05, "lower end of the kernel ladder"),
        "eps": (0.1, "mollifier scale added to the table; 0 skips it"),
    },
}
TOP_LEVEL = {"seed": (0, "seed for randomized sampling")}


def defaults():
    cfg = {sec: {k: copy.deepcopy(v[0]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    cfg.update({k: v[0] for k, v in TOP_LEVEL.items()})
    return cfg


def print_defaults():
    """Defaults as commented, parseable TOML."""
    lines = []
    for k, (v, doc) in TOP_LEVEL.items():
        lines += [f"# {doc}", tomli_w.dumps({k: v}).strip(), ""]
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for k, (v, doc) in keys.items():
            lines += [f"# {doc}", tomli_w.dumps({k: v}).strip()]
        lines.append("")
    return "\n".join(lines)


def merge(user):
    """Defaults overlaid with ``user``; unknown keys are violations."""
    cfg = defaults()
    bad = []
    for k, v in user.items():
        if k in TOP_LEVEL:
            cfg[k] = v
        elif k in SCHEMA and isinstance(v, dict):
            for kk, vv in v.items():
                if kk in SCHEMA[k]:
                    cfg[k][kk] = vv
                else:
                    bad.append(f"unknown key {k}.{kk}")
        else:
            bad.append(f"unknown key {k}")
    return cfg, bad


def loads(text):
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error: {exc}"]) from exc
    cfg, bad = merge(user)
    bad += violations(cfg)
    if bad:
        raise ConfigError(bad)
    return cfg


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return loads(text)


def dumps(cfg):
    return tomli_w.dumps(cfg)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def violations(cfg):
    """Every cross-field problem of a merged config (empty when valid)."""
    out = []
    g, tm, pr, la, mo = cfg["grid"], cfg["time"], cfg["pressure"], cfg["ladder"], cfg["mollifier"]
    if g["d"] not in (1, 2):
        out.append(f"grid.d must be 1 or 2, got {g['d']}")
    if not isinstance(g["n"], int) or g["n"] < 8 or g["n"] % 2:
        out.append(f"grid.n must be an even integer >= 8, got {g['n']}")
    if g["backend"] not in BACKENDS:
        out.append(f"grid.backend must be one of {BACKENDS}, got {g['backend']!r}")
    d_ok = g["d"] in (1, 2)
    d = g["d"] if d_ok else 1
    n = g["n"] if isinstance(g["n"], int) and g["n"] >= 8 and g["n"] % 2 == 0 else None

    if not (_num(tm["t_end"]) and tm["t_end"] > 0):
        out.append("time.t_end must be positive")
    if not (_num(tm["cfl"]) and 0 < tm["cfl"] <= 1):
        out.append("time.cfl must lie in (0, 1]")
    if not (_num(tm["output_every"]) and tm["output_every"] > 0):
        out.append("time.output_every must be positive")
    if not (_num(tm["dt"]) and tm["dt"] >= 0):
        out.append("time.dt must be >= 0")

    for name in ("rho",):
        try:
            field_function(cfg["initial"][name], d)
        except HetnsError as exc:
            out.append(f"initial.{name}: {exc}")
    us = cfg["initial"]["u"]
    if not isinstance(us, list) or len(us) != d:
        out.append(f"initial.u needs {d} expression(s)")
    else:
        for i, e in enumerate(us):
            try:
                field_function(e, d)
            except HetnsError as exc:
                out.append(f"initial.u[{i}]: {exc}")

    gamma = pr["gamma"]
    if pr["kind"] not in PRESSURE_KINDS:
        out.append(f"pressure.kind must be one of {PRESSURE_KINDS}, got {pr['kind']!r}")
    if not (_num(gamma) and gamma > 1):
        out.append("pressure.gamma must exceed 1")
        gamma = None
    if pr["kind"] == "virial":
        try:
            field_function(pr["theta"], d)
        except HetnsError as exc:
            out.append(f"pressure.theta: {exc}")
        if gamma is not None and len(pr["b_coeffs"]) != math.floor(gamma / 2) + 1:
            out.append(f"pressure.b_coeffs needs floor(gamma/2)+1 = {math.floor(gamma / 2) + 1} entries")
        for i, e in enumerate(pr["b_coeffs"]):
            try:
                coefficient_function(e)
            except HetnsError as exc:
                out.append(f"pressure.b_coeffs[{i}]: {exc}")
    if pr["kind"] == "tabulated" and not pr["table"]:
        out.append("pressure.table must name a CSV file for kind = 'tabulated'")

    if len(la["etas"]) != len(la["gammas"]):
        out.append(f"ladder has {len(la['etas'])} etas for {len(la['gammas'])} gammas")
    out += [f"ladder.etas[{i}] must be >= 0" for i, e in enumerate(la["etas"]) if not e >= 0]
    out += [f"ladder: {v}" for v in ladder_violations(la["gammas"], gamma, d if d_ok else None)]

    eps = mo["eps"]
    if mo["kind"] not in MOLLIFIER_KINDS:
        out.append(f"mollifier.kind must be one of {MOLLIFIER_KINDS}")
    for label, e in [("mollifier.eps", eps)] + [(f"cascade.eps_ladder[{i}]", v)
                                               for i, v in enumerate(cfg["cascade"]["eps_ladder"])]:
        if e == 0 and label == "mollifier.eps":
            continue
        if not (_num(e) and 0 < e < 1):
            out.append(f"{label} must lie in (0, 1)")
        elif n is not None and not 1.0 / n < e / 4:
            out.append(f"{label}={e:g} is unresolved: needs n > {4 / e:g} points per axis")
        elif (2 * e if mo["kind"] == "log-averaged" else e) > 0.5:
            out.append(f"{label}={e:g}: mollifier support exceeds half the period")

    ca = cfg["cascade"]
    el = ca["eps_ladder"]
    if any(b >= a for a, b in zip(el, el[1:])):
        out.append("cascade.eps_ladder must be strictly decreasing")
    if len(ca["eta_ladders"]) > len(la["etas"]):
        out.append("cascade.eta_ladders has more entries than ladder.etas")
    if not (_num(ca["p"]) and ca["p"] >= 1):
        out.append("cascade.p must be >= 1")

    w = cfg["weights"]
    if not (_num(w["l_exp"]) and 0 < w["l_exp"] < 0.5):
        out.append("weights.l_exp must lie in (0, 1/2)")
    if not (_num(w["lambda_pen"]) and w["lambda_pen"] >= 0):
        out.append("weights.lambda_pen must be >= 0")
    hw = w["h_w"] or (cfg["diagnostics"]["h0"][0] if cfg["diagnostics"]["h0"] else 0)
    if n is not None and w["enabled"] and not hw >= 1.0 / n:
        out.append(f"weights.h_w={hw:g} is below the grid spacing {1 / n:g}")

    dg = cfg["diagnostics"]
    if not dg["h0"]:
        out.append("diagnostics.h0 must list at least one value")
    for i, h in enumerate(dg["h0"]):
        if not (_num(h) and 0 < h < 1):
            out.append(f"diagnostics.h0[{i}] must lie in (0, 1)")
        elif n is not None and h < 2.0 / n * (1 - 1e-12):
            out.append(f"diagnostics.h0[{i}]={h:g} is unresolved: needs h0 >= 2*spacing, i.e. n >= {math.ceil(2 / h)}")
    if not (_num(dg["a"]) and dg["a"] > 0):
        out.append("diagnostics.a must be positive")
    if not (isinstance(dg["ladder_size"], int) and dg["ladder_size"] >= 8):
        out.append("diagnostics.ladder_size must be an integer >= 8")

    ch = cfg["check"]
    if min(ch["n_t"], ch["n_x"], ch["n_s"]) < 1:
        out.append("check.n_t, check.n_x and check.n_s must be >= 1")
    if not (0 < ch["s_min"] < pr["s_max"]):
        out.append("check.s_min must lie in (0, pressure.s_max)")

    kt = cfg["kernel_table"]
    if n is not None and not (0 < kt["h0"] < 1):
        out.append("kernel_table.h0 must lie in (0, 1)")
    if not isinstance(cfg["seed"], int):
        out.append("seed must be an integer")
    return out


# -- builders ---------------------------------------------------------------------

def make_grid(cfg, n=None):
    g = cfg["grid"]
    return PeriodicGrid(g["d"], n or g["n"], g["backend"])


def make_law(cfg):
    pr, d = cfg["pressure"], cfg["grid"]["d"]
    if pr["kind"] == "power":
        return power_law(pr["gamma"], d, pr["kappa"])
    if pr["kind"] == "virial":
        theta = field_function(pr["theta"], d)
        bs = [coefficient_function(e) for e in pr["b_coeffs"]]
        return VirialPressure(pr["gamma"], bs, theta, d, s_max=pr["s_max"])
    return TabulatedPressure.from_csv(pr["table"], pr["gamma"], d)


def make_ladder(cfg, etas=None):
    la = cfg["ladder"]
    try:
        return ArtificialLadder(tuple(la["etas"] if etas is None else etas), tuple(la["gammas"]),
                                cfg["pressure"]["gamma"], cfg["grid"]["d"])
    except LadderError as exc:
        raise ConfigError(exc.violations) from exc


def eps_of(cfg):
    return cfg["mollifier"]["eps"] or None


def initial_fields(cfg, grid):
    X = np.stack(grid.coords)
    rho = field_function(cfg["initial"]["rho"], grid.d)(0.0, X)
    u = np.stack([field_function(e, grid.d)(0.0, X) for e in cfg["initial"]["u"]])
    return np.array(rho, dtype=float), np.array(u, dtype=float)


def output_times(cfg):
    t_end, every = cfg["time"]["t_end"], cfg["time"]["output_every"]
    k = int(np.floor(t_end / every + 1e-9))
    return [every * i for i in range(1, k + 1)] + [t_end]


def weight_h(cfg):
    return cfg["weights"]["h_w"] or cfg["diagnostics"]["h0"][0]
