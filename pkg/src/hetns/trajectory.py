"""Trajectory directories: one binary state file per output time plus ``manifest.json``."""
import hashlib
import json
import os
import time

import numpy as np

from . import __version__
from .errors import UsageError
from .fields import read_field_binary, write_field_binary
from .grid import PeriodicGrid
from .solver import SimState, Trajectory
from .weights import WeightState

MANIFEST = "manifest.json"
SERIES = "series.csv"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, files, config, extra=None, wall_clock=None):
    """Manifest with checksums of ``files`` (paths relative to ``directory``)."""
    manifest = {
        "code_version": __version__,
        "config": config,
        "checksums": {f: sha256(os.path.join(directory, f)) for f in sorted(files)},
        "wall_clock_seconds": wall_clock,
    }
    manifest.update(extra or {})
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def save_trajectory(directory, traj, config=None, dump_weights=False, wall_clock=None, extra_files=()):
    os.makedirs(directory, exist_ok=True)
    files = []
    for k, s in enumerate(traj.snapshots):
        name = f"state_{k:05d}.bin"
        write_field_binary(os.path.join(directory, name), s.grid, np.concatenate([s.rho[None], s.m]))
        files.append(name)
    if dump_weights and traj.weights:
        for k, w in enumerate(traj.weights):
            name = f"weights_{k:05d}.bin"
            write_field_binary(os.path.join(directory, name), traj.grid, w.w)
            files.append(name)
    np.savetxt(os.path.join(directory, SERIES), np.column_stack([traj.times, traj.dissipation, traj.pressure_work]),
               delimiter=",", header="t,dissipation,pressure_work", comments="", fmt="%.17g")
    files.append(SERIES)
    files.extend(extra_files)
    extra = {
        "times": [float(s.t) for s in traj.snapshots],
        "steps": int(traj.steps),
        "grid": {"d": traj.grid.d, "n": traj.grid.n, "backend": traj.grid.backend},
        "weights": bool(dump_weights and traj.weights),
    }
    if traj.weights:
        w0 = traj.weights[0]
        extra["weight_params"] = {"lambda_pen": w0.lambda_pen, "l_exp": w0.l_exp, "h_w": w0.h_w}
    return write_manifest(directory, files, config, extra, wall_clock)


def load_trajectory(directory, params=None):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise UsageError(f"no manifest in {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    gm = manifest["grid"]
    snaps = []
    for k, t in enumerate(manifest["times"]):
        grid, data = read_field_binary(os.path.join(directory, f"state_{k:05d}.bin"), gm["backend"])
        snaps.append(SimState(grid, data[0], data[1:], t))
    grid = PeriodicGrid(gm["d"], gm["n"], gm["backend"])
    weights = None
    if manifest.get("weights"):
        wp = manifest.get("weight_params", {})
        weights = []
        for k, t in enumerate(manifest["times"]):
            _, w = read_field_binary(os.path.join(directory, f"weights_{k:05d}.bin"), gm["backend"])
            weights.append(WeightState(w, t, wp.get("lambda_pen", 0.0), wp.get("l_exp", 0.25), wp.get("h_w", 0.0)))
    series = np.loadtxt(os.path.join(directory, SERIES), delimiter=",", skiprows=1, ndmin=2)
    traj = Trajectory(grid, params, snaps, series[:, 0], series[:, 1], series[:, 2], manifest.get("steps", 0),
                      weights=weights)
    return traj, manifest


def timestamped_dir(root, prefix):
    stamp = time.strftime("%Y%m%d-%H%M%S") + f"-{time.time_ns() % 1_000_000_000:09d}"
    path = os.path.join(root, f"{prefix}-{stamp}")
    os.makedirs(path, exist_ok=False)
    return path
