"""CSV/JSON writers. Every file is written to a temporary sibling and renamed
into place, so readers never see a half-written output."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.17g}"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return FLOAT_FMT.format(float(v))


def csv_text(header: list[str], rows, preamble: dict | None = None) -> str:
    """CSV with an optional ``# key: value`` comment block in front."""
    buf = io.StringIO()
    for k, v in (preamble or {}).items():
        buf.write(f"# {k}: {_cell(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows, preamble=None) -> Path:
    return atomic_write_text(path, csv_text(header, rows, preamble))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if np.isfinite(f) else str(f)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    return o


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _coord_names(prefix: str, d: int) -> list[str]:
    return [prefix] if d == 1 else [f"{prefix}{i}" for i in range(d)]


def trajectory_rows(traj, path: int = 0):
    """Rows of the per-step trajectory table: step, time, coordinates, tau, gamma."""
    x = traj.path(path)
    d = x.shape[1]
    header = ["step", "time"] + _coord_names("x", d) + ["tau", "gamma"]
    gam = traj.gamma_column(path)
    rows = []
    for k in range(x.shape[0]):
        tau = "" if traj.taus is None or k >= traj.steps else int(traj.taus[k, path])
        g = gam[k] if k < len(gam) else ""
        rows.append([k, k * traj.dt, *x[k], tau, g])
    return header, rows


def write_trajectory(path, traj, sample: int = 0) -> Path:
    return write_csv(path, *trajectory_rows(traj, sample))


def sme_state_rows(records_x, records_aux, sigmas, dt: float, aux_name: str = "p"):
    """Same layout as the trajectory table plus the auxiliary coordinate and the
    upper triangle of Sigma in row-major order."""
    x = np.asarray(records_x)
    d = x.shape[1]
    iu = np.triu_indices(d)
    header = (["step", "time"] + _coord_names("x", d) + ["tau", "gamma"] + _coord_names(aux_name, d)
              + [f"sigma{i}{j}" for i, j in zip(*iu)])
    rows = []
    for k in range(x.shape[0]):
        S = np.asarray(sigmas[k]).reshape(d, d)
        rows.append([k, k * dt, *x[k], "", "", *np.asarray(records_aux[k]), *S[iu]])
    return header, rows


def stats_rows(stats):
    d = stats.mean.shape[1]
    header =["checkpoint", "time"] + _coord_names("mean", d) + ["second_moment"]
    if d > 1:
        header += [f"second_moment{i}" for i in range(d)]
    header += _coord_names("stderr", d) + ["second_moment_stderr"]
    rows = []
    for j, k in enumerate(stats.checkpoints):
        row = [int(k), stats.times[j], *stats.mean[j], stats.second_moment_norm[j]]
        if d > 1:
            row += list(stats.second_moment[j])
        row += list(stats.stderr[j]) + [float(np.sqrt((stats.second_moment_stderr[j] ** 2).sum()))]
        rows.append(row)
    return header, rows


def write_stats(path, stats) -> Path:
    return write_csv(path, *stats_rows(stats))


def moment_rows(t, series, system, u=None):
    header = ["t", "EX2", "EY2", "EXY", "forcing"]
    rows = []
    for i, ti in enumerate(t):
        ui = 0.0 if u is None else float(u(ti) if callable(u) else u)
        rows.append([ti, *series[i], system.forcing(ui)])
    return header, rows


def schedule_rows(schedule):
    header = ["k", "t", "u_star", "batch_size"]
    rows = [[k, schedule.times[k], schedule.u_values[k], int(schedule.batch_sizes[k])]
            for k in range(schedule.steps)]
    return header, rows


def schedule_summary(schedule) -> dict:
    return {"gamma_star": schedule.gamma_star, "t_star": schedule.t_star,
            "k_star": schedule.transition_step, "total_budget": schedule.budget,
            "steps": schedule.steps, "clock": schedule.clock}


def write_schedule(path, schedule) -> Path:
    return write_csv(path, *schedule_rows(schedule), preamble=schedule_summary(schedule))


def read_batch_file(path) -> list[int]:
    """Batch sizes from a CSV with a ``batch_size`` column, or one integer per line."""
    text = Path(path).read_text().splitlines()
    lines = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no batch sizes")
    first = next(csv.reader([lines[0]]))
    if "batch_size" in first:
        col = first.index("batch_size")
        vals = [next(csv.reader([ln]))[col] for ln in lines[1:]]
    else:
        vals = [ln.split(",")[0] for ln in lines]
    out = [int(float(v)) for v in vals]
    if any(b < 1 for b in out):
        raise ValueError(f"{path}: batch sizes must be >= 1")
    return out
