"""Run outputs: density CSV/PGM, step history, key=value summaries and configs."""
import dataclasses
import math
from pathlib import Path

import numpy as np

from .errors import ParameterError

HISTORY_HEADER = "step,J_m,mu_m,var_m,eta,move,dx_ag_l2,recal,damp"
MASKED = -1.0


def _fmt(v):
    # repr round-trips a float exactly, so histories compare byte for byte
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def density_grid(mesh, xbar):
    """ny x nx array of filtered densities rounded to 6 decimals, masked cells = -1."""
    grid = np.full((mesh.ny, mesh.nx), MASKED)
    grid[mesh.elem_row, mesh.elem_col] = np.round(np.clip(xbar, 0.0, 1.0), 6)
    return grid


def write_density_csv(path, mesh, xbar):
    grid = density_grid(mesh, xbar)
    lines = [",".join("-1" if v == MASKED else f"{v:.6f}" for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n")
    return grid


def read_density_csv(path, mesh):
    grid = np.loadtxt(path, delimiter=",", ndmin=2)
    if grid.shape != (mesh.ny, mesh.nx):
        raise ParameterError(f"density file is {grid.shape[0]}x{grid.shape[1]}, "
                             f"mesh expects {mesh.ny}x{mesh.nx}")
    vals = grid[mesh.elem_row, mesh.elem_col]
    if np.any(vals < 0) or np.any(vals > 1):
        raise ParameterError("density file disagrees with the problem's active mask")
    inactive = np.ones(grid.shape, dtype=bool)
    inactive[mesh.elem_row, mesh.elem_col] = False
    if np.any(grid[inactive] != MASKED):
        raise ParameterError("density file has values outside the problem's active mask")
    return vals


def pgm_pixels(grid):
    """Solid renders black, void and masked cells white."""
    vals = np.where(grid == MASKED, 0.0, grid)
    return np.floor(255.0 * (1.0 - vals) + 0.5).astype(np.uint8)


def write_pgm(path, grid):
    px = pgm_pixels(grid)
    header = f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + px.tobytes())
    return px


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ParameterError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_history(path, history):
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(",".join(_fmt(getattr(row, f.name)) for f in dataclasses.fields(row)))
    Path(path).write_text("\n".join(lines) + "\n")


def write_keyvalues(path, items):
    lines = [f"{k}={_fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v}"
             for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path):
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def coerce_config(raw, cls):
    """Convert string values to the field types of dataclass ``cls``."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for k, v in raw.items():
        if k not in types:
            raise ParameterError(f"unknown config key {k!r}")
        t = types[k]
        t = t if isinstance(t, type) else {"float": float, "int": int, "str": str}.get(str(t), str)
        try:
            if t is int:
                fv = float(v)
                if not fv.is_integer():
                    raise ValueError
                out[k] = int(fv)
            elif t is float:
                fv = float(v)
                if not math.isfinite(fv):
                    raise ValueError
                out[k] = fv
            else:
                out[k] = v
        except ValueError:
            raise ParameterError(f"config key {k!r}: cannot parse {v!r}") from None
    return out


def summary_items(record, extra=()):
    items = [
        ("J_hat", record.J_hat), ("mu_hat", record.mu_hat), ("sigma_hat", record.sigma_hat),
        ("se_J", record.se_J), ("N_step", record.N_step), ("N_solve", record.N_solve),
        ("n_recal", record.n_recal), ("terminated", int(record.terminated)),
        ("wall_s", record.wall_s), ("seed", record.seed), ("kappa", record.kappa),
    ]
    items += list(extra)
    items += [(f"config.{k}", v) for k, v in sorted(record.config.items())]
    return items


def emit_artifacts(record, mesh, out_dir, extra=()):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = write_density_csv(out / "density.csv", mesh, record.xbar)
    write_pgm(out / "density.pgm", grid)
    write_history(out / "history.csv", record.history)
    write_keyvalues(out / "summary.txt", summary_items(record, extra))
    return out
