"""Versioned CSV, binary and JSON outputs.

Every text file starts with a ``# STOGEO1`` line carrying the kind of data
and the config hash.  Floats are written with 17 significant digits so
that reruns give byte-identical files and values round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .frame_bundle import FramePath

MAGIC = "STOGEO1"
BINARY_MAGIC = b"STOGEO1\n"


def fmt(x) -> str:
    return format(float(x), ".17g")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_jsonable)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _clean(obj):
    """Replace non-finite floats by strings so records stay valid JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2, default=_jsonable) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def estimate_record(estimate, stderr, n_paths: int, seed: int, cfg_hash: str, **extra) -> dict:
    rec = {"estimate": _clean(np.asarray(estimate).tolist()), "stderr": _clean(np.asarray(stderr).tolist()),
           "n_paths": int(n_paths), "seed": int(seed), "config_hash": cfg_hash}
    rec.update(extra)
    return rec


def write_csv(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence], cfg_hash: str = "") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# {MAGIC} {kind} config_hash={cfg_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                        for v in row])
    return path


def read_csv(path) -> tuple[dict, list, np.ndarray]:
    """Returns the header fields, column names and a float array of rows."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
        if not first.startswith(f"# {MAGIC} "):
            raise ValueError(f"{path} is not a {MAGIC} file")
        parts = first.split()[2:]
        header = {"kind": parts[0]}
        header.update(dict(p.split("=", 1) for p in parts[1:] if "=" in p))
        reader = csv.reader(fh)
        cols = next(reader)
        data = [[float(v) for v in row] for row in reader]
    return header, cols, np.array(data, dtype=float).reshape(len(data), len(cols))


def write_frame_csv(path, fp: FramePath, cfg_hash: str = "") -> Path:
    """One row per node: path index, t, chart id, m coordinates, flattened e."""
    d = fp.dim
    cols = ["path", "t", "chart"] + [f"m{i}" for i in range(d)] + [f"e{i}{j}" for i in range(d) for j in range(d)]

    def rows():
        for p in range(fp.n_paths):
            for i, t in enumerate(fp.times):
                yield [int(fp.path_indices[p]), t, int(fp.charts[p, i]), *fp.m[p, i], *fp.e[p, i].ravel()]
    return write_csv(path, "frame-path", cols, rows(), cfg_hash)


_FRAME_FIELDS = ("times", "m", "e", "charts", "dx", "path_indices", "failed", "substeps")


def write_frame_binary(path, fp: FramePath, cfg_hash: str = "") -> Path:
    """Compact dump for resuming: magic, JSON header length, JSON header, npz payload."""
    buf = _io.BytesIO()
    np.savez(buf, **{k: getattr(fp, k) for k in _FRAME_FIELDS})
    header = canonical_json({"seed": int(fp.seed), "noise_scale": float(fp.noise_scale),
                             "config_hash": cfg_hash}).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(buf.getvalue())
    return path


def read_frame_binary(path) -> tuple[FramePath, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(BINARY_MAGIC):
        raise ValueError(f"{path} is not a {MAGIC} binary dump")
    off = len(BINARY_MAGIC)
    (n,) = struct.unpack("<Q", raw[off:off + 8])
    header = json.loads(raw[off + 8:off + 8 + n])
    arrays = np.load(_io.BytesIO(raw[off + 8 + n:]))
    fields = {k: arrays[k] for k in _FRAME_FIELDS}
    fp = FramePath(seed=header["seed"], noise_scale=header["noise_scale"], **fields)
    return fp, header


def write_grid_csv(path, times, axes: Sequence[np.ndarray], values, extra: Optional[dict] = None,
                   cfg_hash: str = "", stride: int = 1) -> Path:
    """Long-format grid: ``t, x..., u..., extra...`` for every node (time slices thinned by ``stride``)."""
    values = np.asarray(values, dtype=float)
    d = len(axes)
    ncomp = values.shape[-1]
    extra = extra or {}
    cols = ["t"] + [f"x{i}" for i in range(d)] + [f"u{j}" for j in range(ncomp)] + list(extra)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    def rows():
        for k in range(0, len(times), stride):
            vals = values[k].reshape(-1, ncomp)
            ex = [np.asarray(v[k]).reshape(-1) for v in extra.values()]
            for q in range(mesh.shape[0]):
                yield [times[k], *mesh[q], *vals[q], *(e[q] for e in ex)]
    return write_csv(path, "grid", cols, rows(), cfg_hash)


def write_group_csv(path, gp, cfg_hash: str = "", max_paths: Optional[int] = None) -> Path:
    """One row per node: path index, t, flattened g, u components."""
    r = gp.g.shape[-1]
    n = gp.u.shape[-1]
    cols = ["path", "t"] + [f"g{i}{j}" for i in range(r) for j in range(r)] + [f"u{k}" for k in range(n)]
    P = gp.n_paths if max_paths is None else min(max_paths, gp.n_paths)

    def rows():
        for p in range(P):
            for i, t in enumerate(gp.times):
                yield [int(gp.path_indices[p]), t, *gp.g[p, i].ravel(), *gp.u[i]]
    return write_csv(path, "group-path", cols, rows(), cfg_hash)


def write_fbsde_csv(path, sol, cfg_hash: str = "") -> Path:
    """One row per time slice: t and the basis coefficients of ``û`` (component-major)."""
    n, B, d = sol.y_coeffs.shape
    cols = ["t"] + [f"c{j}_{b}" for j in range(d) for b in range(B)]
    rows = ([sol.times[i], *sol.y_coeffs[i].T.ravel()] for i in range(n))
    return write_csv(path, "fbsde-coefficients", cols, rows, cfg_hash)
