"""Archival output formats: CSV tables, JSON documents, and the FLAB
binary field dump.

FLAB layout (little-endian throughout):
    bytes 0-3   magic b"FLAB"
    bytes 4-5   format version, uint16 (currently 1)
    bytes 6-9   header length H, uint32
    bytes 10-(10+H)  UTF-8 JSON header: {"dtype", "shape", ...metadata}
    remainder   raw array bytes, C order, dtype/shape per header

Field files written for flow snapshots carry {"mesh_hash", "group",
"bc_mode", "t"} in the header; the mesh hash is the SHA-256 of the mesh's
JSON serialization, so a dump can be matched to the exact grid that
produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from flowlab.geometry import Mesh, mesh_to_json

_MAGIC = b"FLAB"
_VERSION = 1


def mesh_hash(m: Mesh) -> str:
    """SHA-256 of the mesh's canonical JSON form."""
    return hashlib.sha256(mesh_to_json(m).encode()).hexdigest()


def write_binary_field(path, array: np.ndarray, **metadata) -> None:
    array = np.ascontiguousarray(array)
    header = dict(metadata)
    header["dtype"] = array.dtype.str
    header["shape"] = list(array.shape)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(array.tobytes())


def read_binary_field(path):
    """Returns (array, metadata dict)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a FLAB file")
        version, hlen = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported FLAB version {version}")
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype=np.dtype(header["dtype"]))
    meta = {k: v for k, v in header.items() if k not in ("dtype", "shape")}
    return data.reshape(header["shape"]).copy(), meta


def write_csv(path, columns: dict) -> None:
    """Write named equal-length columns as a CSV table."""
    names = list(columns)
    rows = zip(*(np.asarray(columns[n]).tolist() for n in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(rows)


def snapshot_to_csv(path, m: Mesh, field: np.ndarray) -> None:
    """Vertex field as (vertex, coordinates..., value) rows."""
    cols = {"vertex": np.arange(m.n_vertices)}
    for a in range(m.coords.shape[1]):
        cols[f"x{a}"] = m.coords[:, a]
    cols["value"] = np.asarray(field)
    write_csv(path, cols)


def energy_trace_to_csv(path, trace) -> None:
    write_csv(path, {"t": trace.times, "energy": trace.energies,
                     "sup_q": trace.sup_q,
                     "boundary_dq_min": trace.bnd_dq_min,
                     "boundary_dq_max": trace.bnd_dq_max})


def exit_samples_to_csv(path, samples) -> None:
    write_csv(path, {"path": np.arange(samples.n_paths),
                     "tau": samples.tau,
                     "censored": samples.censored.astype(int)})


def tail_report_to_dict(eta_hat: float, report) -> dict:
    return {
        "eta_hat": eta_hat,
        "kappa": report.kappa.tolist(),
        "counts": report.counts.tolist(),
        "p_hat": report.p_hat.tolist(),
        "standard_error": report.se.tolist(),
        "neg_log_p": report.neg_log_p.tolist(),
        "monotone_within_2se": bool(report.monotone),
        "n_paths": report.n_paths,
        "dropped": [list(d) for d in report.dropped],
        "notes": report.notes,
    }


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_coerce)
        fh.write("\n")


def _coerce(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.bool_,)):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x)}")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
