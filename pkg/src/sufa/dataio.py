"""CSV ingestion, centering, draw persistence, manifests and run locks."""

import csv
import hashlib
import json
import os
import struct
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .model import ModelDims, ParamSet
from .priors import DLState
from .sampler import McmcOutput

MAGIC = b"SUFADRW\x00"
FORMAT_VERSION = 1

# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_study_csv(path, group_column=None):
    """Numeric matrix plus header names; optional group labels split out.

    Errors carry one-based row numbers and column names so the offending
    cell can be found in a spreadsheet.
    """
    path = Path(path)
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [name.strip() for name in header]
        group_idx = None
        if group_column is not None:
            if group_column not in header:
                raise InputError(f"{path}: no column named {group_column!r}")
            group_idx = header.index(group_column)
        keep = [i for i in range(len(header)) if i != group_idx]
        rows, groups = [], []
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(
                    f"{path}: row {row_number} has {len(row)} cells, "
                    f"expected {len(header)}")
            values = []
            for i in keep:
                try:
                    values.append(float(row[i]))
                except ValueError:
                    raise InputError(
                        f"{path}: row {row_number}, column {header[i]!r}: "
                        f"non-numeric value {row[i]!r}") from None
            rows.append(values)
            if group_idx is not None:
                groups.append(row[group_idx])
    if not rows:
        raise InputError(f"{path}: header only, no data rows")
    matrix = np.array(rows, dtype=float)
    names = [header[i] for i in keep]
    return matrix, names, (np.array(groups) if groups else None)


def align_features(matrices, name_lists):
    """Restrict all studies to the features they share, keeping the first
    study's ordering; a warning names everything dropped."""
    if len(matrices) != len(name_lists) or not matrices:
        raise InputError("need matching, nonempty matrix and name lists")
    common = [name for name in name_lists[0]
              if all(name in names for names in name_lists)]
    if not common:
        raise InputError("studies share no feature names")
    dropped = sorted({name for names in name_lists
                      for name in names if name not in common})
    if dropped:
        warnings.warn(f"dropping {len(dropped)} unshared features: {dropped}",
                      stacklevel=2)
    out = []
    for matrix, names in zip(matrices, name_lists):
        index = [names.index(name) for name in common]
        out.append(np.ascontiguousarray(matrix[:, index]))
    return out, common


def center(y, mode="per-study", groups=None):
    """Remove column means, either overall or within each group label."""
    y = np.asarray(y, dtype=float)
    if mode == "none":
        return y.copy()
    if mode == "per-study":
        return y - y.mean(axis=0)
    if mode == "per-group-within-study":
        if groups is None:
            raise ConfigError("per-group centering needs group labels")
        groups = np.asarray(groups)
        if groups.shape[0] != y.shape[0]:
            raise InputError("group labels do not match the row count")
        out = y.copy()
        for label in np.unique(groups):
            mask = groups == label
            out[mask] -= out[mask].mean(axis=0)
        return out
    raise ConfigError(f"unknown centering mode {mode!r}")


def write_matrix_csv(path, matrix, header=None):
    """Delimited output with full float precision (exact round trips)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if header is not None:
            writer.writerow(header)
        for row in matrix:
            writer.writerow([f"{v:.17g}" for v in row])
    return Path(path)


# ---------------------------------------------------------------------------
# draw persistence
# ---------------------------------------------------------------------------


def _record_floats(dims):
    return dims.n_params + 2 * dims.d * dims.q + 1 + 2


def save_draws(path, output, n_s=None):
    """Flat little-endian binary of all stored draws plus a JSON sidecar.

    Each record is the packed parameter vector, the shrinkage state and the
    stored log-posterior and log-likelihood, so a reader can verify the
    values without rerunning the chain.
    """
    path = Path(path)
    dims = output.dims
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", FORMAT_VERSION))
        handle.write(struct.pack("<IIII", dims.d, dims.q, dims.n_studies,
                                 output.n_draws))
        handle.write(struct.pack(f"<{dims.n_studies}I", *dims.q_s))
        handle.write(struct.pack("<d", output.beta))
        for params, dl, lp, ll in zip(output.draws, output.dl_draws,
                                      output.log_posterior, output.loglik):
            record = np.concatenate([
                params.pack(), dl.psi.ravel(), dl.phi.ravel(),
                [dl.tau, lp, ll]])
            handle.write(record.astype("<f8").tobytes())
    sidecar = {
        "format_version": FORMAT_VERSION,
        "dims": {"d": dims.d, "q": dims.q, "q_s": list(dims.q_s)},
        "n_draws": output.n_draws,
        "record_floats": _record_floats(dims),
        "beta": output.beta,
        "dl_concentration": output.dl_draws[0].a if output.dl_draws else None,
        "elapsed_seconds": output.elapsed_seconds,
        "accepted": [int(v) for v in output.accepted],
        "step_sizes": [float(v) for v in output.step_sizes],
        "n_steps": [int(v) for v in output.n_steps],
        "n_s": None if n_s is None else [int(v) for v in n_s],
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as handle:
        json.dump(sidecar, handle, sort_keys=True, indent=1)
    return path


def load_draws(path):
    """Read a persisted chain back; returns (McmcOutput, sidecar dict)."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise InputError(f"missing sidecar index {sidecar_path}")
    with open(sidecar_path) as handle:
        sidecar = json.load(handle)
    with open(path, "rb") as handle:
        if handle.read(len(MAGIC)) != MAGIC:
            raise InputError(f"{path}: not a draws file (bad magic)")
        version, = struct.unpack("<I", handle.read(4))
        if version != FORMAT_VERSION:
            raise InputError(f"{path}: unsupported format version {version}")
        d, q, n_studies, n_draws = struct.unpack("<IIII", handle.read(16))
        q_s = struct.unpack(f"<{n_studies}I", handle.read(4 * n_studies))
        beta, = struct.unpack("<d", handle.read(8))
        dims = ModelDims(d, q, q_s)
        count = _record_floats(dims)
        a = sidecar.get("dl_concentration") or 0.5
        draws, dl_draws, log_posts, logliks = [], [], [], []
        for index in range(n_draws):
            raw = handle.read(8 * count)
            if len(raw) != 8 * count:
                raise InputError(f"{path}: truncated at draw {index}")
            record = np.frombuffer(raw, dtype="<f8")
            params = ParamSet.unpack(record[:dims.n_params], dims)
            at = dims.n_params
            psi = record[at:at + d * q].reshape(d, q).copy()
            at += d * q
            phi = record[at:at + d * q].reshape(d, q).copy()
            at += d * q
            dl_draws.append(DLState(psi, phi, float(record[at]), a))
            log_posts.append(float(record[at + 1]))
            logliks.append(float(record[at + 2]))
            draws.append(params)
        if handle.read(1):
            raise InputError(f"{path}: trailing bytes after {n_draws} draws")
    output = McmcOutput(
        draws, dl_draws, np.array(log_posts), np.array(logliks),
        np.array(sidecar.get("accepted", []), dtype=bool),
        np.array(sidecar.get("step_sizes", []), dtype=float),
        np.array(sidecar.get("n_steps", []), dtype=np.int64),
        float(sidecar.get("elapsed_seconds", 0.0)), beta, dims)
    return output, sidecar


# ---------------------------------------------------------------------------
# manifests and locks
# ---------------------------------------------------------------------------


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, config, seed, timings=None, inputs=(), outputs=()):
    """Record everything needed to reproduce and verify the run."""
    import matplotlib
    import scipy

    from . import __version__

    manifest = {
        "config": config,
        "seed": seed,
        "versions": {
            "package": __version__,
            "python": ".".join(map(str, os.sys.version_info[:3])),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "timings": timings or {},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=1)
    return path


@contextmanager
def output_lock(out_dir):
    """One writer per output directory; a leftover lock means another run
    is active (or died) there."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"{out_dir} is locked by another run; use a distinct output "
            f"directory or remove {lock_path} if that run is dead") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        try:
            os.remove(lock_path)
        except FileNotFoundError:
            pass
