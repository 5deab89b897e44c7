"""Binary tensor/matrix files and factor-set directories.

CT3 files hold one tensor: an ASCII header ``CT3 <I> <J> <K>\\n`` followed by
``I*J*K`` little-endian float64 values, first index fastest. CM2 files hold
one matrix: ``CM2 <rows> <cols>\\n`` followed by column-major little-endian
float64 values.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from .model import PartitionedFactors

_LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """Raised for malformed or truncated CT3/CM2 files."""


def _read_header(raw, magic, ndim, path):
    nl = raw.find(b"\n")
    if nl < 0 or nl > 256:
        raise FormatError(f"{path}: missing {magic} header")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != ndim + 1 or parts[0] != magic:
        raise FormatError(f"{path}: bad header {raw[:nl]!r}")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimension in header") from exc
    if any(d < 0 for d in dims):
        raise FormatError(f"{path}: negative dimension in header")
    body = raw[nl + 1:]
    count = int(np.prod(dims))
    if len(body) != count * 8:
        raise FormatError(f"{path}: expected {count * 8} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype=_LE_F64).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values")
    return dims, values


def write_ct3(path, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError("CT3 files hold order-3 tensors")
    header = f"CT3 {X.shape[0]} {X.shape[1]} {X.shape[2]}\n".encode("ascii")
    Path(path).write_bytes(header + X.astype(_LE_F64).tobytes(order="F"))


def read_ct3(path):
    dims, values = _read_header(Path(path).read_bytes(), "CT3", 3, path)
    if min(dims) < 1:
        raise FormatError(f"{path}: tensor dimensions must be positive")
    return values.reshape(dims, order="F")


def write_cm2(path, M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("CM2 files hold matrices")
    header = f"CM2 {M.shape[0]} {M.shape[1]}\n".encode("ascii")
    Path(path).write_bytes(header + M.astype(_LE_F64).tobytes(order="F"))


def read_cm2(path):
    dims, values = _read_header(Path(path).read_bytes(), "CM2", 2, path)
    return values.reshape(dims, order="F")


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _factor_files(K):
    names = [("S_shared", None), ("V_shared", None)]
    for k in range(K):
        names += [("S_distinct", k), ("V_distinct", k), ("T_shared", k), ("T_distinct", k)]
    return names


def _fname(name, k):
    return f"{name}.cm2" if k is None else f"{name}_{k}.cm2"


def save_factors(directory, theta, **meta):
    """Write ``theta`` as CM2 files plus ``manifest.json`` into ``directory``.

    Extra keyword arguments (lambda, seed, cost, ...) are stored in the
    manifest verbatim.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, k in _factor_files(theta.K):
        F = getattr(theta, name) if k is None else getattr(theta, name)[k]
        fn = _fname(name, k)
        write_cm2(directory / fn, F)
        files[fn] = sha256_file(directory / fn)
    S, V, T = theta.dims
    manifest = {
        "K": theta.K,
        "dims": {"S": S, "V": V, "T": T},
        "ranks": theta.ranks.to_dict(),
        "files": files,
    }
    manifest.update(meta)
    dump_json(directory / "manifest.json", manifest)
    return manifest


def load_factors(directory):
    """Inverse of :func:`save_factors`; returns ``(theta, manifest)``.

    Raises :class:`FormatError` when a file's checksum differs from the one
    recorded in the manifest.
    """
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    K = int(manifest["K"])
    for fn, digest in manifest.get("files", {}).items():
        if sha256_file(directory / fn) != digest:
            raise FormatError(f"{directory / fn}: checksum mismatch")
    blocks = {"S_distinct": [], "V_distinct": [], "T_shared": [], "T_distinct": []}
    single = {}
    for name, k in _factor_files(K):
        M = read_cm2(directory / _fname(name, k))
        if k is None:
            single[name] = M
        else:
            blocks[name].append(M)
    theta = PartitionedFactors(single["S_shared"], single["V_shared"], **blocks)
    return theta.validate(), manifest
