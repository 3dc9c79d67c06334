"""MAT1 matrix files and model bundle directories.

A MAT1 file is the 4-byte magic ``MAT1``, the row and column counts as
little-endian uint32, then ``rows * cols`` little-endian binary64 values in
row-major order.

A model bundle is a directory holding ``manifest`` (``key=value`` lines),
``w_ubm.mat`` (d x k), ``t_block_<c>.mat`` (d x s) and
``sigma_block_<c>.mat`` (d x d) for ``c = 0 .. k-1``. A bundle written by
UBM training alone has only the manifest and ``w_ubm.mat``.
"""

from __future__ import annotations

import os
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np

from .tvm import CovarianceBlocks, TotalVariabilityModel

MAGIC = b"MAT1"
HEADER = struct.Struct("<4sII")
FORMAT_VERSION = 1
_U32_MAX = 2**32 - 1


class FormatError(ValueError):
    """Malformed MAT1 file or model bundle."""


def matrix_to_bytes(matrix):
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {M.ndim}-D")
    rows, cols = M.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        raise ValueError("dimension overflow")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite values")
    return HEADER.pack(MAGIC, rows, cols) + M.astype("<f8", copy=False).tobytes(order="C")


def matrix_from_bytes(buf, name="<bytes>"):
    if len(buf) < HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    expected = HEADER.size + 8 * rows * cols
    if len(buf) < expected:
        raise FormatError(f"{name}: truncated payload ({len(buf)} of {expected} bytes)")
    if len(buf) > expected:
        raise FormatError(f"{name}: {len(buf) - expected} trailing bytes")
    M = np.frombuffer(buf, dtype="<f8", offset=HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(M)):
        raise FormatError(f"{name}: non-finite value in payload")
    return M.astype(np.float64)


def _atomic_write_bytes(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path, matrix):
    _atomic_write_bytes(path, matrix_to_bytes(matrix))


def read_matrix(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    return matrix_from_bytes(buf, str(path))


def write_ascii(path, features):
    """One frame per line: the ``(k, t)`` matrix transposed, space-separated."""
    lines = [" ".join(repr(float(x)) for x in frame) for frame in np.asarray(features).T]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


# -- bundles ---------------------------------------------------------------

def format_manifest(fields):
    return "".join(f"{key}={value}\n" for key, value in fields.items())


def parse_manifest(text, name="manifest"):
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{name}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def read_manifest(bundle):
    path = Path(bundle) / "manifest"
    if not path.is_file():
        raise FormatError(f"missing file {path}")
    fields = parse_manifest(path.read_text(encoding="utf-8"), str(path))
    version = fields.get("format_version")
    if version != str(FORMAT_VERSION):
        raise FormatError(f"{path}: unsupported format_version {version!r}")
    return fields


def _int_field(fields, key, where):
    try:
        return int(fields[key])
    except KeyError:
        raise FormatError(f"{where}: manifest lacks {key!r}") from None
    except ValueError:
        raise FormatError(f"{where}: manifest field {key!r} is not an integer") from None


def _write_bundle_dir(bundle, files, fields):
    """Write all files into a sibling temp directory, then move it in place."""
    bundle = Path(bundle)
    parent = bundle.parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=parent, prefix=f".{bundle.name}."))
    try:
        for name, matrix in files.items():
            (tmp / name).write_bytes(matrix_to_bytes(matrix))
        (tmp / "manifest").write_text(format_manifest(fields), encoding="utf-8")
        if bundle.exists():
            shutil.rmtree(bundle)
        os.replace(tmp, bundle)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _base_fields(d, k, extra):
    fields = {"format_version": FORMAT_VERSION, "d": d, "k": k}
    fields.update(extra or {})
    fields.setdefault("created_by", "tvnmf")
    return fields


def save_ubm(bundle, W, extra=None):
    """Write a partial bundle holding only the UBM dictionary."""
    W = np.asarray(W, dtype=np.float64)
    d, k = W.shape
    _write_bundle_dir(bundle, {"w_ubm.mat": W}, _base_fields(d, k, extra))


def load_ubm(bundle):
    """Return ``(W, manifest_fields)`` from a partial or complete bundle."""
    fields = read_manifest(bundle)
    d = _int_field(fields, "d", bundle)
    k = _int_field(fields, "k", bundle)
    W = _read_member(bundle, "w_ubm.mat", (d, k))
    if np.any(W <= 0):
        raise FormatError(f"{bundle}: UBM dictionary has non-positive entries")
    return W, fields


def _read_member(bundle, name, shape):
    path = Path(bundle) / name
    if not path.is_file():
        raise FormatError(f"missing file {path}")
    M = read_matrix(path)
    if M.shape != shape:
        raise FormatError(f"{path}: dimension mismatch, shape {M.shape} != manifest {shape}")
    return M


def save_model(bundle, model: TotalVariabilityModel, extra=None):
    d, k, s = model.dims
    files = {"w_ubm.mat": model.w_ubm}
    for c in range(k):
        files[f"t_block_{c}.mat"] = model.T[c]
        files[f"sigma_block_{c}.mat"] = model.sigma.blocks[c]
    fields = {**model.meta, **(extra or {})}
    fields = _base_fields(d, k, fields)
    fields["s"] = s
    # keep the fixed keys first for readability
    order = ["format_version", "d", "k", "s", "lambda", "epsilon", "created_by"]
    fields = {**{key: fields[key] for key in order if key in fields}, **fields}
    _write_bundle_dir(bundle, files, fields)


def load_model(bundle):
    """Load a complete bundle; raises :class:`FormatError` on any inconsistency."""
    fields = read_manifest(bundle)
    d = _int_field(fields, "d", bundle)
    k = _int_field(fields, "k", bundle)
    s = _int_field(fields, "s", bundle)
    n_t = len(list(Path(bundle).glob("t_block_*.mat")))
    if n_t != k:
        raise FormatError(f"{bundle}: dimension mismatch, {n_t} T blocks for k={k}")
    W = _read_member(bundle, "w_ubm.mat", (d, k))
    T = np.empty((k, d, s))
    sigma = np.empty((k, d, d))
    for c in range(k):
        T[c] = _read_member(bundle, f"t_block_{c}.mat", (d, s))
        sigma[c] = _read_member(bundle, f"sigma_block_{c}.mat", (d, d))
    meta = {key: value for key, value in fields.items()
            if key not in ("format_version", "d", "k", "s")}
    try:
        return TotalVariabilityModel(W, T, CovarianceBlocks(sigma, 0.0), meta)
    except ValueError as exc:
        raise FormatError(f"{bundle}: {exc}") from exc
