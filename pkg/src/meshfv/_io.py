"""Small file helpers shared by the serializers: atomic writes, hashing,
provenance headers and JSON + npz model pairs."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .errors import ArtifactError

FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dump_json(obj))


def read_json(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ArtifactError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"cannot parse JSON in {path}: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def format_float(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def matrix_to_csv(matrix: np.ndarray, header: str | None = None) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = []
    if header is not None:
        lines.append(header)
    for row in matrix:
        lines.append(",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv_matrix(path, comments: str = "#") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing matrix file: {path}")
    try:
        data = np.loadtxt(path, delimiter=",", comments=comments, ndmin=2)
    except ValueError as exc:
        raise ArtifactError(f"cannot parse CSV matrix {path}: {exc}") from exc
    return data


def csv_json_header(meta: dict) -> str:
    return "# " + json.dumps(meta, sort_keys=True)


def read_csv_json_header(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("# "):
        raise ArtifactError(f"{path} has no JSON header line")
    return json.loads(first[2:])


def npz_bytes(arrays: dict) -> bytes:
    """An ``np.load``-compatible archive with fixed entry timestamps.

    ``np.savez`` stamps entries with the wall clock, which breaks
    byte-for-byte reproducibility.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    return buf.getvalue()


def save_model(path, kind: str, arrays: dict, meta: dict) -> Path:
    """Write ``<path>.json`` (metadata) and ``<path>.npz`` (arrays).

    The JSON records the sha256 of the npz so a stale pair is detected on load.
    """
    path = Path(path)
    json_path = path.with_suffix(".json")
    npz_path = path.with_suffix(".npz")
    atomic_write_bytes(npz_path, npz_bytes(arrays))
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arrays": npz_path.name,
        "arrays_sha256": sha256_file(npz_path),
        "meta": meta,
    }
    write_json(json_path, doc)
    return json_path


def load_model(path, kind: str):
    path = Path(path)
    json_path = path.with_suffix(".json")
    doc = read_json(json_path)
    if doc.get("kind") != kind:
        raise ArtifactError(f"{json_path}: expected a {kind} model, found {doc.get('kind')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"{json_path}: unsupported format version {doc.get('format_version')}")
    npz_path = json_path.parent / doc["arrays"]
    if not npz_path.exists():
        raise ArtifactError(f"missing model arrays: {npz_path}")
    if sha256_file(npz_path) != doc["arrays_sha256"]:
        raise ArtifactError(f"{npz_path} does not match the hash recorded in {json_path}")
    with np.load(npz_path) as data:
        arrays = {k: data[k] for k in data.files}
    return arrays, doc["meta"]
