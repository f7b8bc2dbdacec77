"""Deterministic artifact writers shared by the pipeline stages."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

# Fixed member timestamp keeps archives byte-identical across runs.
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ArtifactError(RuntimeError):
    """An artifact is missing, malformed, or from a newer schema."""


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays (plus a JSON ``__meta__`` member) as an uncompressed npz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    meta.setdefault("schema_version", SCHEMA_VERSION)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())
        blob = json.dumps(meta, sort_keys=True, indent=1).encode()
        zf.writestr(zipfile.ZipInfo("__meta__.json", date_time=_EPOCH), blob)


def load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("__meta__.json"))
        check_version(meta, path)
        for name in zf.namelist():
            if name.endswith(".npy"):
                with zf.open(name) as fh:
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return arrays, meta


def check_version(meta: dict, path) -> None:
    version = meta.get("schema_version")
    if version is None:
        raise ArtifactError(f"{path}: no schema_version field")
    if version > SCHEMA_VERSION:
        raise ArtifactError(
            f"{path}: schema_version {version} is newer than supported ({SCHEMA_VERSION})"
        )


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    obj = json.loads(path.read_text())
    check_version(obj, path)
    return obj
