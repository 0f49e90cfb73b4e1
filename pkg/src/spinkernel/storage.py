"""Flat-binary persistence with JSON sidecars and content hashes.

Every array artifact is a little-endian float64 blob ``<name>.bin`` next
to ``<name>.json`` recording shape, dtype, a sha256 of the blob and any
caller metadata.  Writes go to a temporary file in the same directory
followed by an atomic rename, so a crashed sweep cell never corrupts a
completed artifact.
"""

import hashlib
import json
import os
import tempfile

import numpy as np


def content_hash(data):
    """sha256 hex digest of raw bytes or of a JSON-serialisable object."""
    if isinstance(data, bytes):
        return hashlib.sha256(data).hexdigest()
    return hashlib.sha256(
        json.dumps(data, sort_keys=True, default=str).encode()
    ).hexdigest()


def _atomic_write(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_array(base_path, array, meta=None):
    """Persist a float64 array as base_path.bin + base_path.json."""
    array = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    blob = array.tobytes()
    sidecar = {
        "shape": list(array.shape),
        "dtype": "<f8",
        "content_sha256": content_hash(blob),
    }
    if meta:
        sidecar["meta"] = meta
    _atomic_write(base_path + ".bin", blob)
    _atomic_write(
        base_path + ".json", json.dumps(sidecar, indent=2, sort_keys=True).encode()
    )
    return sidecar


def load_array(base_path, verify=True):
    """Load an array written by save_array; returns (array, sidecar)."""
    with open(base_path + ".json", "r") as f:
        sidecar = json.load(f)
    with open(base_path + ".bin", "rb") as f:
        blob = f.read()
    if verify and content_hash(blob) != sidecar["content_sha256"]:
        raise IOError(f"{base_path}.bin does not match its recorded hash")
    array = np.frombuffer(blob, dtype="<f8").reshape(sidecar["shape"]).copy()
    return array, sidecar


def sidecar_meta(base_path):
    """Metadata dict of an artifact, or None if it does not exist."""
    try:
        with open(base_path + ".json", "r") as f:
            return json.load(f).get("meta", {})
    except FileNotFoundError:
        return None


def write_json(path, payload):
    _atomic_write(
        path, json.dumps(payload, indent=2, sort_keys=True, default=str).encode()
    )


def write_text(path, text):
    _atomic_write(path, text.encode())
