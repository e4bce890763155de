"""Small shared helpers: worker counts and content hashing."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

THREADS_ENV = "CVDMH_THREADS"


def worker_count() -> int:
    """Number of workers for data-parallel stages, capped by CVDMH_THREADS."""
    cap = os.environ.get(THREADS_ENV)
    available = os.cpu_count() or 1
    if cap is None:
        return available
    try:
        n = int(cap)
    except ValueError:
        return available
    return max(1, min(n, available))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_obj(obj) -> str:
    """Hash a JSON-serialisable object with stable key order."""
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()
