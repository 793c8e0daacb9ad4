"""Deterministic zip-of-npy archives used for caches and checkpoints.

The archive is a plain zip file with one ``<name>.npy`` member per named
array (standard NPY format: row-major, dtype in the header) plus an
optional ``meta.json`` member. Member order and timestamps are fixed so
that identical content produces byte-identical files.
"""
import io
import json
import zipfile

import numpy as np

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)
META_MEMBER = "meta.json"


def save_archive(path, arrays: dict, meta: dict | None = None) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        if meta is not None:
            info = zipfile.ZipInfo(META_MEMBER, date_time=_FIXED_DATE)
            zf.writestr(info, json.dumps(meta, sort_keys=True).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), version=(1, 0))
            info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE)
            zf.writestr(info, buf.getvalue())


def load_archive(path) -> tuple[dict, dict | None]:
    arrays: dict = {}
    meta = None
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            data = zf.read(name)
            if name == META_MEMBER:
                meta = json.loads(data.decode("utf-8"))
            elif name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(data))
    return arrays, meta
