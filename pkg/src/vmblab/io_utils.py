"""Binary snapshot and operator-cache files, CSV/JSON report writers.

Snapshot layout: magic "NSFM1", format version u16 LE, field count u16 LE,
then per field: name length u16 LE + UTF-8 name, rank u16 LE, dims u32 LE
each, payload float64 LE row-major. Complex arrays are stored as a trailing
axis of length 2 (re, im) and rebuilt on read.

Operator cache layout: magic "VMBQ1", u32 LE triple (D, n_b, quad_order),
float64 LE payload row-major.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

SNAP_MAGIC = b"NSFM1"
SNAP_VERSION = 1
QCACHE_MAGIC = b"VMBQ1"


def _atomic_write(path, data_writer):
    """Write via a temp file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            data_writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_snapshot(fields, path):
    """Write named arrays; ``fields`` is a dict name -> ndarray."""

    def writer(f):
        f.write(SNAP_MAGIC)
        f.write(struct.pack("<H", SNAP_VERSION))
        f.write(struct.pack("<H", len(fields)))
        for name, arr in fields.items():
            arr = np.asarray(arr)
            if np.iscomplexobj(arr):
                arr = np.stack([arr.real, arr.imag], axis=-1)
                name = name + "~c"
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<H", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())

    _atomic_write(path, writer)


def read_snapshot(path):
    """Inverse of write_snapshot; bit-exact for float64 payloads."""
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != SNAP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != SNAP_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<H", f.read(2))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<H", f.read(2))
            dims = struct.unpack("<" + "I" * rank, f.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            payload = f.read(8 * n)
            if len(payload) != 8 * n:
                raise FormatError(f"{path}: truncated payload for {name}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
            if name.endswith("~c"):
                out[name[:-2]] = arr[..., 0] + 1j * arr[..., 1]
            else:
                out[name] = arr
        return out


def write_operator_cache(path, array, D, n_b, quad_order):
    arr = np.ascontiguousarray(array, dtype="<f8")

    def writer(f):
        f.write(QCACHE_MAGIC)
        f.write(struct.pack("<III", D, n_b, quad_order))
        f.write(struct.pack("<H", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(arr.tobytes())

    _atomic_write(path, writer)


def read_operator_cache(path, D, n_b, quad_order):
    """Return the cached array, or None if the key does not match."""
    if not os.path.exists(path):
        return None
    with open(path, "rb") as f:
        if f.read(5) != QCACHE_MAGIC:
            raise FormatError(f"{path}: bad operator-cache magic")
        key = struct.unpack("<III", f.read(12))
        if key != (D, n_b, quad_order):
            return None
        (rank,) = struct.unpack("<H", f.read(2))
        dims = struct.unpack("<" + "I" * rank, f.read(4 * rank))
        n = int(np.prod(dims))
        payload = f.read(8 * n)
        if len(payload) != 8 * n:
            raise FormatError(f"{path}: truncated operator cache")
        return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def default_cache_dir():
    env = os.environ.get("VMBLAB_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "vmblab")


def fmt_float(x):
    """17 significant digits so regression diffs are meaningful."""
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    def writer(f):
        f.write((",".join(header) + "\n").encode())
        for row in rows:
            f.write((",".join(fmt_float(x) for x in row) + "\n").encode())

    _atomic_write(path, writer)


def write_json_report(path, payload):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))

    def writer(f):
        f.write(json.dumps(payload, indent=2, sort_keys=True,
                           default=default).encode())
        f.write(b"\n")

    _atomic_write(path, writer)
