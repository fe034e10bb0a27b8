"""Dataset, embedding and plot-data file formats."""
import csv
import gzip
import io
import struct
from pathlib import Path

import numpy as np

from .exceptions import CapabilityError, DataError
from .fuzzy import KernelParams

DATA_MAGIC = b"PUDAT1"
EMB_MAGIC = b"PUEMB1"
_DATA_HEADER = struct.Struct("<6sQQB")
_EMB_HEADER = struct.Struct("<6sQQddd")


def _open_text(path, mode="rt"):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, newline="")
    return open(path, mode.replace("t", ""), newline="")


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _format_float(x):
    return repr(float(x))


def read_csv_matrix(path):
    """Parse a numeric CSV with an optional header; returns ``(header, array)``."""
    header, rows, width = None, [], None
    with _open_text(path) as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if header is None and not rows and not all(_is_number(c) for c in rec):
                header = [c.strip() for c in rec]
                width = len(header)
                continue
            if width is None:
                width = len(rec)
            if len(rec) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, found {len(rec)}")
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                bad = next(c for c in rec if not _is_number(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def load_dataset(path, format=None):
    """Read a data matrix and optional integer labels.

    ``format`` is ``"csv"`` (a header column named ``label`` is split off) or
    ``"f64le-binary"``; by default it is inferred from the file suffix.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    format = format or ("f64le-binary" if path.suffix in (".bin", ".f64") else "csv")
    if format == "f64le-binary":
        return _load_binary(path)
    if format != "csv":
        raise DataError(f"unknown dataset format {format!r}")
    header, arr = read_csv_matrix(path)
    labels = None
    if header is not None and "label" in header:
        col = header.index("label")
        labels = arr[:, col]
        if not np.all(labels == np.round(labels)):
            raise DataError(f"{path}: label column holds non-integers")
        labels = labels.astype(np.int64)
        arr = np.delete(arr, col, axis=1)
    return arr, labels


def save_dataset(path, data, labels=None, format=None):
    path = Path(path)
    data = np.asarray(data, dtype=np.float64)
    format = format or ("f64le-binary" if path.suffix in (".bin", ".f64") else "csv")
    if format == "f64le-binary":
        with open(path, "wb") as fh:
            fh.write(_DATA_HEADER.pack(DATA_MAGIC, data.shape[0], data.shape[1], labels is not None))
            fh.write(data.astype("<f8").tobytes(order="C"))
            if labels is not None:
                fh.write(np.asarray(labels, dtype="<i8").tobytes())
        return
    header = [f"x{i}" for i in range(data.shape[1])]
    with _open_text(path, "wt") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header + (["label"] if labels is not None else []))
        for i, row in enumerate(data):
            rec = [_format_float(v) for v in row]
            if labels is not None:
                rec.append(int(labels[i]))
            writer.writerow(rec)


def _load_binary(path):
    blob = path.read_bytes()
    try:
        magic, n, d, has_labels = _DATA_HEADER.unpack_from(blob, 0)
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if magic != DATA_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    off = _DATA_HEADER.size
    expected = off + 8 * n * d + (8 * n if has_labels else 0)
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i8", count=n, offset=off + 8 * n * d).astype(np.int64)
    return data, labels


def write_embedding_csv(path, coords):
    coords = np.asarray(coords, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"z{i}" for i in range(coords.shape[1])])
        for row in coords:
            writer.writerow([_format_float(v) for v in row])


def read_embedding_csv(path):
    return read_csv_matrix(path)[1]


def write_embedding_binary(path, coords, kernel):
    """PUEMB1 blob: magic, n, d, kernel (a, b, min_dist), then little-endian f64 coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(
            _EMB_HEADER.pack(EMB_MAGIC, coords.shape[0], coords.shape[1], kernel.a, kernel.b, kernel.min_dist)
        )
        fh.write(coords.astype("<f8").tobytes(order="C"))


def read_embedding_binary(path):
    blob = Path(path).read_bytes()
    try:
        magic, n, d, a, b, min_dist = _EMB_HEADER.unpack_from(blob, 0)
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if magic != EMB_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if len(blob) != _EMB_HEADER.size + 8 * n * d:
        raise DataError(f"{path}: size does not match header")
    coords = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_EMB_HEADER.size).reshape(n, d)
    return coords.copy(), KernelParams(a, b, min_dist)


def write_loss_history(path, history):
    """``history`` maps column name to a per-epoch sequence."""
    names = list(history)
    n = max((len(v) for v in history.values()), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch"] + names)
        for e in range(n):
            writer.writerow([e] + [_format_float(history[k][e]) for k in names])


def emit_plot_data(embedding, labels, path, loss_history=None):
    """Write ``<path>`` scatter data (x, y, label) and ``<stem>.loss.csv``.

    The loss history is written even when the embedding is not 2-D, in which
    case a :class:`CapabilityError` follows.
    """
    path = Path(path)
    coords = np.asarray(embedding, dtype=np.float64)
    if loss_history is not None:
        write_loss_history(path.with_suffix(".loss.csv"), loss_history)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise CapabilityError(f"scatter data needs a 2-D embedding, got shape {coords.shape}")
    labels = np.full(coords.shape[0], -1) if labels is None else np.asarray(labels)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "label"])
    for (x, y), lab in zip(coords, labels):
        writer.writerow([_format_float(x), _format_float(y), int(lab)])
    path.write_text(buf.getvalue())
