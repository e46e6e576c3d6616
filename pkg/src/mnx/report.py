"""Deterministic, atomic output writers (CSV, JSON, SVG)."""

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from . import __version__

__all__ = ["config_hash", "atomic_write", "write_csv", "write_json", "write_svg", "format_value"]


def config_hash(config_dict):
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` through a temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _header_lines(meta):
    lines = ["# mnx %s" % __version__]
    for key in sorted(meta):
        lines.append("# %s: %s" % (key, meta[key]))
    return lines


def write_csv(path, rows, columns, meta):
    """CSV with a ``#`` comment header, then a column header and one line per row."""
    buf = io.StringIO()
    for line in _header_lines(meta):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in columns])
    atomic_write(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload, meta):
    doc = {"_meta": dict(meta, version=__version__)}
    doc.update(_jsonable(payload))
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_svg(path, fig):
    """Save a matplotlib figure as SVG with fixed ids and no timestamp."""
    import matplotlib

    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "mnx", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "mnx"})
    atomic_write(path, buf.getvalue())
