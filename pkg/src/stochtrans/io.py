"""File formats: binary field snapshots, trajectory stores, CSV/JSON reports, SVG charts."""

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .fields import SpectralField, wavenumbers

MAGIC = b"STLF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# field snapshots
# ---------------------------------------------------------------------------


def field_to_bytes(field_):
    """Header ``STLF, version, d, M`` (little-endian u32) then complex64 coefficients."""
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, field_.dim, field_.resolution)
    return head + np.ascontiguousarray(field_.coeffs, dtype="<c8").tobytes(order="C")


def field_from_bytes(data):
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, d, M = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    n = M**d
    body = np.frombuffer(data, dtype="<c8", offset=_HEADER.size)
    if body.size != n:
        raise FormatError(f"expected {n} coefficients, found {body.size}")
    return SpectralField(body.astype(np.complex128).reshape((M,) * d))


def write_field(path, field_):
    Path(path).write_bytes(field_to_bytes(field_))


def read_field(path):
    return field_from_bytes(Path(path).read_bytes())


def field_to_json(field_, tol=0.0):
    """Debug dump: every mode with ``|coeff| > tol`` as ``{"k", "re", "im"}``."""
    k = wavenumbers(field_.dim, field_.resolution)
    c = field_.coeffs
    modes = []
    for idx in zip(*np.nonzero(np.abs(c) > tol)):
        modes.append({"k": [int(k[(a,) + idx]) for a in range(field_.dim)],
                      "re": float(c[idx].real), "im": float(c[idx].imag)})
    return {"dim": field_.dim, "M": field_.resolution, "modes": modes}


def field_from_json(data):
    d, M = int(data["dim"]), int(data["M"])
    c = np.zeros((M,) * d, dtype=np.complex128)
    for m in data["modes"]:
        c[tuple(np.mod(m["k"], M))] = m["re"] + 1j * m["im"]
    return SpectralField(c)


# ---------------------------------------------------------------------------
# hashing and JSON helpers
# ---------------------------------------------------------------------------


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def content_hash(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_hash(path):
    return content_hash(Path(path).read_bytes())


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


# ---------------------------------------------------------------------------
# trajectory store
# ---------------------------------------------------------------------------


def save_trajectory(directory, trajectory, spec=None):
    """Write ``config.json``, ``manifest.json`` and ``fields/snap_#####.stlf``."""
    out = Path(directory)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", trajectory.config.to_json())
    files = []
    for i, f in enumerate(trajectory.fields):
        name = f"fields/snap_{i:05d}.stlf"
        write_field(out / name, f)
        files.append({"path": name, "sha256": file_hash(out / name)})
    manifest = dict(trajectory.manifest)
    manifest["times"] = list(trajectory.times)
    manifest["files"] = files
    if spec is not None:
        manifest["spec_hash"] = content_hash(canonical_json(spec.to_json()))
    write_json(out / "manifest.json", manifest)
    return out


def load_trajectory(directory):
    """Return ``(config_dict, manifest, [(time, SpectralField)])``."""
    d = Path(directory)
    config = json.loads((d / "config.json").read_text())
    manifest = json.loads((d / "manifest.json").read_text())
    snaps = [(t, read_field(d / f["path"])) for t, f in zip(manifest["times"], manifest["files"])]
    return config, manifest, snaps


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Plain CSV with a header row; floats written with full ``repr`` precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_cloud_csv(path, clouds):
    """``clouds`` is a sequence of ``(step, positions (P, d))``."""
    clouds = list(clouds)
    dim = np.asarray(clouds[0][1]).shape[1]
    header = ["step", "particle_id"] + [f"x{i + 1}" for i in range(dim)]
    rows = ([step, i] + list(map(float, p)) for step, pos in clouds for i, p in enumerate(np.asarray(pos)))
    write_csv(path, header, rows)


def write_plot_data(path, x, y, yerr=None):
    yerr = np.zeros(len(x)) if yerr is None else yerr
    write_csv(path, ["x", "y", "yerr"], zip(map(float, x), map(float, y), map(float, yerr)))


# ---------------------------------------------------------------------------
# SVG charts
# ---------------------------------------------------------------------------


def svg_line_chart(series, title="", xlabel="x", ylabel="y", log_x=False, log_y=False, width=480, height=320):
    """Static SVG with one polyline (and error bars) per ``(label, x, y, yerr)``."""
    pad = 50
    tx = np.log10 if log_x else (lambda v: np.asarray(v, dtype=float))
    ty = np.log10 if log_y else (lambda v: np.asarray(v, dtype=float))
    xs, ys = [], []
    for _, x, y, e in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        e = np.zeros_like(y) if e is None else np.asarray(e, float)
        xs.append(tx(x))
        lo = np.where(y - e > 0, y - e, y) if log_y else y - e
        ys.extend([ty(lo), ty(y + e)])
    x0, x1 = float(np.min(np.concatenate(xs))), float(np.max(np.concatenate(xs)))
    y0, y1 = float(np.min(np.concatenate(ys))), float(np.max(np.concatenate(ys)))
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">{xlabel}{" (log10)" if log_x else ""}</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" transform="rotate(-90 14 {height / 2})">'
        f'{ylabel}{" (log10)" if log_y else ""}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" text-anchor="middle">{x1:.3g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{y1:.3g}</text>',
    ]
    for i, (label, x, y, e) in enumerate(series):
        col = colors[i % len(colors)]
        X, Y = tx(np.asarray(x, float)), ty(np.asarray(y, float))
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(X, Y))
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        if e is not None:
            for a, yy, ee in zip(X, np.asarray(y, float), np.asarray(e, float)):
                lo = yy - ee if (not log_y or yy - ee > 0) else yy
                parts.append(f'<line x1="{px(a):.1f}" y1="{py(ty(lo)):.1f}" x2="{px(a):.1f}" '
                             f'y2="{py(ty(yy + ee)):.1f}" stroke="{col}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (i + 1)}" text-anchor="end" fill="{col}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
