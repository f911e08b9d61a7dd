"""Text and binary artifacts: nodal fields, recordings, exports and manifests.

Nodal field file layout (``.field``)::

    # voidfwi-field 1
    # name gamma
    # dimension 2
    # counts 100 50
    # degree 1
    # origin 0 0
    # element_size 0.0005 0.0005
    x,y,gamma
    0,0,1
    ...

One row per node in lexicographic order (x fastest). Every float is written
with 17 significant digits, so reading a file back is lossless.

VTK export writes the legacy ASCII structured-points format::

    # vtk DataFile Version 3.0
    <name>
    ASCII
    DATASET STRUCTURED_POINTS
    DIMENSIONS nx ny 1
    ORIGIN x0 y0 0
    SPACING dx dy 1
    POINT_DATA nx*ny
    SCALARS <name> double 1
    LOOKUP_TABLE default
    <one value per line>

Lines end with ``\\n``. Fields of degree above 1 live on Gauss-Lobatto nodes
and are interpolated to an equispaced lattice with the same node counts first.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, build_grid, interpolation_matrix
from .propagate import WaveRecording

FIELD_MAGIC = "voidfwi-field 1"


class FieldFileError(ValueError):
    pass


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class NodalField:
    grid: Grid
    values: np.ndarray
    name: str = "gamma"


def write_field(path, grid: Grid, values, name: str = "gamma") -> Path:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_nodes,):
        raise FieldFileError(f"expected {grid.n_nodes} values, got {values.shape}")
    if not name.isidentifier():
        raise FieldFileError(f"field name {name!r} must be an identifier")
    path = Path(path)
    axes = "xy"[: grid.dimension]
    buf = _io.StringIO()
    buf.write(f"# {FIELD_MAGIC}\n# name {name}\n# dimension {grid.dimension}\n")
    buf.write("# counts " + " ".join(str(c) for c in grid.counts) + "\n")
    buf.write(f"# degree {grid.degree}\n")
    buf.write("# origin " + " ".join(fmt(o) for o in grid.origin) + "\n")
    buf.write("# element_size " + " ".join(fmt(h) for h in grid.element_size) + "\n")
    buf.write(",".join(list(axes) + [name]) + "\n")
    for xyz, v in zip(grid.coords, values):
        buf.write(",".join([fmt(c) for c in xyz] + [fmt(v)]) + "\n")
    path.write_text(buf.getvalue())
    return path


def read_field(path) -> NodalField:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FieldFileError(f"{path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise FieldFileError(f"{path}: not a text file") from None
    if not lines or lines[0] != f"# {FIELD_MAGIC}":
        raise FieldFileError(f"{path}: missing '{FIELD_MAGIC}' header")
    meta = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("# "):
            body_start = i
            break
        key, _, rest = line[2:].partition(" ")
        meta[key] = rest.split()
    needed = ("name", "dimension", "counts", "degree", "origin", "element_size")
    missing = [k for k in needed if k not in meta]
    if missing or body_start is None:
        raise FieldFileError(f"{path}: incomplete header (missing {', '.join(missing) or 'body'})")
    try:
        dim = int(meta["dimension"][0])
        counts = tuple(int(c) for c in meta["counts"])
        degree = int(meta["degree"][0])
        origin = [float(o) for o in meta["origin"]]
        h = [float(x) for x in meta["element_size"]]
        extents = [c * hh for c, hh in zip(counts, h)]
        grid = build_grid(dim, extents, h, degree, origin)
    except (ValueError, IndexError) as exc:
        raise FieldFileError(f"{path}: bad header: {exc}") from None
    name = meta["name"][0]
    rows = lines[body_start + 1:]
    if len(rows) != grid.n_nodes:
        raise FieldFileError(f"{path}: expected {grid.n_nodes} rows, found {len(rows)}")
    try:
        data = np.array([[float(x) for x in r.split(",")] for r in rows])
    except ValueError as exc:
        raise FieldFileError(f"{path}: bad number: {exc}") from None
    if data.ndim != 2 or data.shape[1] != dim + 1:
        raise FieldFileError(f"{path}: expected {dim + 1} columns")
    if not np.allclose(data[:, :dim], grid.coords, rtol=0.0, atol=1e-9 * max(extents)):
        raise FieldFileError(f"{path}: node coordinates do not match the header")
    return NodalField(grid, data[:, dim], name)


def _lattice(grid: Grid, values):
    """Node values on an equispaced lattice with the grid's node counts."""
    shape = tuple(reversed(grid.nodes_per_axis))  # (ny, nx)
    axes = [np.linspace(o, o + e, n) for o, e, n in zip(grid.origin, grid.extents, grid.nodes_per_axis)]
    if grid.degree == 1:
        return axes, np.asarray(values).reshape(shape)
    mesh = np.meshgrid(*axes, indexing="xy")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    m = interpolation_matrix(grid, pts).tocsr()
    values = np.asarray(values, dtype=float)
    # u = v_a + sum_i N_i (v_i - v_a) with a the heaviest node: constants stay exact
    rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    order = np.lexsort((-m.data, rows))
    anchor = m.indices[order[np.searchsorted(rows[order], np.arange(m.shape[0]))]]
    diff = m.data * (values[m.indices] - values[anchor[rows]])
    out = values[anchor] + np.bincount(rows, diff, minlength=m.shape[0])
    return axes, out.reshape(shape)


def export_csv_grid(field: NodalField, path) -> Path:
    """Header row of x coordinates, leading column of y, one nodal value per cell."""
    axes, vals = _lattice(field.grid, field.values)
    vals = np.atleast_2d(vals)
    ys = axes[1] if field.grid.dimension == 2 else np.zeros(1)
    lines = [",".join(["y\\x"] + [fmt(x) for x in axes[0]])]
    for y, row in zip(ys, vals):
        lines.append(",".join([fmt(y)] + [fmt(v) for v in row]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def export_vtk(field: NodalField, path) -> Path:
    axes, vals = _lattice(field.grid, field.values)
    nx = len(axes[0])
    ny = len(axes[1]) if field.grid.dimension == 2 else 1
    dx = axes[0][1] - axes[0][0]
    dy = axes[1][1] - axes[1][0] if field.grid.dimension == 2 else 1.0
    x0 = field.grid.origin[0]
    y0 = field.grid.origin[1] if field.grid.dimension == 2 else 0.0
    head = [
        "# vtk DataFile Version 3.0", field.name, "ASCII", "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1", f"ORIGIN {fmt(x0)} {fmt(y0)} 0",
        f"SPACING {fmt(dx)} {fmt(dy)} 1", f"POINT_DATA {nx * ny}",
        f"SCALARS {field.name} double 1", "LOOKUP_TABLE default",
    ]
    body = [fmt(v) for v in np.ravel(vals)]
    path = Path(path)
    path.write_text("\n".join(head + body) + "\n")
    return path


EXPORTERS = {"csv_grid": (export_csv_grid, ".csv"), "vtk_legacy_ascii": (export_vtk, ".vtk")}


def export_field(field_path, fmt_name: str, out_path=None) -> Path:
    if fmt_name not in EXPORTERS:
        raise FieldFileError(f"unknown export format {fmt_name!r}; expected one of {sorted(EXPORTERS)}")
    field = read_field(field_path)
    func, ext = EXPORTERS[fmt_name]
    if out_path is None:
        out_path = Path(field_path).with_suffix(ext)
    return func(field, out_path)


def write_recording_csv(path, rec: WaveRecording) -> Path:
    """Columns ``t, r0, r1, ...``; receiver positions in a comment line."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("# receivers " + " ; ".join(" ".join(fmt(c) for c in r) for r in rec.receivers) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"r{i}" for i in range(len(rec.receivers))])
        for t, row in zip(rec.times, rec.samples):
            w.writerow([fmt(t)] + [fmt(v) for v in row])
    return path


def save_recordings(path, recordings, metadata: dict | None = None) -> Path:
    """All recordings of an observation set in one ``.npz`` archive."""
    path = Path(path)
    samples = np.stack([r.samples for r in recordings])
    np.savez(path, samples=samples, receivers=recordings[0].receivers,
             dt=np.array(recordings[0].dt), metadata=np.array(json.dumps(metadata or {}, sort_keys=True)))
    return path


def load_recordings(path):
    with np.load(Path(path)) as data:
        samples, receivers, dt = data["samples"], data["receivers"], float(data["dt"])
        metadata = json.loads(str(data["metadata"]))
    recs = [WaveRecording(receivers, dt, s, i) for i, s in enumerate(samples)]
    return recs, metadata


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, artifacts, extra: dict | None = None) -> Path:
    """``manifest.json`` listing every artifact (relative path, bytes, sha256)."""
    out_dir = Path(out_dir)
    entries = []
    for a in sorted({Path(a).resolve() for a in artifacts}):
        entries.append({"path": str(a.relative_to(out_dir.resolve())), "bytes": a.stat().st_size,
                        "sha256": sha256(a)})
    doc = {"artifacts": entries}
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
