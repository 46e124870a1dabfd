"""Readers and writers: TetGen .node/.ele, VTK legacy ASCII, OBJ."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InputError, MeshError
from .mesh import TetMesh

VTK_TETRA = 10


def _data_lines(path):
    """Yield (lineno, tokens) for non-empty, non-comment lines."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read file: {exc.strerror}", path=path) from exc
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _tetgen_paths(path):
    p = Path(path)
    if p.suffix in (".node", ".ele"):
        base = p.with_suffix("")
    else:
        base = p
    return base.with_suffix(".node"), base.with_suffix(".ele")


def _read_node(path):
    lines = list(_data_lines(path))
    if not lines:
        raise MeshError("empty node file", path=path)
    no, head = lines[0]
    try:
        n, dim = int(head[0]), int(head[1])
        n_attr = int(head[2]) if len(head) > 2 else 0
    except (ValueError, IndexError):
        raise MeshError("malformed header", path=path, line=no) from None
    if dim != 3:
        raise MeshError(f"expected 3D points, header says {dim}", path=path, line=no)
    if len(lines) - 1 < n:
        raise MeshError(f"header declares {n} points, found {len(lines) - 1}", path=path)
    ids = np.empty(n, dtype=np.int64)
    pts = np.empty((n, 3))
    for k in range(n):
        no, tok = lines[k + 1]
        try:
            ids[k] = int(tok[0])
            pts[k] = [float(t) for t in tok[1:4]]
        except (ValueError, IndexError):
            raise MeshError("malformed point record", path=path, line=no) from None
    base = int(ids[0]) if n else 0
    if base not in (0, 1):
        raise MeshError(f"first point index must be 0 or 1, got {base}", path=path, line=lines[1][0])
    if not np.array_equal(ids, np.arange(base, base + n)):
        raise MeshError("point indices are not consecutive", path=path)
    del n_attr
    return pts, base


def _read_ele(path, base):
    lines = list(_data_lines(path))
    if not lines:
        raise MeshError("empty ele file", path=path)
    no, head = lines[0]
    try:
        m, per = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise MeshError("malformed header", path=path, line=no) from None
    if per not in (4, 10):
        raise MeshError(f"unsupported nodes per tet: {per}", path=path, line=no)
    if len(lines) - 1 < m:
        raise MeshError(f"header declares {m} tets, found {len(lines) - 1}", path=path)
    tets = np.empty((m, 4), dtype=np.int64)
    srclines = np.empty(m, dtype=np.int64)
    for k in range(m):
        no, tok = lines[k + 1]
        try:
            tets[k] = [int(t) for t in tok[1:5]]
        except (ValueError, IndexError):
            raise MeshError("malformed tet record", path=path, line=no) from None
        srclines[k] = no
    return tets - base, srclines


def read_tetgen(path):
    node, ele = _tetgen_paths(path)
    pts, base = _read_node(node)
    tets, lines = _read_ele(ele, base)
    return TetMesh(pts, tets, source=str(ele), lines=lines)


def write_tetgen(path, mesh):
    """Write ``mesh`` as a zero-based .node/.ele pair."""
    node, ele = _tetgen_paths(path)
    with open(node, "w") as fh:
        fh.write(f"{mesh.n_vertices} 3 0 0\n")
        for k, p in enumerate(mesh.vertices):
            fh.write(f"{k} {_fmt(p)}\n")
    with open(ele, "w") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for k, t in enumerate(mesh.tets):
            fh.write(f"{k} {t[0]} {t[1]} {t[2]} {t[3]}\n")


# ---------------------------------------------------------------------------
# VTK legacy


class _Tokens:
    def __init__(self, path):
        self.path = path
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read file: {exc.strerror}", path=path) from exc
        self.lines = text.splitlines()
        toks = []
        # the first four lines are header, title, encoding, dataset
        for no, raw in enumerate(self.lines[4:], start=5):
            toks.extend((t, no) for t in raw.split())
        self.toks = toks
        self.pos = 0

    def error(self, msg, line=None):
        if line is None and self.pos < len(self.toks):
            line = self.toks[self.pos][1]
        return MeshError(msg, path=self.path, line=line)

    def done(self):
        return self.pos >= len(self.toks)

    def peek(self):
        return self.toks[self.pos][0]

    def next(self):
        if self.done():
            raise self.error("unexpected end of file", line=len(self.lines))
        tok = self.toks[self.pos]
        self.pos += 1
        return tok[0]

    def ints(self, n):
        try:
            vals = np.array([int(self.next()) for _ in range(n)], dtype=np.int64)
        except ValueError:
            raise self.error("expected integer") from None
        return vals

    def floats(self, n):
        try:
            vals = np.array([float(self.next()) for _ in range(n)])
        except ValueError:
            raise self.error("expected number") from None
        return vals


def read_vtk(path):
    """Parse an ASCII legacy unstructured grid.

    Returns
    -------
    points : (n, 3) array
    tets : (m, 4) int array
        Only VTK_TETRA cells are kept.
    point_data : dict
        name -> array of shape (n,), (n, k) or (n, 3, 3).
    tet_lines : (m,) int array
        Source line of each kept cell.
    """
    tk = _Tokens(path)
    lines = tk.lines
    if len(lines) < 4 or not lines[0].lower().startswith("# vtk"):
        raise MeshError("not a VTK legacy file", path=path, line=1)
    if lines[2].strip().upper() != "ASCII":
        raise MeshError("only ASCII VTK files are supported", path=path, line=3)
    if "UNSTRUCTURED_GRID" not in lines[3].upper():
        raise MeshError("expected DATASET UNSTRUCTURED_GRID", path=path, line=4)
    points = None
    cells = []
    cell_lines = []
    types = None
    point_data = {}
    n_points = 0
    section = None
    while not tk.done():
        key = tk.next().upper()
        if key == "POINTS":
            n_points = int(tk.next())
            tk.next()
            points = tk.floats(3 * n_points).reshape(-1, 3)
        elif key == "CELLS":
            m = int(tk.next())
            tk.next()
            for _ in range(m):
                line = tk.toks[tk.pos][1]
                k = int(tk.next())
                cells.append(tk.ints(k))
                cell_lines.append(line)
        elif key == "CELL_TYPES":
            m = int(tk.next())
            types = tk.ints(m)
        elif key == "POINT_DATA":
            tk.next()
            section = "point"
        elif key == "CELL_DATA":
            m = int(tk.next())
            section = "cell"
        elif key in ("SCALARS", "VECTORS", "NORMALS", "TENSORS"):
            name = tk.next()
            tk.next()  # dtype
            n = n_points if section == "point" else len(cells)
            if key == "SCALARS":
                ncomp = 1
                if not tk.done() and tk.peek().isdigit():
                    ncomp = int(tk.next())
                if tk.peek().upper() == "LOOKUP_TABLE":
                    tk.next()
                    tk.next()
                arr = tk.floats(n * ncomp)
                arr = arr if ncomp == 1 else arr.reshape(n, ncomp)
            elif key == "TENSORS":
                arr = tk.floats(9 * n).reshape(n, 3, 3)
            else:
                arr = tk.floats(3 * n).reshape(n, 3)
            if section == "point":
                point_data[name] = arr
        elif key == "FIELD":
            tk.next()
            narr = int(tk.next())
            for _ in range(narr):
                name = tk.next()
                ncomp = int(tk.next())
                ntup = int(tk.next())
                tk.next()
                arr = tk.floats(ncomp * ntup)
                arr = arr if ncomp == 1 else arr.reshape(ntup, ncomp)
                if section == "point":
                    point_data[name] = arr
        elif key == "METADATA":
            # skip until blank-line terminated block ends: consume INFORMATION keys
            while not tk.done() and tk.peek().upper() not in (
                "POINT_DATA", "CELL_DATA", "SCALARS", "VECTORS", "TENSORS", "FIELD",
            ):
                tk.next()
        else:
            raise tk.error(f"unexpected keyword {key!r}", line=tk.toks[tk.pos - 1][1])
    if points is None:
        raise MeshError("missing POINTS section", path=path)
    if types is None:
        types = np.array([VTK_TETRA if len(c) == 4 else -1 for c in cells])
    keep = [i for i, t in enumerate(types) if t == VTK_TETRA]
    tets = np.array([cells[i] for i in keep], dtype=np.int64).reshape(-1, 4)
    tet_lines = np.array([cell_lines[i] for i in keep], dtype=np.int64)
    return points, tets, point_data, tet_lines


def read_vtk_mesh(path):
    points, tets, _, lines = read_vtk(path)
    return TetMesh(points, tets, source=str(path), lines=lines)


def _fmt(a):
    return " ".join(repr(float(v)) for v in np.ravel(a))


def write_vtk(path, mesh, point_data=None, title="odecofield"):
    """Write mesh and per-vertex arrays as an ASCII legacy unstructured grid.

    Arrays of shape (n,) become SCALARS, (n, 3) VECTORS, (n, 3, 3) TENSORS
    and anything else a FIELD entry.  Values use shortest round-trip repr.
    """
    n, m = mesh.n_vertices, mesh.n_tets
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    out.extend(_fmt(p) for p in mesh.vertices)
    out.append(f"CELLS {m} {5 * m}")
    out.extend(f"4 {t[0]} {t[1]} {t[2]} {t[3]}" for t in mesh.tets)
    out.append(f"CELL_TYPES {m}")
    out.extend([str(VTK_TETRA)] * m)
    point_data = point_data or {}
    if point_data:
        out.append(f"POINT_DATA {n}")
        fields = []
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape == (n,):
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in arr)
            elif arr.shape == (n, 3):
                out.append(f"VECTORS {name} double")
                out.extend(_fmt(v) for v in arr)
            elif arr.shape == (n, 3, 3):
                out.append(f"TENSORS {name} double")
                out.extend(_fmt(v) for v in arr)
            else:
                fields.append((name, arr.reshape(n, -1)))
        if fields:
            out.append(f"FIELD FieldData {len(fields)}")
            for name, arr in fields:
                out.append(f"{name} {arr.shape[1]} {n} double")
                out.extend(_fmt(v) for v in arr)
    Path(path).write_text("\n".join(out) + "\n")


def load_tet_mesh(path, format=None):
    """Load a tetrahedral mesh.

    Parameters
    ----------
    path : str or Path
        A ``.vtk`` file, a ``.node``/``.ele`` file, or a TetGen basename.
    format : {'tetgen_node_ele', 'vtk_legacy'}, optional
        Inferred from the extension when omitted.
    """
    p = Path(path)
    if format is None:
        format = "vtk_legacy" if p.suffix.lower() == ".vtk" else "tetgen_node_ele"
    if format == "vtk_legacy":
        if not p.exists():
            raise InputError("file not found", path=path)
        return read_vtk_mesh(p)
    if format == "tetgen_node_ele":
        node, ele = _tetgen_paths(p)
        for f in (node, ele):
            if not f.exists():
                raise InputError("file not found", path=f)
        return read_tetgen(p)
    raise ValueError(f"unknown mesh format {format!r}")


def write_obj(path, vertices, faces=(), lines=()):
    """Write polygons and/or polylines as Wavefront OBJ (1-based)."""
    out = ["# odecofield"]
    out.extend(f"v {_fmt(p)}" for p in np.asarray(vertices, dtype=np.float64).reshape(-1, 3))
    for f in faces:
        out.append("f " + " ".join(str(int(i) + 1) for i in f))
    for poly in lines:
        if len(poly) > 1:
            out.append("l " + " ".join(str(int(i) + 1) for i in poly))
    Path(path).write_text("\n".join(out) + "\n")


def read_obj(path):
    """Minimal OBJ reader returning (vertices, faces, lines)."""
    verts, faces, lines = [], [], []
    for _, tok in _data_lines(path):
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in tok[1:]])
        elif tok[0] == "l":
            lines.append([int(t) - 1 for t in tok[1:]])
    return np.array(verts), faces, lines
