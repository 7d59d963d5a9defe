"""ASCII PLY reading/writing with optional per-vertex scalar and RGB, plus OBJ export."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .mesh import TriMesh

__all__ = ["write_mesh", "read_mesh", "read_ply", "write_obj"]

_PLY_TYPES = {
    "char": np.int8, "int8": np.int8, "uchar": np.uint8, "uint8": np.uint8,
    "short": np.int16, "int16": np.int16, "ushort": np.uint16, "uint16": np.uint16,
    "int": np.int32, "int32": np.int32, "uint": np.uint32, "uint32": np.uint32,
    "float": np.float32, "float32": np.float32, "double": np.float64, "float64": np.float64,
}


def write_mesh(mesh: TriMesh, path, node_scalars=None, node_colors=None, scalar_name: str = "quality") -> None:
    """Write an ASCII PLY file.

    ``node_scalars`` adds a float vertex property named ``scalar_name``;
    ``node_colors`` (``(V, 3)`` values in 0..255) adds uchar red/green/blue.
    """
    n = mesh.n_vertices
    cols = [np.asarray(mesh.vertices, np.float32)]
    fmt = ["%.9g", "%.9g", "%.9g"]
    header = [
        "ply",
        "format ascii 1.0",
        "comment segqa",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if node_scalars is not None:
        s = np.asarray(node_scalars, np.float32).reshape(-1)
        if len(s) != n:
            raise ValueError(f"node_scalars has {len(s)} entries for {n} vertices")
        cols.append(s[:, None])
        fmt.append("%.9g")
        header.append(f"property float {scalar_name}")
    if node_colors is not None:
        c = np.asarray(node_colors)
        if c.shape != (n, 3):
            raise ValueError(f"node_colors must have shape ({n}, 3), got {c.shape}")
        cols.append(np.clip(np.rint(c), 0, 255).astype(np.float32))
        fmt += ["%d", "%d", "%d"]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]

    table = np.concatenate(cols, axis=1) if n else np.zeros((0, len(fmt)))
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        if n:
            np.savetxt(fh, table, fmt=" ".join(fmt))
        if mesh.n_faces:
            f = np.concatenate([np.full((mesh.n_faces, 1), 3), mesh.faces], axis=1)
            np.savetxt(fh, f, fmt="%d")


def read_ply(path):
    """Parse an ASCII PLY file into ``(TriMesh, vertex_properties)``.

    ``vertex_properties`` maps every non-coordinate vertex property name to
    an array. Malformed content raises :class:`FormatError` with a line number.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not an ASCII PLY file") from exc
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", line=1)

    elements: list[list] = []  # [name, count, [(prop_name, type, is_list)]]
    body = None
    for i, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise FormatError(f"unsupported format {' '.join(tok[1:])!r}", line=i)
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError(f"bad element line {raw!r}", line=i)
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before any element", line=i)
            if len(tok) == 5 and tok[1] == "list":
                elements[-1][2].append((tok[4], tok[3], True))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1][2].append((tok[2], tok[1], False))
            else:
                raise FormatError(f"bad property line {raw!r}", line=i)
        elif tok[0] == "end_header":
            body = i
            break
        else:
            raise FormatError(f"unexpected header keyword {tok[0]!r}", line=i)
    if body is None:
        raise FormatError("header has no end_header", line=len(lines))

    pos = body  # 0-based index of first body line
    vertices = np.zeros((0, 3))
    faces = np.zeros((0, 3), np.int64)
    props: dict[str, np.ndarray] = {}
    for name, count, plist in elements:
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise FormatError(f"file ends inside element {name!r}", line=len(lines) + 1)
            tok = lines[pos].split()
            pos += 1
            try:
                vals, k = [], 0
                for _, _, is_list in plist:
                    if is_list:
                        m = int(tok[k])
                        vals.append([int(t) for t in tok[k + 1:k + 1 + m]])
                        if len(vals[-1]) != m:
                            raise IndexError
                        k += 1 + m
                    else:
                        vals.append(float(tok[k]))
                        k += 1
                if k != len(tok):
                    raise IndexError
            except (ValueError, IndexError):
                raise FormatError(f"malformed {name} record {lines[pos - 1]!r}", line=pos) from None
            rows.append(vals)
        if name == "vertex":
            names = [p[0] for p in plist]
            try:
                ix = [names.index(c) for c in "xyz"]
            except ValueError:
                raise FormatError("vertex element lacks x/y/z") from None
            arr = np.array([[r[j] for j in range(len(names))] for r in rows], dtype=np.float64).reshape(count, len(names))
            vertices = arr[:, ix]
            for j, (pname, ptype, _) in enumerate(plist):
                if pname not in ("x", "y", "z"):
                    props[pname] = arr[:, j].astype(_PLY_TYPES[ptype])
        elif name == "face":
            if not plist or not plist[0][2]:
                raise FormatError("face element needs a vertex index list")
            polys = [r[0] for r in rows]
            if any(len(p) != 3 for p in polys):
                raise FormatError("only triangular faces are supported")
            faces = np.array(polys, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise FormatError("face index out of range")
    return TriMesh(vertices, faces), props


def read_mesh(path) -> TriMesh:
    return read_ply(path)[0]


def write_obj(mesh: TriMesh, path) -> None:
    """Positions and faces only (1-based indices)."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % tuple(v))
        for f in mesh.faces + 1:
            fh.write("f %d %d %d\n" % tuple(f))
