"""File formats: PLY point clouds / meshes, OBJ meshes, JSON records, depth blobs."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, Pose
from .mesh import Mesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply_cloud(path, cloud: PointCloud):
    """Binary little-endian PLY with float32 xyz and optional uint8 rgb."""
    pts = np.asarray(cloud.points, dtype="<f4")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pts)}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    rec = np.empty(len(pts), dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    if cloud.colors is not None:
        c = np.asarray(cloud.colors)
        if c.dtype.kind == "f":
            c = np.clip(np.round(c * 255.0), 0, 255)
        c = c.astype("u1")
        rec["red"], rec["green"], rec["blue"] = c[:, 0], c[:, 1], c[:, 2]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def write_ply_mesh(path, mesh: Mesh):
    v = np.asarray(mesh.vertices, dtype="<f4")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(v)}",
              "property float x", "property float y", "property float z",
              f"element face {len(mesh.faces)}", "property list uchar int vertex_indices",
              "end_header"]
    frec = np.empty(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    frec["n"] = 3
    frec["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(v.tobytes())
        fh.write(frec.tobytes())


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise ValueError("not a PLY file")
    fmt, elements = None, []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PLY header")
        tok = line.decode("ascii").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], "list", tok[2], tok[3]))
            else:
                elements[-1]["props"].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            return fmt, elements


def read_ply(path) -> dict:
    """Read vertex (and optional face) elements of an ASCII or binary PLY."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        endian = {"binary_little_endian": "<", "binary_big_endian": ">"}.get(fmt)
        out = {}
        if fmt == "ascii":
            tokens = fh.read().decode("ascii").split()
            pos = 0
            for el in elements:
                rows = []
                for _ in range(el["count"]):
                    row = {}
                    for prop in el["props"]:
                        if prop[1] == "list":
                            n = int(tokens[pos]); pos += 1
                            row[prop[0]] = [float(x) for x in tokens[pos:pos + n]]
                            pos += n
                        else:
                            row[prop[0]] = float(tokens[pos]); pos += 1
                    rows.append(row)
                out[el["name"]] = rows
        elif endian is not None:
            for el in elements:
                if all(p[1] != "list" for p in el["props"]):
                    dt = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in el["props"]])
                    arr = np.frombuffer(fh.read(dt.itemsize * el["count"]), dtype=dt)
                    out[el["name"]] = arr
                else:
                    rows = []
                    for _ in range(el["count"]):
                        row = {}
                        for prop in el["props"]:
                            if prop[1] == "list":
                                cdt = np.dtype(endian + _PLY_TYPES[prop[2]])
                                idt = np.dtype(endian + _PLY_TYPES[prop[3]])
                                n = int(np.frombuffer(fh.read(cdt.itemsize), cdt)[0])
                                row[prop[0]] = np.frombuffer(fh.read(idt.itemsize * n), idt).tolist()
                            else:
                                dt = np.dtype(endian + _PLY_TYPES[prop[1]])
                                row[prop[0]] = np.frombuffer(fh.read(dt.itemsize), dt)[0]
                        rows.append(row)
                    out[el["name"]] = rows
        else:
            raise ValueError(f"unsupported PLY format {fmt!r}")
    return out


def _column(rows, name):
    if isinstance(rows, np.ndarray):
        return np.asarray(rows[name], dtype=np.float64)
    return np.array([r[name] for r in rows], dtype=np.float64)


def read_ply_cloud(path) -> PointCloud:
    data = read_ply(path)["vertex"]
    pts = np.column_stack([_column(data, c) for c in "xyz"])
    names = data.dtype.names if isinstance(data, np.ndarray) else tuple(data[0]) if data else ()
    colors = None
    if "red" in names:
        colors = np.column_stack([_column(data, c) for c in ("red", "green", "blue")]).astype(np.uint8)
    return PointCloud(pts, colors)


def _triangulate(polys):
    faces = []
    for p in polys:
        p = [int(i) for i in p]
        faces += [[p[0], p[i], p[i + 1]] for i in range(1, len(p) - 1)]
    return np.asarray(faces, dtype=np.int64)


def read_mesh(path, name=None) -> Mesh:
    """Load a triangle mesh from PLY or OBJ (polygons are fan-triangulated)."""
    path = Path(path)
    name = name or path.stem
    if path.suffix.lower() == ".obj":
        verts, polys = [], []
        for line in path.read_text().splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                polys.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        return Mesh(np.asarray(verts), _triangulate(polys), name=name)
    data = read_ply(path)
    v = data["vertex"]
    verts = np.column_stack([_column(v, c) for c in "xyz"])
    if "face" not in data:
        raise ValueError(f"{path} has no faces")
    key = "vertex_indices" if "vertex_indices" in data["face"][0] else "vertex_index"
    return Mesh(verts, _triangulate([r[key] for r in data["face"]]), name=name)


def dump_json(path, obj):
    """Stable, byte-reproducible JSON."""
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def pose_to_json(p: Pose) -> dict:
    return p.to_json()


def pose_from_json(d) -> Pose:
    return Pose.from_json(d)


def write_depth(path, depth):
    """float32 row-major depth preceded by a length-prefixed JSON header."""
    d = np.ascontiguousarray(depth, dtype="<f4")
    header = json.dumps({"dtype": "float32", "height": d.shape[0], "width": d.shape[1],
                         "order": "row-major", "units": "m"}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(d.tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(header["height"], header["width"]).astype(np.float64)


def write_raw(path, arr, dtype):
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_raw(path, dtype, shape):
    return np.frombuffer(Path(path).read_bytes(), dtype=dtype).reshape(shape).copy()
