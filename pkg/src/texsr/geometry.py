"""Triangle meshes: OBJ I/O, unit normalization and tangent frames.

Meshes are indexed triangle lists where every vertex is a unique
(position, uv, normal) combination. Geometry is fixed during optimization,
so everything here is immutable after load.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Mesh:
    positions: np.ndarray  # (N, 3)
    uvs: np.ndarray        # (N, 2)
    normals: np.ndarray    # (N, 3) unit
    triangles: np.ndarray  # (M, 3) int
    tangents: np.ndarray | None = None  # (N, 4): xyz tangent + handedness sign

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        uv = np.ascontiguousarray(np.asarray(self.uvs, dtype=np.float64))
        nrm = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        tri = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError(f"positions must be (N,3), got {pos.shape}")
        if uv.shape != (pos.shape[0], 2):
            raise GeometryError("every vertex needs a UV")
        if nrm.shape != pos.shape:
            raise GeometryError("every vertex needs a normal")
        if tri.size and (tri.min() < 0 or tri.max() >= pos.shape[0]):
            raise GeometryError("triangle index out of range")
        tan = self.tangents
        if tan is not None:
            tan = np.ascontiguousarray(np.asarray(tan, dtype=np.float64))
            if tan.shape != (pos.shape[0], 4):
                raise GeometryError(f"tangents must be (N,4), got {tan.shape}")
            tan.flags.writeable = False
        for a in (pos, uv, nrm, tri):
            a.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "uvs", uv)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "tangents", tan)

    @property
    def num_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]


def _parse_face_vertex(token: str) -> tuple[int, int | None, int | None]:
    parts = token.split("/")
    vi = int(parts[0])
    ti = int(parts[1]) if len(parts) > 1 and parts[1] else None
    ni = int(parts[2]) if len(parts) > 2 and parts[2] else None
    return vi, ti, ni


def load_mesh(path) -> Mesh:
    """Load a Wavefront OBJ (v/vt/vn/f subset, polygons fan-triangulated).

    Indices are rebuilt so each (position, uv, normal) combination becomes
    one vertex. MTL references are ignored; textures are supplied
    separately. Missing UVs are a hard error.
    """
    positions, uvs, normals = [], [], []
    faces = []
    path = Path(path)
    with open(path, "r") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(parts[1]), float(parts[2])])
            elif tag == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                corners = [_parse_face_vertex(t) for t in parts[1:]]
                for k in range(1, len(corners) - 1):
                    faces.append((corners[0], corners[k], corners[k + 1]))
    if not faces:
        raise GeometryError(f"no faces in {path}")

    def absolute(idx: int, count: int) -> int:
        return idx - 1 if idx > 0 else count + idx

    vertex_ids: dict[tuple, int] = {}
    out_pos, out_uv, out_nrm = [], [], []
    triangles = []
    needs_normals = False
    for face in faces:
        tri = []
        for vi, ti, ni in face:
            if ti is None:
                raise GeometryError(f"mesh has no UV parameterization: {path}")
            key = (vi, ti, ni)
            idx = vertex_ids.get(key)
            if idx is None:
                idx = len(out_pos)
                vertex_ids[key] = idx
                out_pos.append(positions[absolute(vi, len(positions))])
                out_uv.append(uvs[absolute(ti, len(uvs))])
                if ni is None:
                    needs_normals = True
                    out_nrm.append([0.0, 0.0, 0.0])
                else:
                    out_nrm.append(normals[absolute(ni, len(normals))])
            tri.append(idx)
        triangles.append(tri)

    pos = np.asarray(out_pos, dtype=np.float64)
    uv = np.asarray(out_uv, dtype=np.float64)
    nrm = np.asarray(out_nrm, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    if needs_normals:
        nrm = _smooth_normals(pos, tri)
    return Mesh(positions=pos, uvs=uv, normals=nrm, triangles=tri)


def _smooth_normals(pos: np.ndarray, tri: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(pos)
    p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    fn = np.cross(p1 - p0, p2 - p0)  # area-weighted
    for k in range(3):
        np.add.at(acc, tri[:, k], fn)
    lengths = np.linalg.norm(acc, axis=1, keepdims=True)
    return acc / np.maximum(lengths, 1e-20)


def save_mesh(path, mesh: Mesh) -> None:
    """Write as OBJ with full float precision (round-trip exact)."""
    lines = []
    for p in mesh.positions:
        lines.append(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    for t in mesh.uvs:
        lines.append(f"vt {float(t[0])!r} {float(t[1])!r}")
    for n in mesh.normals:
        lines.append(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}")
    for tri in mesh.triangles:
        a, b, c = (int(i) + 1 for i in tri)
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin and scale max extent to 1."""
    if mesh.num_vertices == 0:
        raise GeometryError("empty mesh")
    lo = mesh.positions.min(axis=0)
    hi = mesh.positions.max(axis=0)
    extent = float((hi - lo).max())
    if not np.isfinite(extent) or extent <= 0.0:
        raise GeometryError("degenerate mesh: zero spatial extent")
    center = (lo + hi) * 0.5
    pos = (mesh.positions - center) / extent
    return Mesh(
        positions=pos,
        uvs=mesh.uvs,
        normals=mesh.normals,
        triangles=mesh.triangles,
        tangents=mesh.tangents,
    )


def compute_tangents(mesh: Mesh) -> Mesh:
    """Per-vertex tangent frames from averaged per-face UV derivatives.

    Tangents are Gram-Schmidt orthogonalized against the vertex normal and
    unit length; the w component carries the bitangent handedness sign.
    Degenerate-UV faces contribute nothing; vertices left without a
    contribution get an arbitrary frame orthogonal to their normal.
    """
    pos, uv, tri = mesh.positions, mesh.uvs, mesh.triangles
    tan_acc = np.zeros((mesh.num_vertices, 3))
    bit_acc = np.zeros((mesh.num_vertices, 3))

    p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    t0, t1, t2 = uv[tri[:, 0]], uv[tri[:, 1]], uv[tri[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    d1, d2 = t1 - t0, t2 - t0
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = np.abs(det) > 1e-12
    r = np.zeros_like(det)
    r[ok] = 1.0 / det[ok]
    t_face = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * r[:, None]
    b_face = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) * r[:, None]
    t_face[~ok] = 0.0
    b_face[~ok] = 0.0
    for k in range(3):
        np.add.at(tan_acc, tri[:, k], t_face)
        np.add.at(bit_acc, tri[:, k], b_face)

    n = mesh.normals
    t = tan_acc - n * (n * tan_acc).sum(axis=1, keepdims=True)
    lengths = np.linalg.norm(t, axis=1)
    bad = lengths < 1e-8
    if bad.any():
        # arbitrary orthogonal frame: cross with the least-aligned axis
        axis = np.zeros((bad.sum(), 3))
        axis[np.arange(bad.sum()), np.argmin(np.abs(n[bad]), axis=1)] = 1.0
        fallback = np.cross(n[bad], axis)
        t[bad] = fallback
        lengths = np.linalg.norm(t, axis=1)
    t = t / lengths[:, None]
    sign = np.where((np.cross(n, t) * bit_acc).sum(axis=1) < 0.0, -1.0, 1.0)
    tangents = np.concatenate([t, sign[:, None]], axis=1)
    return Mesh(
        positions=pos,
        uvs=uv,
        normals=mesh.normals,
        triangles=tri,
        tangents=tangents,
    )
