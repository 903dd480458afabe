"""Triangle meshes with a single diffuse texture: OBJ I/O, normalisation, normals, edges."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Vertices ``(V,3)``, per-corner indices ``faces (F,3)`` / ``face_uvs (F,3)``,
    ``uvs (U,2)`` in [0,1], ``texture (H,W,3)`` in [0,1] and optional ``colors (V,3)``.

    Vertex-colour meshes carry empty ``uvs``/``face_uvs`` and ``texture=None``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    face_uvs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    texture: np.ndarray | None = None
    colors: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        for name in ("vertices", "faces", "uvs", "face_uvs", "texture", "colors"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def has_uvs(self) -> bool:
        return len(self.uvs) > 0 and self.texture is not None

    def validate(self) -> "Mesh":
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise MeshError("mesh needs at least 3 vertices of dimension 3")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) < 1:
            raise MeshError("mesh needs at least one triangle")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError(f"face vertex index out of range (|V|={len(v)})")
        if len(self.face_uvs):
            if self.face_uvs.shape != f.shape:
                raise MeshError("every face corner needs a uv index")
            if self.face_uvs.min() < 0 or self.face_uvs.max() >= len(self.uvs):
                raise MeshError(f"face uv index out of range (|U|={len(self.uvs)})")
            if np.any(self.uvs < 0) or np.any(self.uvs > 1):
                raise MeshError("uv coordinates must lie in [0,1]")
        if self.texture is not None:
            t = self.texture
            if t.ndim != 3 or t.shape[2] != 3 or t.shape[0] < 1 or t.shape[1] < 1:
                raise MeshError("texture must be an (H,W,3) image")
            if np.any(t < 0) or np.any(t > 1):
                raise MeshError("texture values must lie in [0,1]")
        if self.colors is not None and self.colors.shape != v.shape:
            raise MeshError("vertex colours must be (V,3)")
        return self


def wrap_uv(uv: np.ndarray) -> np.ndarray:
    """Fractional-part wrap into [0,1]; values already in [0,1] (including 1.0) are kept."""
    uv = np.asarray(uv, dtype=np.float64)
    inside = (uv >= 0) & (uv <= 1)
    return np.where(inside, uv, uv - np.floor(uv))


def _parse_index(token: str, count: int) -> int:
    i = int(token)
    return i - 1 if i > 0 else count + i


def load_texture(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise MeshError(f"cannot decode texture {path}: {exc}") from exc


def load_mesh(path, texture_path=None, triangulate: bool = True) -> Mesh:
    """Read a Wavefront OBJ subset: ``v`` (optionally with RGB), ``vt``, ``f``, ``mtllib``.

    The texture comes from ``texture_path``, else the ``map_Kd`` of the referenced
    material library, else a PNG next to the OBJ with the same stem.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file not found: {path}")
    verts, colors, uvs, faces, face_uvs = [], [], [], [], []
    mtllib = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif tag == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif tag == "f":
                corners = [c.split("/") for c in parts[1:]]
                if len(corners) != 3 and not triangulate:
                    raise MeshError(f"{path}:{lineno}: non-triangle face with triangulation disabled")
                if len(corners) < 3:
                    raise MeshError(f"{path}:{lineno}: face with fewer than 3 corners")
                vi = [_parse_index(c[0], len(verts)) for c in corners]
                ti = [_parse_index(c[1], len(uvs)) if len(c) > 1 and c[1] else -1 for c in corners]
                for k in range(1, len(corners) - 1):
                    faces.append([vi[0], vi[k], vi[k + 1]])
                    face_uvs.append([ti[0], ti[k], ti[k + 1]])
            elif tag == "mtllib":
                mtllib = path.parent / " ".join(parts[1:])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshError(f"{path}: face vertex index out of range (|V|={len(v)})")
    ft = np.asarray(face_uvs, dtype=np.int64).reshape(-1, 3)
    uv = wrap_uv(np.asarray(uvs, dtype=np.float64).reshape(-1, 2))
    col = np.asarray(colors, dtype=np.float64) if colors and len(colors) == len(verts) else None

    texture = None
    if len(uv) and ft.size and ft.min() >= 0:
        tex_file = texture_path or _find_texture(path, mtllib)
        if tex_file is None:
            raise MeshError(f"{path}: has uv coordinates but no texture image was found")
        texture = load_texture(tex_file)
    else:
        uv = np.zeros((0, 2))
        ft = np.zeros((0, 3), dtype=np.int64)
    return Mesh(v, f, uv, ft, texture, col).validate()


def _find_texture(obj_path: Path, mtllib: Path | None):
    if mtllib is not None and mtllib.is_file():
        for line in mtllib.read_text().splitlines():
            parts = line.split()
            if parts and parts[0] == "map_Kd":
                return mtllib.parent / parts[-1]
    candidate = obj_path.with_suffix(".png")
    return candidate if candidate.is_file() else None


def write_mesh(mesh: Mesh, path) -> None:
    """Write OBJ (+ MTL and PNG texture when the mesh is textured)."""
    path = Path(path)
    lines = []
    if mesh.has_uvs:
        mtl = path.with_suffix(".mtl")
        png = path.with_suffix(".png")
        mtl.write_text(f"newmtl material0\nKd 1 1 1\nmap_Kd {png.name}\n")
        save_image(mesh.texture, png)
        lines.append(f"mtllib {mtl.name}")
        lines.append("usemtl material0")
    for i, p in enumerate(mesh.vertices):
        row = "v " + _fmt(p)
        if mesh.colors is not None:
            row += " " + _fmt(mesh.colors[i])
        lines.append(row)
    for t in mesh.uvs:
        lines.append("vt " + _fmt(t))
    for k, face in enumerate(mesh.faces + 1):
        if mesh.has_uvs:
            ft = mesh.face_uvs[k] + 1
            lines.append("f " + " ".join(f"{a}/{b}" for a, b in zip(face, ft)))
        else:
            lines.append("f " + " ".join(str(a) for a in face))
    path.write_text("\n".join(lines) + "\n")


def _fmt(values) -> str:
    # repr of a Python float round-trips exactly
    return " ".join(repr(float(x)) for x in values)


def save_image(img: np.ndarray, path) -> None:
    """Save an ``(H,W,3)`` or ``(H,W)`` array in [0,1] as 8-bit PNG."""
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def normalize_to_unit_cube(mesh: Mesh) -> Mesh:
    """Centre the bounding box on the origin and scale its largest extent to 1."""
    v = mesh.vertices
    if not np.all(np.isfinite(v)):
        raise MeshError("vertex coordinates must be finite")
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise MeshError("degenerate mesh: zero extent along every axis")
    center = (lo + hi) / 2
    out = (v - center) / extent
    return replace(mesh, vertices=out, scale=mesh.scale * extent)


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalised face normals; their length is twice the face area."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return np.cross(b - a, c - a)


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals, renormalised to unit length."""
    fn = face_normals(mesh.vertices, mesh.faces)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    bad = norm <= 1e-300
    if np.any(bad):
        used = np.zeros(len(acc), dtype=bool)
        used[mesh.faces.reshape(-1)] = True
        if np.any(bad & used):
            log.warning("%d vertices have only degenerate incident faces; normal set to +z",
                        int(np.sum(bad & used)))
    out = np.zeros_like(acc)
    out[~bad] = acc[~bad] / norm[~bad, None]
    out[bad] = (0.0, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class WeightedEdges:
    """Directed edge list ``src -> dst`` with weights; both directions always present."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.src)


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Sorted ``(E,2)`` array of undirected face edges, ``i < j``."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(e, axis=0)


def build_edges(mesh: Mesh, epsilon: float = 1e-6) -> WeightedEdges:
    """One undirected edge per unique face edge, weight ``1 / max(length, epsilon)``."""
    und = unique_edges(mesh.faces)
    d = np.linalg.norm(mesh.vertices[und[:, 0]] - mesh.vertices[und[:, 1]], axis=1)
    w = 1.0 / np.maximum(d, epsilon)
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    return WeightedEdges(src, dst, np.concatenate([w, w]))


def vertex_uv_index(mesh: Mesh) -> list[np.ndarray]:
    """For each vertex, the sorted uv indices it is paired with by any face corner."""
    sets: list[set[int]] = [set() for _ in range(mesh.n_vertices)]
    if len(mesh.face_uvs):
        for vi, ti in zip(mesh.faces.reshape(-1), mesh.face_uvs.reshape(-1)):
            sets[vi].add(int(ti))
    return [np.array(sorted(s), dtype=np.int64) for s in sets]
