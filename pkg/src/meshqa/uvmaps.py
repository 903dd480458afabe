"""Geometry attributes rasterized into texture (UV) space, pixel-aligned with the texture map.

Pixel ``(r, c)`` of a ``H x W`` map samples uv ``((c+0.5)/W, 1-(r+0.5)/H)``; row 0 is
the top of the image, i.e. v = 1. Where UV charts overlap the highest face index wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, bilinear_matrix
from .mesh import Mesh, MeshError, save_image
from .raster import triangle_pixels


@dataclass(frozen=True)
class AttributeMap:
    data: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def uv_to_screen(uvs: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    return uvs[:, 0] * width, (1.0 - uvs[:, 1]) * height


def uv_to_pixel(uv, height: int, width: int) -> tuple[int, int]:
    """Pixel ``(row, col)`` containing a uv coordinate, clamped to the map.

    Indices are ``floor(u*W)`` and ``floor(v*H)`` counted from the bottom row, so a uv
    exactly on a pixel boundary resolves to the pixel right of / above it.
    """
    col = min(max(int(np.floor(uv[0] * width)), 0), width - 1)
    row_from_bottom = min(max(int(np.floor(uv[1] * height)), 0), height - 1)
    return height - 1 - row_from_bottom, col


def rasterize_uv_fragments(mesh: Mesh, resolution: int):
    """Per-pixel ``(face, barycentrics)`` of the UV layout; face is -1 where uncovered."""
    if not mesh.has_uvs:
        raise MeshError("mesh has no uv layout; use the raw vertex graph initialisation instead")
    if resolution < 8:
        raise ValueError("uv map resolution must be at least 8")
    h = w = resolution
    sx, sy = uv_to_screen(mesh.uvs, h, w)
    face_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    for f, tri in enumerate(mesh.face_uvs):
        hit = triangle_pixels(sx[tri], sy[tri], h, w)
        if hit is None:
            continue
        rows, cols, b0, b1, b2 = hit
        face_id[rows, cols] = f
        bary[rows, cols, 0] = b0
        bary[rows, cols, 1] = b1
        bary[rows, cols, 2] = b2
    return face_id, bary


def interpolate_fragments(face_id: np.ndarray, bary: np.ndarray, faces: np.ndarray,
                          attributes: np.ndarray) -> np.ndarray:
    """Barycentric blend of per-vertex ``attributes`` over the covered pixels; 0 elsewhere."""
    out = np.zeros(face_id.shape + (attributes.shape[1],))
    mask = face_id >= 0
    corners = faces[face_id[mask]]
    b = bary[mask]
    out[mask] = np.einsum("pk,pkc->pc", b, attributes[corners])
    return out


def rasterize_uv_maps(mesh: Mesh, normals: np.ndarray, resolution: int = 256):
    """Return ``(normal_map, vertex_map)`` aligned with the texture in UV space."""
    face_id, bary = rasterize_uv_fragments(mesh, resolution)
    mask = face_id >= 0
    nmap = interpolate_fragments(face_id, bary, mesh.faces, normals)
    length = np.linalg.norm(nmap, axis=-1, keepdims=True)
    nmap = np.where(length > 0, nmap / np.where(length > 0, length, 1.0), 0.0)
    vmap = interpolate_fragments(face_id, bary, mesh.faces, mesh.vertices)
    return AttributeMap(nmap, mask), AttributeMap(vmap, mask.copy())


def resample_texture(texture: np.ndarray, resolution: int) -> np.ndarray:
    """Bilinear resampling of an ``(H,W,3)`` texture to ``resolution x resolution``."""
    h, w, _ = texture.shape
    if (h, w) == (resolution, resolution):
        return np.asarray(texture, dtype=np.float64).copy()
    ry = bilinear_matrix(h, resolution)
    rx = bilinear_matrix(w, resolution)
    return np.einsum("yh,hwc,xw->yxc", ry, texture, rx, optimize=True)


def stack_base_input(texture: np.ndarray, normal_map: AttributeMap, vertex_map: AttributeMap,
                     channels: tuple[bool, bool, bool] = (True, True, True)) -> Tensor:
    """Nine-channel ``(9,H,W)`` base-encoder input: texture RGB, normal xyz, vertex xyz.

    ``channels`` zeroes the texture/normal/vertex groups for ablations.
    """
    h, w = normal_map.height, normal_map.width
    if (vertex_map.height, vertex_map.width) != (h, w):
        raise ValueError("normal and vertex maps differ in resolution")
    if h != w:
        raise ValueError("maps must be square")
    tex = resample_texture(texture, h)
    if tex.shape[:2] != (h, w):
        raise ValueError("texture resolution mismatch after resampling")
    groups = [tex, normal_map.data, vertex_map.data]
    stacked = np.concatenate(
        [g if keep else np.zeros_like(g) for g, keep in zip(groups, channels)], axis=-1
    )
    return Tensor(stacked.transpose(2, 0, 1))


def export_maps(normal_map: AttributeMap, vertex_map: AttributeMap, prefix) -> None:
    """Debug PNGs: normals remapped from [-1,1], vertex positions from [-0.5,0.5], 1-bit mask."""
    from PIL import Image

    save_image((normal_map.data + 1.0) / 2.0, f"{prefix}_normal.png")
    save_image(np.clip(vertex_map.data + 0.5, 0, 1), f"{prefix}_vertex.png")
    Image.fromarray(normal_map.mask).convert("1").save(f"{prefix}_mask.png")
