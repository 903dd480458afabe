"""Six-camera rig, z-buffered perspective rasterizer, Phong colour shading and
differentiable feature rendering.

Visibility is hard (nearest face per pixel, ties to the lower face index) and
attributes use perspective-correct barycentric interpolation. Feature rendering
is linear in the vertex features for fixed geometry; its adjoint scatters each
pixel gradient back to the three source vertices with the pixel's weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import Mesh, compute_vertex_normals, save_image
from .raster import triangle_pixels

NEAR = 1e-3


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov: float  # vertical, degrees
    resolution: int
    index: int = 0

    def __post_init__(self):
        d = np.asarray(self.target, float) - np.asarray(self.position, float)
        if np.linalg.norm(d) == 0:
            raise ValueError("camera position coincides with its look-at point")
        f = d / np.linalg.norm(d)
        u = np.asarray(self.up, float)
        if np.linalg.norm(np.cross(f, u)) < 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")

    def with_resolution(self, resolution: int) -> "Camera":
        return replace(self, resolution=resolution)

    @property
    def forward(self) -> np.ndarray:
        d = np.asarray(self.target, float) - np.asarray(self.position, float)
        return d / np.linalg.norm(d)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self.forward
        r = np.cross(f, np.asarray(self.up, float))
        r /= np.linalg.norm(r)
        u = np.cross(r, f)
        return r, u, f

    def project(self, points: np.ndarray):
        """Screen x, y (pixel units) and view depth for world points ``(N,3)``."""
        r, u, f = self.basis()
        rel = points - np.asarray(self.position, float)
        xc, yc, zc = rel @ r, rel @ u, rel @ f
        t = math.tan(math.radians(self.fov) / 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ndc_x = xc / (zc * t)
            ndc_y = yc / (zc * t)
        n = self.resolution
        return (ndc_x + 1.0) * (n / 2.0), (1.0 - ndc_y) * (n / 2.0), zc


def make_camera_rig(distance: float = 1.5, fov: float = 60.0, resolution: int = 512) -> list[Camera]:
    """Cameras on the six axis directions, looking at the origin.

    Order: +x, -x, +y, -y, +z, -z. Lateral cameras use +z as up, the z cameras +y.
    """
    if distance <= 0.5:
        raise ValueError("camera distance must exceed 0.5 to sit outside the unit cube")
    dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    rig = []
    for i, d in enumerate(dirs):
        up = (0.0, 1.0, 0.0) if d[2] != 0 else (0.0, 0.0, 1.0)
        rig.append(Camera(np.array(d, float) * distance, np.zeros(3), np.array(up), fov, resolution, i))
    return rig


def cube_fits(camera: Camera, margin: float = 0.0) -> bool:
    """Whether all eight corners of the unit cube project inside the frame (with margin)."""
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    sx, sy, z = camera.project(corners)
    n = camera.resolution
    lo, hi = margin * n, (1 - margin) * n
    return bool(np.all(z > NEAR) and np.all((sx >= lo) & (sx <= hi) & (sy >= lo) & (sy <= hi)))


def perturb_cameras(rig: list[Camera], sigma: float, seed) -> list[Camera]:
    """Resample each camera's azimuth/elevation from N(original, sigma degrees)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return list(rig)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for cam in rig:
        pos = np.asarray(cam.position, float)
        dist = np.linalg.norm(pos)
        az = math.atan2(pos[1], pos[0])
        el = math.asin(np.clip(pos[2] / dist, -1, 1))
        az += math.radians(rng.normal(0.0, sigma))
        el += math.radians(rng.normal(0.0, sigma))
        new = dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        f = -new / dist
        up = np.asarray(cam.up, float)
        if abs(f @ up) > 0.99:
            up = np.array([0.0, 1.0, 0.0]) if abs(f[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        out.append(replace(cam, position=new, up=up))
    return out


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Fragments:
    """Per-pixel nearest face (-1 = background), perspective-correct weights and depth."""

    face: np.ndarray  # (H, W) int64
    bary: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), inf on background

    @property
    def mask(self) -> np.ndarray:
        return self.face >= 0


def rasterize_fragments(vertices: np.ndarray, faces: np.ndarray, camera: Camera) -> Fragments:
    n = camera.resolution
    sx, sy, z = camera.project(vertices)
    zbuf = np.full((n, n), np.inf)
    face_id = np.full((n, n), -1, dtype=np.int64)
    bary = np.zeros((n, n, 3))
    for f, tri in enumerate(faces):
        zt = z[tri]
        if np.any(zt <= NEAR):
            continue
        hit = triangle_pixels(sx[tri], sy[tri], n, n)
        if hit is None:
            continue
        rows, cols, b0, b1, b2 = hit
        q0, q1, q2 = b0 / zt[0], b1 / zt[1], b2 / zt[2]
        s = q0 + q1 + q2
        depth = 1.0 / s
        closer = depth < zbuf[rows, cols]
        if not closer.any():
            continue
        rows, cols = rows[closer], cols[closer]
        zbuf[rows, cols] = depth[closer]
        face_id[rows, cols] = f
        bary[rows, cols, 0] = q0[closer] / s[closer]
        bary[rows, cols, 1] = q1[closer] / s[closer]
        bary[rows, cols, 2] = q2[closer] / s[closer]
    return Fragments(face_id, bary, zbuf)


@dataclass
class Projection:
    """``(C,H,W)`` image (numpy for colour, Tensor for features) with its coverage mask."""

    image: object
    mask: np.ndarray
    camera_index: int
    kind: str  # "color" | "feature"
    fragments: Fragments | None = None


def block_reduce_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Majority vote over ``factor x factor`` blocks (half or more covered counts as covered)."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask shape {mask.shape} is not divisible by {factor}")
    counts = mask.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    return 2 * counts >= factor * factor


def interpolate(fragments: Fragments, faces: np.ndarray, attributes: np.ndarray) -> np.ndarray:
    """``(H,W,C)`` perspective-correct interpolation; background pixels hold 0."""
    mask = fragments.mask
    out = np.zeros(mask.shape + (attributes.shape[1],))
    corners = faces[fragments.face[mask]]
    out[mask] = np.einsum("pk,pkc->pc", fragments.bary[mask], attributes[corners])
    return out


def rasterize(mesh: Mesh, camera: Camera, attributes: np.ndarray) -> Projection:
    attributes = np.asarray(attributes, float).reshape(mesh.n_vertices, -1)
    frags = rasterize_fragments(mesh.vertices, mesh.faces, camera)
    img = interpolate(frags, mesh.faces, attributes).transpose(2, 0, 1)
    return Projection(img, frags.mask, camera.index, "feature", frags)


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Lighting:
    """Ambient term plus an optional directional light.

    ``direction`` points from the surface towards the light; ``None`` means a headlight
    aligned with each camera's viewing direction.
    """

    mode: str = "directional"  # "ambient" | "directional"
    ambient: float = 0.4
    intensity: float = 0.6
    direction: tuple[float, float, float] | None = None
    diffuse: float = 1.0
    specular: float = 0.2
    shininess: float = 32.0

    def __post_init__(self):
        if self.ambient < 0 or self.intensity < 0:
            raise ValueError("light intensities must be non-negative")
        if self.mode not in ("ambient", "directional"):
            raise ValueError(f"unknown lighting mode {self.mode!r}")


AMBIENT_ONLY = Lighting(mode="ambient", ambient=1.0, intensity=0.0, diffuse=0.0, specular=0.0)


def sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup with clamp-to-edge; uv ``(P,2)`` -> ``(P,3)``."""
    h, w, _ = texture.shape
    x = np.clip(uv[:, 0] * w - 0.5, 0, w - 1)
    y = np.clip((1.0 - uv[:, 1]) * h - 0.5, 0, h - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = texture[y0, x0] * (1 - fx) + texture[y0, x1] * fx
    bottom = texture[y1, x0] * (1 - fx) + texture[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def render_color(mesh: Mesh, camera: Camera, lighting: Lighting = Lighting(),
                 normals: np.ndarray | None = None, fragments: Fragments | None = None) -> Projection:
    """Phong-shaded ``(3,H,W)`` colour projection, clamped to [0,1], black background."""
    frags = fragments or rasterize_fragments(mesh.vertices, mesh.faces, camera)
    mask = frags.mask
    fid = frags.face[mask]
    b = frags.bary[mask]
    corners = mesh.faces[fid]
    if mesh.has_uvs:
        uv = np.einsum("pk,pkc->pc", b, mesh.uvs[mesh.face_uvs[fid]])
        albedo = sample_texture(mesh.texture, uv)
    elif mesh.colors is not None:
        albedo = np.einsum("pk,pkc->pc", b, mesh.colors[corners])
    else:
        albedo = np.ones((len(fid), 3))

    shade = np.full((len(fid), 1), lighting.ambient)
    color = albedo * shade
    if lighting.mode == "directional" and (lighting.diffuse > 0 or lighting.specular > 0):
        vn = compute_vertex_normals(mesh) if normals is None else normals
        n = np.einsum("pk,pkc->pc", b, vn[corners])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        pos = np.einsum("pk,pkc->pc", b, mesh.vertices[corners])
        view = np.asarray(camera.position, float) - pos
        view /= np.maximum(np.linalg.norm(view, axis=1, keepdims=True), 1e-12)
        if lighting.direction is None:
            light = np.broadcast_to(-camera.forward, view.shape)
        else:
            d = np.asarray(lighting.direction, float)
            light = np.broadcast_to(d / np.linalg.norm(d), view.shape)
        ndotl = np.sum(n * light, axis=1, keepdims=True)
        color = albedo * (shade + lighting.diffuse * lighting.intensity * np.maximum(ndotl, 0.0))
        if lighting.specular > 0:
            refl = 2.0 * ndotl * n - light
            rdotv = np.maximum(np.sum(refl * view, axis=1, keepdims=True), 0.0)
            spec = np.where(ndotl > 0, rdotv ** lighting.shininess, 0.0)
            color = color + lighting.specular * lighting.intensity * spec
    img = np.zeros(mask.shape + (3,))
    img[mask] = np.clip(color, 0.0, 1.0)
    return Projection(img.transpose(2, 0, 1), mask, camera.index, "color", frags)


def render_features(mesh: Mesh, camera: Camera, graph_features: Tensor,
                    fragments: Fragments | None = None) -> Projection:
    """Differentiable ``(C,H,W)`` projection of per-vertex features under unit ambient light."""
    if graph_features.shape[0] != mesh.n_vertices:
        raise ValueError(
            f"feature rows ({graph_features.shape[0]}) must equal vertex count ({mesh.n_vertices})"
        )
    frags = fragments or rasterize_fragments(mesh.vertices, mesh.faces, camera)
    return Projection(splat_features(frags, mesh.faces, graph_features), frags.mask,
                      camera.index, "feature", frags)


def splat_features(frags: Fragments, faces: np.ndarray, features: Tensor) -> Tensor:
    h, w = frags.face.shape
    c = features.shape[1]
    mask = frags.mask.reshape(-1)
    pix = np.flatnonzero(mask)
    fid = frags.face.reshape(-1)[pix]
    weights = frags.bary.reshape(-1, 3)[pix]
    values = ad.weighted_gather(features, faces[fid], weights)
    img = ad.scatter_add_rows(values, pix, h * w)
    return ad.transpose(ad.reshape(img, (h, w, c)), (2, 0, 1))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------
def save_projection(proj: Projection, path, mask_path=None) -> None:
    """PNG export; feature projections are min-max normalised per channel (first 3 shown)."""
    from PIL import Image

    img = proj.image.data if isinstance(proj.image, Tensor) else np.asarray(proj.image)
    if proj.kind == "feature":
        img = img[:3] if img.shape[0] >= 3 else np.repeat(img[:1], 3, axis=0)
        lo = img.min(axis=(1, 2), keepdims=True)
        hi = img.max(axis=(1, 2), keepdims=True)
        img = (img - lo) / np.where(hi > lo, hi - lo, 1.0)
    save_image(img.transpose(1, 2, 0), path)
    if mask_path is not None:
        Image.fromarray(proj.mask).convert("1").save(mask_path)
