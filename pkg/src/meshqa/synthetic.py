"""Procedural textured meshes, distortions and manifests for desk-scale experiments.

Run ``python -m meshqa.synthetic OUT_DIR --contents 5`` to write a dataset.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .mesh import Mesh, compute_vertex_normals, write_mesh

SHAPES = ("sphere", "ellipsoid", "bumpy", "squashed", "lumpy")


def uv_sphere(n_lat: int = 16, n_lon: int = 24, shape: str = "sphere") -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Lat-long sphere; the seam shares vertices but not uvs, poles are single vertices."""
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, n_lat):
        theta = math.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * math.pi * j / n_lon
            verts.append((math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)))
    verts.append((0.0, 0.0, -1.0))
    v = np.array(verts)
    v = _deform(v, shape)

    uvs = [(j / n_lon, 1.0 - i / n_lat) for i in range(n_lat + 1) for j in range(n_lon + 1)]

    def vid(i, j):
        if i == 0:
            return 0
        if i == n_lat:
            return len(verts) - 1
        return 1 + (i - 1) * n_lon + (j % n_lon)

    def tid(i, j):
        return i * (n_lon + 1) + j

    faces, face_uvs = [], []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b, c, d = (i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)
            for tri in ((a, b, c), (a, c, d)):
                ids = [vid(*p) for p in tri]
                if len(set(ids)) < 3:
                    continue
                faces.append(ids)
                face_uvs.append([tid(*p) for p in tri])
    return v, np.array(faces), np.array(uvs), np.array(face_uvs)


def _deform(v: np.ndarray, shape: str) -> np.ndarray:
    x, y, z = v.T
    if shape == "sphere":
        return v
    if shape == "ellipsoid":
        return v * np.array([1.0, 0.7, 0.55])
    if shape == "bumpy":
        r = 1.0 + 0.12 * np.sin(4 * np.arctan2(y, x)) * np.sin(3 * np.arccos(np.clip(z, -1, 1)))
        return v * r[:, None]
    if shape == "squashed":
        return v * np.array([1.0, 1.0, 0.6]) + np.stack([0.2 * z ** 2, 0 * z, 0 * z], axis=1)
    if shape == "lumpy":
        r = 1.0 + 0.1 * np.cos(3 * x + 1.0) * np.cos(2 * y) + 0.08 * z ** 3
        return v * r[:, None]
    raise ValueError(f"unknown shape {shape!r}")


def procedural_texture(size: int = 256, seed: int = 0) -> np.ndarray:
    """Checker pattern blended with smooth colour noise; values in [0,1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    k = int(rng.integers(6, 12))
    checker = ((np.floor(xx * k) + np.floor(yy * k)) % 2)[..., None]
    base = rng.uniform(0.2, 0.9, size=(2, 3))
    img = checker * base[0] + (1 - checker) * base[1]
    noise = gaussian_filter(rng.normal(size=(size, size, 3)), sigma=(size / 16, size / 16, 0))
    noise /= np.abs(noise).max() + 1e-12
    img = img + 0.15 * noise + 0.1 * np.sin(2 * math.pi * (xx * 3 + yy))[..., None]
    return np.clip(img, 0.0, 1.0)


def textured_mesh(shape: str = "sphere", seed: int = 0, n_lat: int = 16, n_lon: int = 24,
                  texture_size: int = 256) -> Mesh:
    v, f, uv, fuv = uv_sphere(n_lat, n_lon, shape)
    return Mesh(v, f, uv, fuv, procedural_texture(texture_size, seed)).validate()


def vertex_noise(mesh: Mesh, strength: float, seed: int = 0) -> Mesh:
    """Displace vertices along their normals by N(0, strength) (in model units)."""
    rng = np.random.default_rng(seed)
    n = compute_vertex_normals(mesh)
    v = mesh.vertices + n * rng.normal(0.0, strength, size=(mesh.n_vertices, 1))
    return Mesh(v, mesh.faces, mesh.uvs, mesh.face_uvs, mesh.texture, mesh.colors)


def texture_blur(mesh: Mesh, sigma: float) -> Mesh:
    tex = gaussian_filter(mesh.texture, sigma=(sigma, sigma, 0), mode="wrap")
    return Mesh(mesh.vertices, mesh.faces, mesh.uvs, mesh.face_uvs, np.clip(tex, 0, 1), mesh.colors)


NOISE_LEVELS = (0.01, 0.02, 0.035, 0.05)
BLUR_LEVELS = (1.0, 2.0, 4.0, 8.0)
NOISE_MOS = (0.85, 0.65, 0.45, 0.25)
BLUR_MOS = (0.9, 0.7, 0.5, 0.3)


def write_dataset(out_dir, contents: int = 1, n_lat: int = 16, n_lon: int = 24,
                  texture_size: int = 256) -> Path:
    """One reference per content plus 4 vertex-noise and 4 texture-blur distortions.

    MOS falls monotonically with distortion strength. Returns the manifest path.
    """
    from .dataset import DatasetManifest, ManifestRecord

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(contents):
        shape = SHAPES[k % len(SHAPES)]
        ref = textured_mesh(shape, seed=k, n_lat=n_lat, n_lon=n_lon, texture_size=texture_size)
        cid = f"content{k}"
        ref_path = out / f"{cid}_ref.obj"
        write_mesh(ref, ref_path)
        for lvl, (s, mos) in enumerate(zip(NOISE_LEVELS, NOISE_MOS)):
            p = out / f"{cid}_noise{lvl}.obj"
            write_mesh(vertex_noise(ref, s, seed=100 * k + lvl), p)
            records.append(ManifestRecord(ref_path.name, p.name, mos, cid))
        for lvl, (s, mos) in enumerate(zip(BLUR_LEVELS, BLUR_MOS)):
            p = out / f"{cid}_blur{lvl}.obj"
            write_mesh(texture_blur(ref, s), p)
            records.append(ManifestRecord(ref_path.name, p.name, mos, cid))
    manifest = out / "manifest.csv"
    DatasetManifest(records, root=out).save(manifest)
    return manifest


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write a synthetic distorted-mesh dataset")
    ap.add_argument("out_dir")
    ap.add_argument("--contents", type=int, default=1)
    args = ap.parse_args(argv)
    print(write_dataset(args.out_dir, args.contents))


if __name__ == "__main__":
    main()
