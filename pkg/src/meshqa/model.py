"""The full quality model: model branch (maps -> base encoder -> graph -> GCN -> feature
rendering), texture branch (colour rendering), quality encoder and FR regression head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Module, Tensor, load_parameters, save_parameters
from .autodiff.nn import _walk
from .config import Config
from .encoder import (
    DirectEmbed,
    ModelPatchEncoder,
    TexturePatchEncoder,
    aggregate,
    feature_patch_batch,
    fuse,
    fusion_width,
    make_fusion,
    select_patches,
)
from .graph import (
    BaseEncoder,
    FeatureGraph,
    gcn_forward,
    init_graph,
    make_gcn,
    raw_vertex_features,
    uv_sampling_taps,
)
from .mesh import (
    Mesh,
    MeshError,
    WeightedEdges,
    build_edges,
    compute_vertex_normals,
    load_mesh,
    normalize_to_unit_cube,
    vertex_uv_index,
)
from .render import Camera, Projection, make_camera_rig, rasterize_fragments, render_color, splat_features
from .uvmaps import rasterize_uv_maps, stack_base_input


@dataclass
class PreparedMesh:
    """A normalised mesh with everything that does not depend on parameters or cameras."""

    mesh: Mesh
    normals: np.ndarray
    edges: WeightedEdges
    uv_index: list
    base_input: Tensor | None = None
    taps: tuple | None = None
    raw_features: np.ndarray | None = None
    source: str = ""
    color_cache: dict = field(default_factory=dict)


def prepare_mesh(mesh: Mesh, config: Config, source: str = "") -> PreparedMesh:
    mesh = normalize_to_unit_cube(mesh)
    normals = compute_vertex_normals(mesh)
    edges = build_edges(mesh, config.edge_epsilon)
    uv_index = vertex_uv_index(mesh)
    prep = PreparedMesh(mesh, normals, edges, uv_index, source=source)
    if mesh.has_uvs:
        nmap, vmap = rasterize_uv_maps(mesh, normals, config.uv_resolution)
        prep.base_input = stack_base_input(
            mesh.texture, nmap, vmap,
            (config.use_texture_map, config.use_normal_map, config.use_vertex_map),
        )
        r = config.uv_resolution
        prep.taps = uv_sampling_taps(mesh, uv_index, r, r, config.bilinear_graph_sampling)
    elif mesh.colors is not None:
        prep.raw_features = raw_vertex_features(mesh, normals)
    return prep


def load_prepared(path, config: Config) -> PreparedMesh:
    return prepare_mesh(load_mesh(path), config, source=str(path))


@dataclass
class Representation:
    f_mesh: Tensor
    patches_per_view: dict


class QualityModel(Module):
    def __init__(self, config: Config, seed: int | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed if seed is None else seed)
        c = config
        self.base_encoder = BaseEncoder(rng, c.c1) if c.use_base_encoder else None
        self.gcn = make_gcn(rng, c.graph_in_channels, [c.c2] * c.gcn_layers, c.gcn_neighbor_gain) if c.use_gcn else []
        ch = c.feature_channels
        self.model_encoder = ModelPatchEncoder(rng, ch, c.d) if c.use_fm else None
        self.texture_encoder = TexturePatchEncoder(rng, c.d) if c.use_ft else None
        if c.use_fm and c.use_ft:
            self.fusion = [make_fusion(rng, c.fusion, c.d, c.ffn_mult) for _ in range(5)]
            width = fusion_width(c.fusion, c.d)
        else:
            self.fusion = [None] * 5
            width = c.d
        self.scale_pool = [Linear(rng, width, c.d) for _ in range(5)] if (c.use_fm or c.use_ft) else []
        self.direct_embed = DirectEmbed(rng, ch, c.d) if c.use_fhat else None
        self.head = [Linear(rng, c.representation_width, c.head_hidden), Linear(rng, c.head_hidden, 1)]
        # zero difference means a pristine copy: start at the top of the MOS scale
        self.head[1].bias.data[...] = c.head_bias
        for name, p in self.named_parameters():
            p.name = name

    # -- parameters ---------------------------------------------------------
    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if key == "config":
                continue
            yield from _walk(value, f"{prefix}{key}")

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(n, p.data) for n, p in self.named_parameters()]

    def save(self, path) -> None:
        save_parameters(path, self.state())

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(values))
        extra = sorted(set(values) - set(mine))
        if missing or extra:
            raise ValueError(f"parameter set mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in mine.items():
            if values[name].shape != p.shape:
                raise ValueError(f"parameter {name}: shape {values[name].shape} != expected {p.shape}")
            p.data = values[name].astype(p.data.dtype)

    @classmethod
    def from_file(cls, path, config: Config) -> "QualityModel":
        model = cls(config)
        model.load_state(load_parameters(path))
        return model

    # -- model branch -------------------------------------------------------
    def graph_features(self, prep: PreparedMesh) -> Tensor:
        c = self.config
        if prep.mesh.has_uvs:
            if self.base_encoder is not None:
                fmap = self.base_encoder(prep.base_input)
            else:
                fmap = prep.base_input
            graph = init_graph(fmap, prep.mesh, prep.uv_index, prep.edges, taps=prep.taps)
        elif prep.raw_features is not None:
            if c.use_base_encoder:
                raise MeshError("vertex-colour mesh: set use_base_encoder = false to initialise "
                                "the graph from raw vertex values")
            graph = FeatureGraph(Tensor(prep.raw_features), prep.edges)
        else:
            raise MeshError("mesh has neither a uv texture nor vertex colours")
        if self.gcn:
            graph = gcn_forward(graph, self.gcn)
        return graph.features

    # -- projections --------------------------------------------------------
    def project(self, prep: PreparedMesh, cameras: list[Camera], features: Tensor,
                cache_color: bool = False) -> tuple[list[Projection], list[Projection]]:
        c = self.config
        lighting = c.lighting()
        colors, feats = [], []
        for cam in cameras:
            ccam = cam.with_resolution(c.color_resolution)
            key = (tuple(np.round(ccam.position, 12)), tuple(ccam.up), ccam.fov, ccam.resolution)
            proj = prep.color_cache.get(key) if cache_color else None
            if proj is None:
                proj = render_color(prep.mesh, ccam, lighting, normals=prep.normals)
                proj.fragments = None
                if cache_color:
                    prep.color_cache[key] = proj
            colors.append(proj)
            fcam = cam.with_resolution(c.feature_resolution)
            frags = rasterize_fragments(prep.mesh.vertices, prep.mesh.faces, fcam)
            feats.append(Projection(splat_features(frags, prep.mesh.faces, features), frags.mask,
                                    cam.index, "feature", frags))
        return colors, feats

    # -- quality encoder ----------------------------------------------------
    def encode(self, colors: list[Projection], feats: list[Projection], flip=(False, False)) -> Representation:
        c = self.config
        pairs = select_patches(colors, feats, c.coverage_threshold, c.color_patch, c.feature_patch)
        if not pairs:
            raise ValueError("no valid patch pairs: lower the coverage threshold or check the mesh")
        per_view = {}
        model_batches = []
        for proj in feats:
            cells = [(p.row, p.col) for p in pairs if p.view == proj.camera_index]
            per_view[proj.camera_index] = len(cells)
            if cells:
                model_batches.append(feature_patch_batch(proj.image, cells, c.feature_patch))
        model_patches = model_batches[0] if len(model_batches) == 1 else ad.concat(model_batches, axis=0)
        texture_patches = Tensor(np.stack([p.texture for p in pairs]))
        if flip[0]:
            model_patches, texture_patches = ad.flip(model_patches, 3), ad.flip(texture_patches, 3)
        if flip[1]:
            model_patches, texture_patches = ad.flip(model_patches, 2), ad.flip(texture_patches, 2)
        vectors = self.pair_vectors(model_patches, texture_patches)
        return Representation(aggregate(vectors, [p.key for p in pairs]), per_view)

    def pair_vectors(self, model_patches: Tensor, texture_patches: Tensor) -> Tensor:
        """Per-pair ``(P, width)`` concatenation of the five scale vectors and the direct embed."""
        c = self.config
        parts = []
        fm = self.model_encoder(model_patches) if c.use_fm else None
        ft = self.texture_encoder(texture_patches) if c.use_ft else None
        for s in range(len(self.scale_pool)):
            if fm is not None and ft is not None:
                v = fuse(c.fusion, self.fusion[s], fm[s], ft[s])
            else:
                v = ad.mean((fm or ft)[s], axis=(2, 3))
            parts.append(self.scale_pool[s](v))
        if self.direct_embed is not None:
            parts.append(self.direct_embed(model_patches))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    def represent(self, prep: PreparedMesh, cameras: list[Camera] | None = None,
                  flip=(False, False), cache_color: bool = False) -> Representation:
        c = self.config
        if cameras is None:
            cameras = make_camera_rig(c.camera_distance, c.camera_fov, c.color_resolution)
        features = self.graph_features(prep)
        colors, feats = self.project(prep, cameras, features, cache_color=cache_color)
        return self.encode(colors, feats, flip)

    # -- regression ---------------------------------------------------------
    def regress(self, diff: Tensor) -> Tensor:
        h = ad.relu(self.head[0](ad.reshape(diff, (1, diff.shape[0]))))
        return ad.reshape(self.head[1](h), (1,))

    def fr_score(self, f_ref: Tensor, f_dis: Tensor) -> Tensor:
        return fr_score(f_ref, f_dis, self)

    def constant_score(self) -> float:
        """Prediction for identical reference and distorted representations."""
        return float(self.regress(Tensor(np.zeros(self.config.representation_width))).data[0])


def fr_score(f_ref: Tensor, f_dis: Tensor, model: QualityModel) -> Tensor:
    """``q = head(|f_ref - f_dis|)`` as a ``(1,)`` array."""
    if f_ref.shape != f_dis.shape:
        raise ValueError(f"representation widths differ: {f_ref.shape} vs {f_dis.shape}")
    return model.regress(ad.abs_(ad.sub(f_ref, f_dis)))
