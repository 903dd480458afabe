"""Feature graph over mesh vertices: base encoder, UV sampling initialisation and the
inverse-distance weighted graph convolution ``f'_i = W1 f_i + W2 sum_j e_ji f_j``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Conv2d, Module, Tensor
from .autodiff.nn import he_normal
from .mesh import Mesh, MeshError, WeightedEdges
from .uvmaps import uv_to_pixel

log = logging.getLogger(__name__)


@dataclass
class FeatureGraph:
    features: Tensor  # (V, C)
    edges: WeightedEdges

    def __post_init__(self):
        if len(self.edges) and self.edges.src.max() >= self.features.shape[0]:
            raise ValueError("edge references a vertex beyond the feature rows")


class BaseEncoder(Module):
    """Stride-1 convolution stack, 9 input channels -> ``c_out``, spatial size preserved."""

    def __init__(self, rng, c_out: int = 16, hidden: int = 16):
        self.conv1 = Conv2d(rng, 9, hidden, 3)
        self.conv2 = Conv2d(rng, hidden, c_out, 3)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if x.shape[-3] != 9:
            raise ValueError(f"base encoder expects 9 input channels, got {x.shape[-3]}")
        if squeeze:
            x = ad.reshape(x, (1,) + x.shape)
        y = self.conv2(ad.relu(self.conv1(x)))
        return ad.reshape(y, y.shape[1:]) if squeeze else y


def _bilinear_taps(uv, h: int, w: int):
    x = np.clip(uv[0] * w - 0.5, 0, w - 1)
    y = np.clip((1.0 - uv[1]) * h - 0.5, 0, h - 1)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    wts = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    return idx, wts


def uv_sampling_taps(mesh: Mesh, uv_index: list[np.ndarray], h: int, w: int,
                     bilinear: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Flat pixel indices ``(V,K)`` and weights ``(V,K)`` realising per-vertex uv sampling.

    Weights average over a vertex's uv set; vertices without uvs get all-zero weights.
    """
    taps_idx, taps_w = [], []
    empty = 0
    for vi in range(mesh.n_vertices):
        uvs = uv_index[vi]
        idx, wts = [], []
        for t in uvs:
            if bilinear:
                i, ww = _bilinear_taps(mesh.uvs[t], h, w)
            else:
                r, col = uv_to_pixel(mesh.uvs[t], h, w)
                i, ww = [r * w + col], [1.0]
            idx.extend(i)
            wts.extend(x / len(uvs) for x in ww)
        if not len(uvs):
            empty += 1
        taps_idx.append(idx)
        taps_w.append(wts)
    if empty:
        log.warning("%d vertices have no uv mapping; their initial features are zero", empty)
    k = max(1, max(len(i) for i in taps_idx))
    idx_arr = np.zeros((mesh.n_vertices, k), dtype=np.int64)
    w_arr = np.zeros((mesh.n_vertices, k))
    for vi, (i, ww) in enumerate(zip(taps_idx, taps_w)):
        idx_arr[vi, :len(i)] = i
        w_arr[vi, :len(ww)] = ww
    return idx_arr, w_arr


def init_graph(feature_map: Tensor, mesh: Mesh, uv_index: list[np.ndarray],
               edges: WeightedEdges, bilinear: bool = False, taps=None) -> FeatureGraph:
    """Sample a feature vector per vertex at its uv location(s), averaging over multiple uvs."""
    if not len(mesh.uvs):
        raise MeshError("mesh has no uv coordinates; use init_graph_raw")
    c, h, w = feature_map.shape
    idx_arr, w_arr = taps if taps is not None else uv_sampling_taps(mesh, uv_index, h, w, bilinear)
    flat = ad.reshape(ad.transpose(feature_map, (1, 2, 0)), (h * w, c))
    return FeatureGraph(ad.weighted_gather(flat, idx_arr, w_arr), edges)


def raw_vertex_features(mesh: Mesh, normals: np.ndarray) -> np.ndarray:
    if mesh.colors is None:
        raise MeshError("raw graph initialisation needs per-vertex colours")
    return np.concatenate([mesh.colors, normals, mesh.vertices], axis=1)


def init_graph_raw(mesh: Mesh, normals: np.ndarray, edges: WeightedEdges) -> FeatureGraph:
    """Bypass the base encoder: per-vertex ``[rgb, normal, position]`` (9 channels)."""
    return FeatureGraph(Tensor(raw_vertex_features(mesh, normals)), edges)


class GCNLayer(Module):
    """``theta1`` and ``theta2`` are ``(C_out, C_in)``; no bias, no degree normalisation."""

    def __init__(self, rng, c_in: int, c_out: int, activation: bool = True,
                 neighbor_gain: float = 1.0):
        self.activation = activation
        self.theta1 = he_normal(rng, (c_out, c_in), c_in)
        self.theta2 = he_normal(rng, (c_out, c_in), c_in, gain=neighbor_gain)

    def forward(self, graph: FeatureGraph) -> FeatureGraph:
        f = graph.features
        e = graph.edges
        n, c = f.shape
        self_term = ad.matmul(f, ad.transpose(self.theta1))
        if len(e):
            weights = Tensor(np.repeat(e.weight[:, None], c, axis=1).astype(f.dtype))
            msgs = ad.mul(ad.gather_rows(f, e.src), weights)
            agg = ad.scatter_add_rows(msgs, e.dst, n)
            out = ad.add(self_term, ad.matmul(agg, ad.transpose(self.theta2)))
        else:
            out = self_term
        if self.activation:
            out = ad.relu(out)
        return FeatureGraph(out, e)


def make_gcn(rng, c_in: int, widths: list[int], neighbor_gain: float = 1.0) -> list[GCNLayer]:
    layers = []
    for i, c_out in enumerate(widths):
        layers.append(GCNLayer(rng, c_in, c_out, activation=i < len(widths) - 1,
                               neighbor_gain=neighbor_gain))
        c_in = c_out
    return layers


def gcn_forward(graph: FeatureGraph, layers: list[GCNLayer]) -> FeatureGraph:
    for layer in layers:
        graph = layer(graph)
    return graph
