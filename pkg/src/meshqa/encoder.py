"""Quality encoder: aligned patch selection, five-scale patch encoders, role-swapped
cross-attention and aggregation into the mesh quality representation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Conv2d, LayerNorm, Linear, Module, Tensor

FUSION_MODES = ("cross_attention", "add", "weighted_add", "concat", "multiply", "self_attention_concat")


@dataclass(frozen=True)
class PatchPair:
    view: int
    row: int
    col: int
    texture: np.ndarray  # (3, p, p) colour patch
    model: np.ndarray  # (C, q, q) feature patch values (the differentiable copy is built separately)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.view, self.row, self.col)


def coverage_counts(mask: np.ndarray, patch: int) -> np.ndarray:
    """Covered-pixel count per non-overlapping ``patch x patch`` cell, ``(g, g)``."""
    g = mask.shape[0] // patch
    m = mask[:g * patch, :g * patch].reshape(g, patch, g, patch)
    return m.sum(axis=(1, 3))


def keep_cells(mask: np.ndarray, patch: int, threshold: float = 0.1) -> np.ndarray:
    """Boolean ``(g, g)``: cells with coverage fraction >= threshold (exact rational compare)."""
    frac = Fraction(str(threshold))
    counts = coverage_counts(mask, patch)
    return counts * frac.denominator >= frac.numerator * patch * patch


def select_patches(color_projs, feature_projs, threshold: float = 0.1,
                   color_patch: int = 64, feature_patch: int = 16) -> list[PatchPair]:
    """Aligned patch pairs per view, kept when the colour patch is at least ``threshold`` covered.

    Pairs come out in canonical (view, row, col) order.
    """
    pairs = []
    for cp, fp in zip(color_projs, feature_projs):
        cimg = np.asarray(cp.image)
        fimg = fp.image.data if isinstance(fp.image, Tensor) else np.asarray(fp.image)
        g = cimg.shape[1] // color_patch
        if fimg.shape[1] // feature_patch != g:
            raise ValueError("colour and feature projections give different patch grids")
        keep = keep_cells(cp.mask, color_patch, threshold)
        for r, c in zip(*np.nonzero(keep)):
            pairs.append(PatchPair(
                cp.camera_index, int(r), int(c),
                cimg[:, r * color_patch:(r + 1) * color_patch, c * color_patch:(c + 1) * color_patch],
                fimg[:, r * feature_patch:(r + 1) * feature_patch, c * feature_patch:(c + 1) * feature_patch],
            ))
    return pairs


def feature_patch_batch(image: Tensor, cells: list[tuple[int, int]], patch: int) -> Tensor:
    """Differentiable ``(P, C, patch, patch)`` crops of a ``(C,H,W)`` feature image."""
    c, h, w = image.shape
    g = h // patch
    grid = ad.reshape(image, (c, g, patch, g, patch))
    grid = ad.reshape(ad.transpose(grid, (1, 3, 0, 2, 4)), (g * g, c, patch, patch))
    return ad.gather_rows(grid, [r * g + col for r, col in cells])


# ---------------------------------------------------------------------------
# patch encoders
# ---------------------------------------------------------------------------
class _Pyramid(Module):
    """Stage 1 keeps resolution, stages 2-5 halve it; each stage is projected to width d."""

    def __init__(self, rng, c_in: int, widths, d: int):
        self.stages = []
        for i, w in enumerate(widths):
            self.stages.append(Conv2d(rng, c_in, w, 3, stride=1 if i == 0 else 2, padding=1))
            c_in = w
        self.proj = [Conv2d(rng, w, d, 1, padding=0) for w in widths]

    def forward(self, x: Tensor) -> list[Tensor]:
        out = []
        for stage, proj in zip(self.stages, self.proj):
            x = ad.relu(stage(x))
            out.append(proj(x))
        return out


class ModelPatchEncoder(Module):
    """Feature patches ``(P,C,16,16)`` -> five maps of width d at 16, 8, 4, 2, 1."""

    def __init__(self, rng, c_in: int, d: int = 32, widths=(16, 32, 32, 64, 64)):
        self.c_in = c_in
        self.pyramid = _Pyramid(rng, c_in, widths, d)

    def forward(self, patches: Tensor) -> list[Tensor]:
        if patches.ndim != 4 or patches.shape[1] != self.c_in:
            raise ValueError(f"model patches must be (P,{self.c_in},H,W), got {patches.shape}")
        return self.pyramid(patches)


class TexturePatchEncoder(Module):
    """Colour patches ``(P,3,64,64)``; a stride-4 stem aligns scale 1 with the model branch."""

    def __init__(self, rng, d: int = 32, stem: int = 16, widths=(16, 32, 32, 64, 64)):
        self.stem = Conv2d(rng, 3, stem, 4, stride=4, padding=0)
        self.pyramid = _Pyramid(rng, stem, widths, d)

    def forward(self, patches: Tensor) -> list[Tensor]:
        if patches.ndim != 4 or patches.shape[1] != 3:
            raise ValueError(f"texture patches must be (P,3,H,W), got {patches.shape}")
        return self.pyramid(ad.relu(self.stem(patches)))


class DirectEmbed(Module):
    """Small conv block on model patches followed by global mean pooling to width d."""

    def __init__(self, rng, c_in: int, d: int = 32, hidden: int = 16):
        self.conv1 = Conv2d(rng, c_in, hidden, 3)
        self.conv2 = Conv2d(rng, hidden, 2 * hidden, 3, stride=2, padding=1)
        self.proj = Conv2d(rng, 2 * hidden, d, 1, padding=0)

    def forward(self, patches: Tensor) -> Tensor:
        x = ad.relu(self.conv1(patches))
        x = ad.relu(self.conv2(x))
        return ad.mean(self.proj(x), axis=(2, 3))


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------
def tokens(x: Tensor) -> Tensor:
    """``(P,d,h,w)`` -> ``(P,h*w,d)``."""
    p, d, h, w = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (p, h * w, d))


class TransformerBlock(Module):
    """Single-head attention (queries from one stream, keys/values from another),
    residual + LayerNorm, feed-forward, residual + LayerNorm."""

    def __init__(self, rng, d: int, ffn_mult: int = 2):
        self.d = d
        self.q = Linear(rng, d, d, gain=1 / math.sqrt(2))
        self.k = Linear(rng, d, d, gain=1 / math.sqrt(2))
        self.v = Linear(rng, d, d, gain=1 / math.sqrt(2))
        self.norm1 = LayerNorm(d)
        self.ff1 = Linear(rng, d, ffn_mult * d)
        self.ff2 = Linear(rng, ffn_mult * d, d, gain=1 / math.sqrt(2))
        self.norm2 = LayerNorm(d)

    def attention(self, query: Tensor, context: Tensor) -> Tensor:
        q, k, v = self.q(query), self.k(context), self.v(context)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.d))
        return ad.matmul(ad.softmax(scores, axis=-1), v)

    def forward(self, query: Tensor, context: Tensor) -> Tensor:
        h = self.norm1(ad.add(query, self.attention(query, context)))
        ff = self.ff2(ad.relu(self.ff1(h)))
        return self.norm2(ad.add(h, ff))


class CrossAttention(Module):
    """Two transformer blocks with swapped query / key-value roles; output ``(P, 2d)``."""

    def __init__(self, rng, d: int, ffn_mult: int = 2):
        self.model_queries = TransformerBlock(rng, d, ffn_mult)
        self.texture_queries = TransformerBlock(rng, d, ffn_mult)

    def forward(self, f_m: Tensor, f_t: Tensor) -> Tensor:
        if f_m.shape != f_t.shape:
            raise ValueError(f"cross-attention inputs differ in shape: {f_m.shape} vs {f_t.shape}")
        tm, tt = tokens(f_m), tokens(f_t)
        a = ad.mean(self.model_queries(tm, tt), axis=1)
        b = ad.mean(self.texture_queries(tt, tm), axis=1)
        return ad.concat([a, b], axis=1)


class SelfAttentionConcat(Module):
    def __init__(self, rng, d: int, ffn_mult: int = 2):
        self.model_block = TransformerBlock(rng, d, ffn_mult)
        self.texture_block = TransformerBlock(rng, d, ffn_mult)

    def forward(self, f_m: Tensor, f_t: Tensor) -> Tensor:
        tm, tt = tokens(f_m), tokens(f_t)
        a = ad.mean(self.model_block(tm, tm), axis=1)
        b = ad.mean(self.texture_block(tt, tt), axis=1)
        return ad.concat([a, b], axis=1)


class WeightedAdd(Module):
    """``f_m + w * f_t`` with ``w`` predicted by a 1x1 conv on both streams, squashed to (0,1)."""

    def __init__(self, rng, d: int):
        self.gate = Conv2d(rng, 2 * d, d, 1, padding=0)

    def forward(self, f_m: Tensor, f_t: Tensor) -> Tensor:
        w = ad.sigmoid(self.gate(ad.concat([f_m, f_t], axis=1)))
        return ad.mean(ad.add(f_m, ad.mul(w, f_t)), axis=(2, 3))


def fusion_width(mode: str, d: int) -> int:
    return 2 * d if mode in ("cross_attention", "concat", "self_attention_concat") else d


def make_fusion(rng, mode: str, d: int, ffn_mult: int = 2):
    if mode == "cross_attention":
        return CrossAttention(rng, d, ffn_mult)
    if mode == "self_attention_concat":
        return SelfAttentionConcat(rng, d, ffn_mult)
    if mode == "weighted_add":
        return WeightedAdd(rng, d)
    if mode in ("add", "concat", "multiply"):
        return None
    raise ValueError(f"unknown fusion mode {mode!r}; choose from {FUSION_MODES}")


def fuse(mode: str, block, f_m: Tensor, f_t: Tensor) -> Tensor:
    if block is not None:
        return block(f_m, f_t)
    if mode == "add":
        return ad.mean(ad.add(f_m, f_t), axis=(2, 3))
    if mode == "multiply":
        return ad.mean(ad.mul(f_m, f_t), axis=(2, 3))
    if mode == "concat":
        return ad.mean(ad.concat([f_m, f_t], axis=1), axis=(2, 3))
    raise ValueError(f"unknown fusion mode {mode!r}")


def aggregate(pair_vectors: Tensor, keys=None) -> Tensor:
    """Mean over patch pairs of their concatenated ``(P, width)`` vectors.

    With ``keys`` the rows are first put in sorted-key order so the summation order,
    and therefore the bits of the result, do not depend on the input order.
    """
    if pair_vectors.shape[0] == 0:
        raise ValueError("no valid patch pairs: lower the coverage threshold or check the mesh")
    if keys is not None:
        order = sorted(range(len(keys)), key=lambda i: keys[i])
        if order != list(range(len(keys))):
            pair_vectors = ad.gather_rows(pair_vectors, order)
    return ad.mean(pair_vectors, axis=0)
