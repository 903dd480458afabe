"""Oracle suites: finite-difference gradients, brute-force rasterization, loss fixtures."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, default_dtype, grad_check
from .config import Config
from .encoder import CrossAttention, DirectEmbed, ModelPatchEncoder, TexturePatchEncoder, TransformerBlock
from .graph import BaseEncoder, FeatureGraph, GCNLayer
from .losses import mae_loss, rank_loss, total_loss
from .mesh import Mesh, WeightedEdges
from .model import QualityModel
from .raster import edge_function
from .render import NEAR, Fragments, make_camera_rig, rasterize_fragments, splat_features
from .uvmaps import rasterize_uv_fragments, uv_to_screen

SUITES = ("grad", "raster", "loss")


@dataclass
class Check:
    name: str
    passed: bool
    max_error: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<40s} max_err={self.max_error:.3e}{extra}"


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        head = f"[{self.suite}] {sum(c.passed for c in self.checks)}/{len(self.checks)} passed in {self.seconds:.1f}s"
        return [head] + [c.line() for c in self.checks]


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------
def _away_from_zero(rng, shape, lo=0.1):
    # keeps relu/abs/clamp kinks out of the finite-difference stencil
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


def _leaf(rng, *shape, away=False):
    data = _away_from_zero(rng, shape) if away else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _op_cases(rng):
    """``(name, fn, inputs)`` for every primitive op."""
    t = lambda *s, **k: _leaf(rng, *s, **k)  # noqa: E731
    idx = rng.integers(0, 5, size=7)
    taps = rng.integers(0, 6, size=(4, 3))
    tap_w = rng.uniform(size=(4, 3))
    cases = [
        ("add", ad.add, [t(3, 4), t(3, 4)]),
        ("sub", ad.sub, [t(3, 4), t(3, 4)]),
        ("mul", ad.mul, [t(3, 4), t(3, 4)]),
        ("scale", lambda a: ad.scale(a, -1.7), [t(3, 4)]),
        ("abs", ad.abs_, [t(3, 4, away=True)]),
        ("relu", ad.relu, [t(3, 4, away=True)]),
        ("clamp_min", lambda a: ad.clamp_min(a, 0.05), [Tensor(_away_from_zero(rng, (3, 4)) + 0.05, requires_grad=True)]),
        ("sigmoid", ad.sigmoid, [t(3, 4)]),
        ("matmul", ad.matmul, [t(3, 4), t(4, 5)]),
        ("matmul_batched", ad.matmul, [t(2, 3, 4), t(2, 4, 5)]),
        ("linear", ad.linear, [t(3, 4), t(4, 5), t(5)]),
        ("sum", lambda a: ad.sum_(a, axis=1), [t(3, 4)]),
        ("mean", lambda a: ad.mean(a, axis=(0, 2)), [t(2, 3, 4)]),
        ("softmax", lambda a: ad.softmax(a, axis=-1), [t(3, 5)]),
        ("layer_norm", ad.layer_norm, [t(4, 6), t(6), t(6)]),
        ("reshape", lambda a: ad.reshape(a, (6, 2)), [t(3, 4)]),
        ("transpose", lambda a: ad.transpose(a, (1, 2, 0)), [t(2, 3, 4)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [t(3, 2), t(3, 4)]),
        ("flip", lambda a: ad.flip(a, 2), [t(2, 3, 4)]),
        ("gather_rows", lambda a: ad.gather_rows(a, idx), [t(5, 3)]),
        ("scatter_add_rows", lambda a: ad.scatter_add_rows(a, idx, 5), [t(7, 3)]),
        ("weighted_gather", lambda a: ad.weighted_gather(a, taps, tap_w), [t(6, 3)]),
        ("conv2d_s1", lambda x, w, b: ad.conv2d(x, w, b, stride=1, padding=1), [t(2, 3, 6, 6), t(4, 3, 3, 3), t(4)]),
        ("conv2d_s2", lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding=1), [t(1, 2, 7, 7), t(3, 2, 3, 3), t(3)]),
        ("conv2d_s4", lambda x, w: ad.conv2d(x, w, stride=4), [t(1, 3, 8, 8), t(2, 3, 4, 4)]),
        ("max_pool2d", lambda x: ad.max_pool2d(x, 2), [t(2, 2, 6, 6)]),
        ("resize_bilinear", lambda x: ad.resize_bilinear(x, (4, 5)), [t(1, 2, 7, 6)]),
    ]
    return cases


def _tiny_mesh(rng) -> Mesh:
    v = rng.uniform(-0.5, 0.5, size=(8, 3))
    f = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7], [1, 5, 6], [2, 3, 7]])
    return Mesh(v, f)


def _block_cases(rng):
    """``(name, fn, inputs)`` for every composite block; parameters are checked too."""
    r = np.random.default_rng(rng.integers(1 << 31))
    cases = []

    base = BaseEncoder(r, c_out=4, hidden=4)
    cases.append(("base_encoder", lambda x, *p: base(x), [_leaf(rng, 9, 8, 8)] + base.parameters()))

    v = 6
    edges = WeightedEdges(np.array([0, 1, 1, 2, 3, 4, 5, 0]), np.array([1, 0, 2, 1, 4, 3, 0, 5]),
                          rng.uniform(0.5, 3.0, size=8))
    gcn = GCNLayer(r, 4, 3, activation=True, neighbor_gain=1.0)
    cases.append(("gcn_layer", lambda f, *p: gcn(FeatureGraph(f, edges)).features,
                  [_leaf(rng, v, 4)] + gcn.parameters()))

    me = ModelPatchEncoder(r, 3, d=4, widths=(4, 4, 4, 4, 4))
    cases.append(("model_patch_encoder", lambda x, *p: me(x), [_leaf(rng, 2, 3, 16, 16)] + me.parameters()))

    te = TexturePatchEncoder(r, d=4, stem=4, widths=(4, 4, 4, 4, 4))
    cases.append(("texture_patch_encoder", lambda x, *p: te(x), [_leaf(rng, 1, 3, 64, 64)] + te.parameters()))

    ca = CrossAttention(r, 4)
    cases.append(("cross_attention", lambda a, b, *p: ca(a, b),
                  [_leaf(rng, 2, 4, 2, 2), _leaf(rng, 2, 4, 2, 2)] + ca.parameters()))

    tb = TransformerBlock(r, 4)
    cases.append(("transformer_block", lambda a, b, *p: tb(a, b),
                  [_leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)] + tb.parameters()))

    de = DirectEmbed(r, 3, d=4, hidden=4)
    cases.append(("direct_embed", lambda x, *p: de(x), [_leaf(rng, 2, 3, 8, 8)] + de.parameters()))

    head = QualityModel(Config(d=4, head_hidden=8, c1=4, c2=4), seed=int(r.integers(1 << 31)))
    width = head.config.representation_width
    cases.append(("regression_head", lambda x, *p: head.regress(x),
                  [_leaf(rng, width)] + [p for n, p in head.named_parameters() if n.startswith("head")]))
    cases.append(("fr_score", lambda a, b, *p: head.fr_score(a, b),
                  [_leaf(rng, width), _leaf(rng, width)] + [p for n, p in head.named_parameters() if n.startswith("head")]))

    mesh = _tiny_mesh(rng)
    cam = make_camera_rig(1.5, 60.0, 24)[int(rng.integers(6))]
    frags = rasterize_fragments(mesh.vertices, mesh.faces, cam)
    cases.append(("feature_renderer", lambda f: splat_features(frags, mesh.faces, f), [_leaf(rng, 8, 3)]))
    return cases


def run_grad_suite(seeds=range(5), tol: float = 1e-4) -> SuiteReport:
    report = SuiteReport("grad")
    start = time.perf_counter()
    with default_dtype(np.float64):
        results: dict[str, list[float]] = {}
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for group, builder, budget in (("op", _op_cases, 64), ("block", _block_cases, 12)):
                for name, fn, inputs in builder(rng):
                    proj_rng = np.random.default_rng(seed + 1000)
                    weights = {}

                    def scalar(*args, fn=fn, weights=weights, proj_rng=proj_rng):
                        out = fn(*args)
                        outs = out if isinstance(out, (list, tuple)) else [out]
                        if not weights:
                            weights["w"] = [Tensor(proj_rng.normal(size=o.shape)) for o in outs]
                        total = None
                        for o, w in zip(outs, weights["w"]):
                            term = ad.sum_(ad.mul(o, w))
                            total = term if total is None else ad.add(total, term)
                        return total

                    rep = grad_check(scalar, inputs, tol=tol, max_entries=budget,
                                     rng=np.random.default_rng(seed))
                    results.setdefault(f"{group}:{name}", []).append(rep.max_error)
    for name, errs in results.items():
        worst = max(errs)
        report.checks.append(Check(name, bool(np.isfinite(worst) and worst < tol), worst,
                                   f"seeds={len(errs)}"))
    report.seconds = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# rasterization oracles
# ---------------------------------------------------------------------------
def oracle_fragments(vertices: np.ndarray, faces: np.ndarray, camera) -> Fragments:
    """Every pixel tests every face; nearest strictly-closer hit wins, so ties go to the first face.

    Coverage uses the shared edge test. Depth and weights come from intersecting the pixel's
    view ray with the triangle in camera space, independent of screen-space interpolation.
    """
    n = camera.resolution
    sx, sy, z = camera.project(np.asarray(vertices, float))
    r, u, f = camera.basis()
    rel = np.asarray(vertices, float) - np.asarray(camera.position, float)
    cam_pts = np.stack([rel @ r, rel @ u, rel @ f], axis=1)
    t = math.tan(math.radians(camera.fov) / 2)
    py, px = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5, indexing="ij")
    rays = np.stack([(px / (n / 2.0) - 1.0) * t, (1.0 - py / (n / 2.0)) * t, np.ones_like(px)], axis=-1)
    zbuf = np.full((n, n), np.inf)
    face_id = np.full((n, n), -1, dtype=np.int64)
    bary = np.zeros((n, n, 3))
    for fi, (a, b, c) in enumerate(faces):
        if min(z[a], z[b], z[c]) <= NEAR:
            continue
        area = edge_function(sx[a], sy[a], sx[b], sy[b], sx[c], sy[c])
        if area == 0 or not np.isfinite(area):
            continue
        w0 = edge_function(sx[b], sy[b], sx[c], sy[c], px, py)
        w1 = edge_function(sx[c], sy[c], sx[a], sy[a], px, py)
        w2 = edge_function(sx[a], sy[a], sx[b], sy[b], px, py)
        sign = 1.0 if area > 0 else -1.0
        inside = (sign * w0 >= 0) & (sign * w1 >= 0) & (sign * w2 >= 0)
        if not inside.any():
            continue
        va, vb, vc = cam_pts[a], cam_pts[b], cam_pts[c]
        normal = np.cross(vb - va, vc - va)
        d = rays[inside]
        s = (normal @ va) / (d @ normal)
        hit = d * s[:, None]
        nn = normal @ normal
        weights = np.stack([np.cross(vb - hit, vc - hit) @ normal,
                            np.cross(vc - hit, va - hit) @ normal,
                            np.cross(va - hit, vb - hit) @ normal], axis=1) / nn
        rows, cols = np.nonzero(inside)
        closer = s < zbuf[rows, cols]
        rows, cols = rows[closer], cols[closer]
        zbuf[rows, cols] = s[closer]
        face_id[rows, cols] = fi
        bary[rows, cols] = weights[closer]
    return Fragments(face_id, bary, zbuf)


def oracle_uv_fragments(mesh: Mesh, resolution: int):
    """All faces tested at every texel centre; the highest covering face index wins.

    Weights come from solving the 2x2 barycentric system in uv units.
    """
    h = w = resolution
    sx, sy = uv_to_screen(mesh.uvs, h, w)
    py, px = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    texel_uv = np.stack([px / w, 1.0 - py / h], axis=-1)
    face_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    for f, (a, b, c) in enumerate(mesh.face_uvs):
        area = edge_function(sx[a], sy[a], sx[b], sy[b], sx[c], sy[c])
        if area == 0:
            continue
        w0 = edge_function(sx[b], sy[b], sx[c], sy[c], px, py)
        w1 = edge_function(sx[c], sy[c], sx[a], sy[a], px, py)
        w2 = edge_function(sx[a], sy[a], sx[b], sy[b], px, py)
        sign = 1.0 if area > 0 else -1.0
        inside = (sign * w0 >= 0) & (sign * w1 >= 0) & (sign * w2 >= 0)
        if not inside.any():
            continue
        ua, ub, uc = mesh.uvs[a], mesh.uvs[b], mesh.uvs[c]
        lam = np.linalg.solve(np.stack([ub - ua, uc - ua], axis=1), (texel_uv[inside] - ua).T).T
        face_id[inside] = f
        bary[inside] = np.stack([1.0 - lam[:, 0] - lam[:, 1], lam[:, 0], lam[:, 1]], axis=1)
    return face_id, bary


def random_mesh(rng, max_faces: int = 100) -> Mesh:
    """Random triangle soup inside the unit cube with a random uv layout."""
    n_faces = int(rng.integers(4, max_faces + 1))
    n_verts = int(rng.integers(4, 2 * n_faces + 4))
    v = rng.uniform(-0.5, 0.5, size=(n_verts, 3))
    faces = np.stack([rng.choice(n_verts, size=3, replace=False) for _ in range(n_faces)])
    uvs = rng.uniform(0.0, 1.0, size=(n_verts, 2))
    return Mesh(v, faces, uvs, faces.copy(), np.zeros((4, 4, 3)))


def _interp(face_id, bary, faces, attrs):
    out = np.zeros(face_id.shape + (attrs.shape[1],))
    m = face_id >= 0
    out[m] = np.einsum("pk,pkc->pc", bary[m], attrs[faces[face_id[m]]])
    return out


def compare_camera_raster(mesh: Mesh, camera, attrs: np.ndarray) -> tuple[bool, float, int, int]:
    """Returns ``(coverage identical, max attribute error, pixels covered, face-id mismatches)``.

    Face ids can legitimately differ where two faces meet the ray at the same depth
    (duplicated or edge-sharing faces); the attribute comparison covers those pixels.
    """
    fast = rasterize_fragments(mesh.vertices, mesh.faces, camera)
    slow = oracle_fragments(mesh.vertices, mesh.faces, camera)
    same = bool(np.array_equal(fast.mask, slow.mask))
    err = float(np.abs(_interp(fast.face, fast.bary, mesh.faces, attrs)
                       - _interp(slow.face, slow.bary, mesh.faces, attrs)).max(initial=0.0))
    return same, err, int(fast.mask.sum()), int((fast.face != slow.face).sum())


def compare_uv_raster(mesh: Mesh, resolution: int, attrs: np.ndarray) -> tuple[bool, float, int]:
    fid, fb = rasterize_uv_fragments(mesh, resolution)
    oid, ob = oracle_uv_fragments(mesh, resolution)
    same = bool(np.array_equal(fid, oid))
    err = float(np.abs(_interp(fid, fb, mesh.faces, attrs) - _interp(oid, ob, mesh.faces, attrs)).max(initial=0.0))
    return same, err, int((fid >= 0).sum())


def run_raster_suite(n_meshes: int = 20, resolutions=(512, 128), uv_resolution: int = 64,
                     seed: int = 0, tol: float = 1e-6) -> SuiteReport:
    report = SuiteReport("raster")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    cam_same, cam_err, cam_px, cam_ties, uv_same, uv_err = True, 0.0, 0, 0, True, 0.0
    for _ in range(n_meshes):
        mesh = random_mesh(rng)
        attrs = rng.normal(size=(mesh.n_vertices, 3))
        for res in resolutions:
            for cam in make_camera_rig(1.5, 60.0, res):
                same, err, px, ties = compare_camera_raster(mesh, cam, attrs)
                cam_same &= same
                cam_err = max(cam_err, err)
                cam_px += px
                cam_ties += ties
        same, err, _ = compare_uv_raster(mesh, uv_resolution, attrs)
        uv_same &= same
        uv_err = max(uv_err, err)
    views = n_meshes * 6 * len(resolutions)
    report.checks.append(Check("camera coverage (exact)", cam_same, 0.0, f"{views} renders, {cam_px} px"))
    report.checks.append(Check("camera interpolation", cam_err < tol, cam_err,
                               f"{cam_ties} px with equal-depth face ties"))
    report.checks.append(Check("uv coverage (exact)", uv_same, 0.0, f"{n_meshes} layouts"))
    report.checks.append(Check("uv interpolation", uv_err < tol, uv_err))
    report.seconds = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# loss fixtures
# ---------------------------------------------------------------------------
def _value(t: Tensor) -> float:
    return float(t.data)


def loss_fixture_checks() -> list[Check]:
    """Hand-evaluated values for MAE, rank hinge and their weighted sum."""
    checks = []
    with default_dtype(np.float64):
        def arr(*v):
            return Tensor(np.array(v, float), requires_grad=True)

        def exact(name, got, want, tol=1e-12):
            checks.append(Check(name, abs(got - want) <= tol, abs(got - want), f"got={got:.12g} want={want}"))

        exact("mae q=t", _value(mae_loss(arr(0.3, 0.6), [0.3, 0.6])), 0.0)
        exact("mae (0.5,0.5) vs (0.8,0.2)", _value(mae_loss(arr(0.5, 0.5), [0.8, 0.2])), 0.3)
        exact("mae single", _value(mae_loss(arr(0.1), [0.9])), 0.8)
        exact("rank ordered with margin", _value(rank_loss(arr(0.9, 0.1), [0.9, 0.1])), 0.0)
        exact("rank inverted fixture", _value(rank_loss(arr(0.2, 0.7), [0.9, 0.1])), 1.3)
        t = np.array([0.9, 0.4, 0.1, 0.65])
        pairwise = np.abs(t[:, None] - t[None, :])[~np.eye(4, dtype=bool)].mean()
        exact("rank constant q", _value(rank_loss(arr(0.5, 0.5, 0.5, 0.5), t)), float(pairwise))
        q, mae, rank = total_loss(arr(0.2, 0.7), [0.9, 0.1], lam=2.0)
        exact("total lambda=2 (mae 0.65, rank 1.3)", _value(q), 0.65 + 2 * 1.3)
        q0, mae0, _ = total_loss(arr(0.5, 0.5), [0.8, 0.2], lam=0.0)
        exact("total lambda=0 equals mae", _value(q0), _value(mae0))

        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(20):
            qv, tv = rng.uniform(size=6), rng.uniform(size=6)
            perm = rng.permutation(6)
            a = _value(rank_loss(Tensor(qv), tv))
            b = _value(rank_loss(Tensor(qv[perm]), tv[perm]))
            worst = max(worst, abs(a - b))
        checks.append(Check("rank permutation invariance", worst < 1e-12, worst))

        worst = 0.0
        for _ in range(20):
            tv = rng.uniform(size=5)
            qv = 2.0 * tv + rng.uniform(-1, 1)  # same order, every gap doubled
            worst = max(worst, _value(rank_loss(Tensor(qv), tv)))
        checks.append(Check("rank zero when ordered with margins", worst == 0.0, worst))

        model = QualityModel(Config(d=4, head_hidden=8, c1=4, c2=4), seed=3)
        head_params = [p for n, p in model.named_parameters() if n.startswith("head")]
        diffs = np.abs(rng.normal(size=(4, model.config.representation_width)))
        targets = rng.uniform(size=4)

        def objective(*_):
            q = ad.concat([model.regress(Tensor(d)) for d in diffs], axis=0)
            return total_loss(q, targets, 1.0)[0]

        rep = grad_check(objective, head_params, tol=1e-4, max_entries=32)
        checks.append(Check("total loss grad wrt head", rep.passed, rep.max_error))
    return checks


def run_loss_suite() -> SuiteReport:
    start = time.perf_counter()
    report = SuiteReport("loss", loss_fixture_checks())
    report.seconds = time.perf_counter() - start
    return report


def run_suite(name: str) -> list[SuiteReport]:
    names = SUITES if name == "all" else (name,)
    runners = {"grad": run_grad_suite, "raster": run_raster_suite, "loss": run_loss_suite}
    if any(n not in runners for n in names):
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [runners[n]() for n in names]


def rank_oracle(x) -> np.ndarray:
    """Average 1-based ranks by explicit counting (ties share the mean position)."""
    x = np.asarray(x, float)
    less = (x[None, :] < x[:, None]).sum(axis=1)
    equal = (x[None, :] == x[:, None]).sum(axis=1)
    return less + (equal + 1) / 2.0


def srcc_oracle(pred, mos) -> float:
    """Spearman's coefficient straight from its definition on average ranks."""
    rp, rm = rank_oracle(pred), rank_oracle(mos)
    rp, rm = rp - rp.mean(), rm - rm.mean()
    return float(np.sum(rp * rm) / math.sqrt(np.sum(rp * rp) * np.sum(rm * rm)))


def pearson_oracle(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = x.size
    num = n * np.sum(x * y) - np.sum(x) * np.sum(y)
    den = math.sqrt(n * np.sum(x * x) - np.sum(x) ** 2) * math.sqrt(n * np.sum(y * y) - np.sum(y) ** 2)
    return float(num / den)
