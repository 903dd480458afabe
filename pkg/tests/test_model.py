import numpy as np
import pytest
from conftest import small_config

from meshqa import autodiff as ad
from meshqa.autodiff import Tensor, default_dtype, grad_check, no_grad
from meshqa.encoder import aggregate, feature_patch_batch, select_patches
from meshqa.mesh import Mesh, MeshError
from meshqa.model import QualityModel, fr_score, prepare_mesh
from meshqa.render import make_camera_rig
from meshqa.synthetic import textured_mesh, texture_blur, vertex_noise


@pytest.fixture(scope="module")
def sphere():
    return textured_mesh("bumpy", seed=2, n_lat=8, n_lon=12, texture_size=64)


@pytest.fixture(scope="module")
def model():
    return QualityModel(small_config(seed=4))


def relabel(mesh: Mesh, perm: np.ndarray) -> Mesh:
    """Same surface with vertex ``i`` of the result being vertex ``perm[i]`` of ``mesh``."""
    inv = np.argsort(perm)
    return Mesh(mesh.vertices[perm], inv[mesh.faces], mesh.uvs, mesh.face_uvs, mesh.texture,
                None if mesh.colors is None else mesh.colors[perm])


def rep(model, mesh, **kw):
    with no_grad():
        return model.represent(prepare_mesh(mesh, model.config), **kw)


def test_representation_width(model, sphere):
    r = rep(model, sphere)
    assert r.f_mesh.shape == (model.config.representation_width,) == (6 * 8,)
    assert sum(r.patches_per_view.values()) > 0
    assert set(r.patches_per_view) == set(range(6))


def test_fr_score_symmetric_exactly(model, sphere):
    a = rep(model, sphere).f_mesh
    b = rep(model, vertex_noise(sphere, 0.03, seed=1)).f_mesh
    assert model.fr_score(a, b).data.tobytes() == model.fr_score(b, a).data.tobytes()


def test_identical_inputs_give_head_of_zero(model, sphere):
    a = rep(model, sphere).f_mesh
    q = float(model.fr_score(a, a).data[0])
    assert q == model.constant_score()
    other = rep(model, texture_blur(sphere, 2.0)).f_mesh
    assert float(model.fr_score(other, other).data[0]) == q


def test_initial_constant_score_is_head_bias():
    m = QualityModel(small_config(head_bias=0.75))
    assert m.constant_score() == pytest.approx(0.75)


def test_fr_score_width_mismatch(model):
    with pytest.raises(ValueError, match="widths differ"):
        fr_score(Tensor(np.zeros(48)), Tensor(np.zeros(40)), model)


def test_vertex_relabeling_leaves_score_unchanged(model, sphere):
    ref = rep(model, sphere).f_mesh
    dis_mesh = vertex_noise(sphere, 0.02, seed=3)
    perm = np.random.default_rng(0).permutation(sphere.n_vertices)
    q = float(model.fr_score(ref, rep(model, dis_mesh).f_mesh).data[0])
    q_perm = float(model.fr_score(rep(model, relabel(sphere, perm)).f_mesh,
                                  rep(model, relabel(dis_mesh, perm)).f_mesh).data[0])
    assert abs(q - q_perm) <= 1e-6


def test_patch_order_does_not_change_representation(model, sphere):
    prep = prepare_mesh(sphere, model.config)
    rig = make_camera_rig(model.config.camera_distance, model.config.camera_fov)
    with no_grad():
        forward = model.represent(prep, rig).f_mesh.data
        backward = model.represent(prep, rig[::-1]).f_mesh.data
    np.testing.assert_allclose(forward, backward, atol=1e-6)


def test_pair_vector_permutation_is_bitwise_invariant(model, sphere):
    prep = prepare_mesh(sphere, model.config)
    rng = np.random.default_rng(1)
    with no_grad():
        feats = model.graph_features(prep)
        colors, fprojs = model.project(prep, make_camera_rig(1.5, 60.0), feats)
        c = model.config
        pairs = select_patches(colors, fprojs, c.coverage_threshold, c.color_patch, c.feature_patch)
        batches = [feature_patch_batch(p.image, [(q.row, q.col) for q in pairs if q.view == p.camera_index],
                                       c.feature_patch) for p in fprojs
                   if any(q.view == p.camera_index for q in pairs)]
        vectors = model.pair_vectors(ad.concat(batches, 0), Tensor(np.stack([q.texture for q in pairs])))
    keys = [q.key for q in pairs]
    base = aggregate(vectors, keys).data
    for _ in range(3):
        perm = rng.permutation(len(keys))
        shuffled = aggregate(Tensor(vectors.data[perm]), [keys[i] for i in perm]).data
        assert shuffled.tobytes() == base.tobytes()


def test_scoring_is_deterministic(model, sphere):
    dis = texture_blur(sphere, 4.0)
    a = model.fr_score(rep(model, sphere).f_mesh, rep(model, dis).f_mesh).data
    b = model.fr_score(rep(model, sphere).f_mesh, rep(model, dis).f_mesh).data
    assert a.tobytes() == b.tobytes()


def test_save_and_load_round_trip(tmp_path, model, sphere):
    path = tmp_path / "w.mqaw"
    model.save(path)
    back = QualityModel.from_file(path, model.config)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2
        assert p1.data.tobytes() == p2.data.tobytes()
    assert rep(back, sphere).f_mesh.data.tobytes() == rep(model, sphere).f_mesh.data.tobytes()


def test_load_rejects_other_widths(tmp_path, model):
    path = tmp_path / "w.mqaw"
    model.save(path)
    with pytest.raises(ValueError, match="shape"):
        QualityModel.from_file(path, small_config(head_hidden=32))
    with pytest.raises(ValueError, match="mismatch"):
        QualityModel.from_file(path, small_config(use_fhat=False))


def test_parameter_names_are_unique(model):
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert all(p.name == n for n, p in model.named_parameters())


def test_vertex_colour_mesh_needs_raw_initialisation(sphere):
    coloured = Mesh(sphere.vertices, sphere.faces, colors=np.random.default_rng(0).uniform(size=(sphere.n_vertices, 3)))
    with pytest.raises(MeshError, match="use_base_encoder"):
        rep(QualityModel(small_config()), coloured)
    m = QualityModel(small_config(use_base_encoder=False))
    q = m.fr_score(rep(m, coloured).f_mesh, rep(m, coloured).f_mesh)
    assert np.isfinite(q.data).all()


@pytest.mark.parametrize("changes", [
    dict(fusion="add"), dict(fusion="weighted_add"), dict(fusion="concat"), dict(fusion="multiply"),
    dict(fusion="self_attention_concat"), dict(use_fhat=False), dict(use_fm=False), dict(use_ft=False),
    dict(use_gcn=False), dict(use_base_encoder=False), dict(use_normal_map=False, use_vertex_map=False),
])
def test_ablations_produce_declared_width(changes, sphere):
    m = QualityModel(small_config(**changes))
    r = rep(m, sphere)
    assert r.f_mesh.shape == (m.config.representation_width,)
    assert np.isfinite(r.f_mesh.data).all()


def test_gradient_reaches_base_encoder(sphere):
    with default_dtype(np.float64):
        m = QualityModel(small_config(seed=1))
        prep = prepare_mesh(sphere, m.config)
        rig = make_camera_rig(1.5, 60.0)[:2]
        w = Tensor(np.random.default_rng(0).normal(size=m.config.representation_width))

        def readout(*_):
            return ad.sum_(ad.mul(m.represent(prep, rig).f_mesh, w))

        out = readout()
        out.backward()
        params = m.base_encoder.parameters()
        assert any(np.abs(p.grad).max() > 0 for p in params)
        m.zero_grad()
        report = grad_check(readout, [m.base_encoder.conv1.weight], max_entries=5,
                            rng=np.random.default_rng(2))
        assert report.passed, report.errors
