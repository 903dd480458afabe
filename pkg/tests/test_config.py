import pytest

from meshqa.config import CONFIG_ENV, Config


def test_defaults():
    c = Config()
    assert (c.batch_size, c.epochs, c.loss_lambda, c.train_views) == (8, 15, 1.0, 2)
    assert (c.lr, c.lr_final, c.weight_decay) == (1e-4, 1e-5, 1e-5)
    assert (c.color_resolution, c.feature_resolution, c.color_patch, c.feature_patch) == (512, 128, 64, 16)
    assert (c.uv_resolution, c.c1, c.c2, c.d) == (256, 16, 16, 32)
    assert c.coverage_threshold == 0.1 and c.camera_distance == 1.5
    assert c.representation_width == 6 * 32


def test_representation_width_follows_ablations():
    assert Config(use_fhat=False).representation_width == 5 * 32
    assert Config(use_fm=False, use_ft=False).representation_width == 32
    assert Config(use_base_encoder=False, use_gcn=False).feature_channels == 9


def test_text_round_trip(tmp_path):
    c = Config(seed=7, deterministic=True, fusion="concat", light_direction="0,0,1", lr=3e-4)
    path = tmp_path / "c.txt"
    c.save(path)
    assert Config.load(path) == c
    assert Config.loads(c.dumps()) == c


def test_comments_blank_lines_and_overrides():
    c = Config.loads("# comment\n\nepochs = 3  # short\nuse_gcn = off\n", epochs=4, seed=None)
    assert c.epochs == 4 and c.use_gcn is False and c.seed == 0


def test_unknown_key_and_bad_values():
    with pytest.raises(ValueError, match="unknown key"):
        Config.loads("epoch = 3")
    with pytest.raises(ValueError, match="not a boolean"):
        Config.loads("use_gcn = maybe")
    with pytest.raises(ValueError, match="key = value"):
        Config.loads("epochs 3")


@pytest.mark.parametrize("changes, message", [
    (dict(batch_size=1), "batch_size"),
    (dict(loss_lambda=-0.1), "loss_lambda"),
    (dict(train_views=0), "train_views"),
    (dict(train_views=7), "train_views"),
    (dict(color_patch=32), "grids"),
])
def test_validation(changes, message):
    with pytest.raises(ValueError, match=message):
        Config(**changes)


def test_environment_variable_supplies_file(tmp_path, monkeypatch):
    path = tmp_path / "env.txt"
    path.write_text("epochs = 2\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert Config.load().epochs == 2
    monkeypatch.delenv(CONFIG_ENV)
    assert Config.load() == Config()


def test_lighting_from_config():
    assert Config().lighting().direction is None
    light = Config(light_direction="1, 0, 0", ambient=0.2).lighting()
    assert light.direction == (1.0, 0.0, 0.0) and light.ambient == 0.2
