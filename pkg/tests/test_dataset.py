import pytest

from meshqa.dataset import DatasetManifest, ManifestRecord


def records():
    return [ManifestRecord("a_ref.obj", "a_1.obj", 0.8, "a"),
            ManifestRecord("a_ref.obj", "a_2.obj", 0.25, "a"),
            ManifestRecord("b_ref.obj", "b_1.obj", 1.0 / 3.0, "b")]


def test_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    DatasetManifest(records(), tmp_path).save(path)
    back = DatasetManifest.load(path)
    assert back.records == records()
    assert back.root == tmp_path
    assert back.path("a_1.obj") == tmp_path / "a_1.obj"
    assert back.path("/abs/x.obj").as_posix() == "/abs/x.obj"


def test_mos_range_and_content_required():
    with pytest.raises(ValueError, match="outside"):
        DatasetManifest([ManifestRecord("r", "d", 1.2, "a")])
    with pytest.raises(ValueError, match="content"):
        DatasetManifest([ManifestRecord("r", "d", 0.5, "")])


def test_header_is_checked(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("ref,dis,score\nr,d,0.5\n")
    with pytest.raises(ValueError, match="header"):
        DatasetManifest.load(path)


def test_from_scores_normalises():
    m = DatasetManifest.from_scores([("r", "d1", 5, "a"), ("r", "d2", 1, "a"), ("r", "d3", 2, "b")], 1, 5)
    assert [r.mos for r in m] == [1.0, 0.0, 0.25]
    with pytest.raises(ValueError):
        DatasetManifest.from_scores([], 5, 5)


def test_contents_and_subset():
    m = DatasetManifest(records())
    assert m.contents() == ["a", "b"]
    sub = m.subset(["b"])
    assert len(sub) == 1 and sub.records[0].distorted == "b_1.obj"
    assert len(m.subset([])) == 0


def test_synthetic_manifest(dataset_one):
    assert len(dataset_one) == 8 and dataset_one.contents() == ["content0"]
    noise = [r.mos for r in dataset_one if "noise" in r.distorted]
    blur = [r.mos for r in dataset_one if "blur" in r.distorted]
    assert noise == sorted(noise, reverse=True) and blur == sorted(blur, reverse=True)
    assert all(dataset_one.path(r.distorted).exists() for r in dataset_one)
