"""Training loop, evaluation and content-disjoint cross-validation."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Adam, Tensor, cosine_lr, no_grad
from .config import Config
from .dataset import DatasetManifest, ManifestRecord
from .losses import total_loss
from .mesh import MeshError
from .metrics import fit_logistic, plcc, srcc
from .model import PreparedMesh, QualityModel, load_prepared
from .render import make_camera_rig, perturb_cameras

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "l_mae", "l_rank", "l", "lr")


def _run_context(config: Config):
    return threadpool_limits(limits=1) if config.deterministic else contextlib.nullcontext()


class MeshCache:
    """Loads and prepares each mesh path once; remembers paths that failed."""

    def __init__(self, manifest: DatasetManifest, config: Config):
        self.manifest = manifest
        self.config = config
        self.meshes: dict[str, PreparedMesh] = {}
        self.failed: dict[str, str] = {}

    def get(self, name: str) -> PreparedMesh | None:
        if name in self.failed:
            return None
        if name not in self.meshes:
            try:
                self.meshes[name] = load_prepared(self.manifest.path(name), self.config)
            except (OSError, ValueError) as exc:
                self.failed[name] = str(exc)
                log.warning("skipping %s: %s", name, exc)
                return None
        return self.meshes[name]

    def usable(self) -> list[ManifestRecord]:
        keep = []
        for rec in self.manifest:
            ok_ref = self.get(rec.reference) is not None
            ok_dis = self.get(rec.distorted) is not None
            if ok_ref and ok_dis:
                keep.append(rec)
        return keep


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    # balanced split so no batch ends up with a single element
    order = rng.permutation(n)
    return np.array_split(order, max(1, math.ceil(n / batch_size)))


def train(manifest: DatasetManifest, config: Config, model: QualityModel | None = None,
          log_path=None) -> tuple[QualityModel, list[dict]]:
    """Fit a model on ``manifest``; returns it with one log row per epoch."""
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    with _run_context(config):
        cache = MeshCache(manifest, config)
        records = cache.usable()
        skipped = len(manifest) - len(records)
        if skipped:
            log.warning("%d of %d records skipped as unloadable", skipped, len(manifest))
        if not records:
            raise MeshError("no loadable records in manifest: " + "; ".join(
                f"{k}: {v}" for k, v in sorted(cache.failed.items())))
        if len(records) < 2:
            raise ValueError("training needs at least 2 usable records for the rank loss")

        rng = np.random.default_rng(config.seed)
        model = model or QualityModel(config)
        opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        rig = make_camera_rig(config.camera_distance, config.camera_fov, config.color_resolution)
        steps_per_epoch = math.ceil(len(records) / config.batch_size)
        total_steps = config.epochs * steps_per_epoch
        mos = np.array([r.mos for r in records])

        rows = []
        step = 0
        for epoch in range(config.epochs):
            sums = np.zeros(3)
            n_seen = 0
            for batch in _batches(len(records), config.batch_size, rng):
                opt.lr = cosine_lr(step, total_steps, config.lr, config.lr_final)
                cams = perturb_cameras(rig, config.angle_sigma, rng) if config.augment_angles else rig
                views = np.sort(rng.choice(6, size=config.train_views, replace=False))
                cams = [cams[v] for v in views]
                flip = (bool(rng.random() < 0.5), bool(rng.random() < 0.5)) if config.augment_flip else (False, False)

                opt.zero_grad()
                reps: dict[str, Tensor] = {}

                def rep(name):
                    if name not in reps:
                        reps[name] = model.represent(cache.get(name), cams, flip).f_mesh
                    return reps[name]

                scores = [model.fr_score(rep(records[i].reference), rep(records[i].distorted)) for i in batch]
                q = scores[0] if len(scores) == 1 else ad.concat(scores, axis=0)
                loss, l_mae, l_rank = total_loss(q, mos[batch], config.loss_lambda)
                loss.backward()
                opt.step()
                sums += len(batch) * np.array([l_mae.item(), l_rank.item(), loss.item()])
                n_seen += len(batch)
                step += 1
            mean = sums / n_seen
            row = {"epoch": epoch, "l_mae": float(mean[0]), "l_rank": float(mean[1]),
                   "l": float(mean[2]), "lr": float(opt.lr)}
            rows.append(row)
            log.info("epoch %d  L=%.4f  L_mae=%.4f  L_rank=%.4f  lr=%.2e",
                     epoch, row["l"], row["l_mae"], row["l_rank"], row["lr"])
    if log_path is not None:
        write_log(rows, log_path)
    return model, rows


def write_log(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class EvalResult:
    srcc: float
    plcc: float
    predictions: list[tuple[ManifestRecord, float]]
    logistic: np.ndarray = field(default_factory=lambda: np.zeros(4))
    skipped: list[str] = field(default_factory=list)

    @property
    def pred(self) -> np.ndarray:
        return np.array([p for _, p in self.predictions])

    @property
    def mos(self) -> np.ndarray:
        return np.array([r.mos for r, _ in self.predictions])


def predict(manifest: DatasetManifest, model: QualityModel,
            cache: MeshCache | None = None) -> tuple[list[tuple[ManifestRecord, float]], list[str]]:
    """Score every loadable record with all six unperturbed views."""
    config = model.config
    cache = cache or MeshCache(manifest, config)
    rig = make_camera_rig(config.camera_distance, config.camera_fov, config.color_resolution)
    reps: dict[str, Tensor] = {}
    out, skipped = [], []
    with no_grad():
        for rec in manifest:
            prepared = [cache.get(rec.reference), cache.get(rec.distorted)]
            if any(p is None for p in prepared):
                skipped.append(rec.distorted)
                continue
            for name, prep in zip((rec.reference, rec.distorted), prepared):
                if name not in reps:
                    reps[name] = model.represent(prep, rig, cache_color=True).f_mesh
            out.append((rec, float(model.fr_score(reps[rec.reference], reps[rec.distorted]).data[0])))
    return out, skipped


def evaluate(manifest: DatasetManifest, model: QualityModel, cache: MeshCache | None = None) -> EvalResult:
    if len(manifest) < 3:
        raise ValueError("evaluation needs at least 3 records (SRCC/PLCC are undefined below that)")
    with _run_context(model.config):
        preds, skipped = predict(manifest, model, cache)
    if len(preds) < 3:
        raise ValueError(f"only {len(preds)} records could be scored; need at least 3")
    p = np.array([v for _, v in preds])
    m = np.array([r.mos for r, _ in preds])
    return EvalResult(srcc(p, m), plcc(p, m), preds, fit_logistic(p, m), skipped)


def content_folds(contents: list[str], k: int, seed: int = 0) -> list[list[str]]:
    """Partition content ids into ``k`` disjoint test groups."""
    contents = sorted(set(contents))
    if len(contents) < k:
        raise ValueError(f"need at least {k} source contents for {k}-fold cross-validation, got {len(contents)}")
    order = np.random.default_rng(seed).permutation(len(contents))
    return [[contents[i] for i in part] for part in np.array_split(order, k)]


@dataclass
class FoldResult:
    fold: int
    train_contents: list[str]
    test_contents: list[str]
    srcc: float
    plcc: float
    log: list[dict] = field(default_factory=list)
    predictions: list[tuple[ManifestRecord, float]] = field(default_factory=list)


@dataclass
class CrossValResult:
    folds: list[FoldResult]

    @property
    def median_srcc(self) -> float:
        return float(np.median([f.srcc for f in self.folds]))

    @property
    def median_plcc(self) -> float:
        return float(np.median([f.plcc for f in self.folds]))


def cross_validate(manifest: DatasetManifest, config: Config, k: int = 5, train_fn=train,
                   eval_fn=evaluate) -> CrossValResult:
    """Train on k-1 content groups, test on the held-out one, for each of k folds."""
    contents = manifest.contents()
    folds = []
    for i, test in enumerate(content_folds(contents, k, config.seed)):
        train_c = [c for c in contents if c not in set(test)]
        model, rows = train_fn(manifest.subset(train_c), config)
        res = eval_fn(manifest.subset(test), model)
        folds.append(FoldResult(i, train_c, list(test), res.srcc, res.plcc, rows, res.predictions))
        log.info("fold %d  test=%s  SRCC=%.4f  PLCC=%.4f", i, ",".join(test), res.srcc, res.plcc)
    return CrossValResult(folds)
