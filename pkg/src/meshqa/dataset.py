"""Dataset manifests: CSV with a header ``reference,distorted,mos,content``."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ManifestRecord:
    reference: str
    distorted: str
    mos: float
    content: str


class DatasetManifest:
    FIELDS = ("reference", "distorted", "mos", "content")

    def __init__(self, records: list[ManifestRecord], root=None):
        for r in records:
            if not 0.0 <= r.mos <= 1.0:
                raise ValueError(f"MOS {r.mos} outside [0,1] for {r.distorted}")
            if not r.content:
                raise ValueError(f"missing content id for {r.distorted}")
        self.records = list(records)
        self.root = Path(root) if root is not None else Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.root / p

    def contents(self) -> list[str]:
        return sorted({r.content for r in self.records})

    def subset(self, contents) -> "DatasetManifest":
        keep = set(contents)
        return DatasetManifest([r for r in self.records if r.content in keep], self.root)

    @classmethod
    def from_scores(cls, rows, lo: float, hi: float, root=None) -> "DatasetManifest":
        """Build from raw ``(ref, dis, score, content)`` rows on a ``[lo, hi]`` rating scale."""
        if hi <= lo:
            raise ValueError("rating range must have hi > lo")
        return cls([ManifestRecord(r, d, (float(s) - lo) / (hi - lo), c) for r, d, s, c in rows], root)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(cls.FIELDS) - set(reader.fieldnames):
                raise ValueError(f"{path}: header must contain {', '.join(cls.FIELDS)}")
            records = [
                ManifestRecord(row["reference"], row["distorted"], float(row["mos"]), row["content"])
                for row in reader
            ]
        return cls(records, root=path.parent)

    def save(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for r in self.records:
                w.writerow([r.reference, r.distorted, repr(float(r.mos)), r.content])
