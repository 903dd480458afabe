"""Every tunable of the pipeline in one flat dataclass, persisted as ``key = value`` text."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .render import Lighting

CONFIG_ENV = "MESHQA_CONFIG"


@dataclass
class Config:
    # run control
    seed: int = 0
    deterministic: bool = False
    # optimisation
    batch_size: int = 8
    epochs: int = 15
    lr: float = 1e-4
    lr_final: float = 1e-5
    weight_decay: float = 1e-5
    loss_lambda: float = 1.0
    train_views: int = 2
    augment_angles: bool = True
    angle_sigma: float = 22.5
    augment_flip: bool = True
    # ablation switches
    use_fhat: bool = True
    use_fm: bool = True
    use_ft: bool = True
    fusion: str = "cross_attention"
    use_texture_map: bool = True
    use_normal_map: bool = True
    use_vertex_map: bool = True
    use_base_encoder: bool = True
    use_gcn: bool = True
    # geometry / rendering
    uv_resolution: int = 256
    color_resolution: int = 512
    feature_resolution: int = 128
    color_patch: int = 64
    feature_patch: int = 16
    coverage_threshold: float = 0.1
    camera_distance: float = 1.5
    camera_fov: float = 60.0
    edge_epsilon: float = 1e-6
    bilinear_graph_sampling: bool = False
    # network widths
    c1: int = 16
    c2: int = 16
    gcn_layers: int = 2
    gcn_neighbor_gain: float = 0.05
    d: int = 32
    ffn_mult: int = 2
    head_hidden: int = 64
    head_bias: float = 1.0
    # lighting for the colour branch
    light_mode: str = "directional"
    ambient: float = 0.4
    light_intensity: float = 0.6
    light_direction: str = "camera"
    diffuse: float = 1.0
    specular: float = 0.2
    shininess: float = 32.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (the rank loss needs pairs)")
        if self.loss_lambda < 0:
            raise ValueError("loss_lambda must be non-negative")
        if not 1 <= self.train_views <= 6:
            raise ValueError("train_views must be between 1 and 6")
        if self.color_resolution // self.color_patch != self.feature_resolution // self.feature_patch:
            raise ValueError("colour and feature patch grids must coincide")

    @property
    def graph_in_channels(self) -> int:
        return self.c1 if self.use_base_encoder else 9

    @property
    def feature_channels(self) -> int:
        if self.use_gcn:
            return self.c2
        return self.graph_in_channels

    @property
    def representation_width(self) -> int:
        scales = 5 if (self.use_fm or self.use_ft) else 0
        return self.d * (scales + (1 if self.use_fhat else 0))

    def lighting(self) -> Lighting:
        direction = None
        if self.light_direction.strip().lower() != "camera":
            direction = tuple(float(x) for x in self.light_direction.split(","))
        return Lighting(self.light_mode, self.ambient, self.light_intensity, direction,
                        self.diffuse, self.specular, self.shininess)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    # -- text form -----------------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, **overrides) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse(value, types[key], key)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path=None, **overrides) -> "Config":
        """Read ``path``, else ``$MESHQA_CONFIG``, else defaults; ``overrides`` win."""
        path = path or os.environ.get(CONFIG_ENV)
        text = Path(path).read_text() if path else ""
        return cls.loads(text, **overrides)


def _parse(value: str, typ, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: not a boolean: {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value
