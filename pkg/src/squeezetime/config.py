"""Architecture configuration and the flat ``key=value`` config file format."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

VARIANTS = ("full", "base", "tfc", "ioi")


class ConfigError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of a squeezed-time video network.

    ``stage_channels`` and ``stem_channels`` are the widths at
    ``channel_factor == 1``; the effective widths are scaled and rounded.
    ``ioi_frames`` is the frame-channel width inside the interaction
    branch; ``None`` ties it to ``frames``. Pinning it keeps the body of the
    network unchanged while only the stem input varies with ``frames``.

    ``variant`` selects the block's middle operator: ``full`` (both
    branches), ``tfc`` (1x1 focus branch only), ``ioi`` (interaction branch
    only) or ``base`` (a plain 3x3 conv). ``focus=False`` replaces every
    temporal focus convolution by an ordinary convolution and drops the
    weight computation module; ``pos_encoding=False`` removes the temporal
    position encoding.
    """

    frames: int = 16
    resolution: tuple[int, int] = (224, 224)
    channel_factor: float = 1.0
    stage_blocks: tuple[int, ...] = (3, 4, 6, 3)
    stage_channels: tuple[int, ...] = (256, 512, 1024, 2048)
    reduction: float = 0.25
    num_classes: int = 400
    stem_channels: int = 64
    ioi_frames: int | None = None
    wcm_ratio: float = 1.0
    variant: str = "full"
    focus: bool = True
    pos_encoding: bool = True

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        self.validate()

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """The small configuration used for gradient checks and the probe."""
        base = dict(frames=4, resolution=(32, 32), stage_blocks=(1, 1, 1, 1),
                    stage_channels=(8, 16, 32, 64), stem_channels=8, num_classes=5)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.ioi_frames is not None and self.ioi_frames < 1:
            raise ConfigError(f"ioi_frames must be >= 1, got {self.ioi_frames}")
        if len(self.stage_blocks) != len(self.stage_channels) or not self.stage_blocks:
            raise ConfigError("stage_blocks and stage_channels must have the same non-zero length")
        if any(b < 1 for b in self.stage_blocks):
            raise ConfigError(f"every stage needs at least one block: {self.stage_blocks}")
        if self.channel_factor <= 0 or self.reduction <= 0 or self.wcm_ratio <= 0:
            raise ConfigError("channel_factor, reduction and wcm_ratio must be positive")
        if self.num_classes < 1 or self.stem_channels < 1:
            raise ConfigError("num_classes and stem_channels must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        stride = self.total_stride
        for r in self.resolution:
            if r < stride or r % stride:
                raise ConfigError(f"resolution {self.resolution} must be a multiple of {stride}")

    @property
    def total_stride(self) -> int:
        return 2 ** (1 + len(self.stage_blocks))

    @property
    def stem_width(self) -> int:
        return max(1, round_half_up(self.stem_channels * self.channel_factor))

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(max(1, round_half_up(c * self.channel_factor)) for c in self.stage_channels)

    @property
    def temporal_width(self) -> int:
        return self.frames if self.ioi_frames is None else self.ioi_frames

    def bottleneck(self, width: int) -> int:
        return max(1, round_half_up(width * self.reduction))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def read_kv_file(path: str | Path) -> dict[str, str]:
    """Parse a flat UTF-8 ``dotted.key = value`` file (``#`` comments)."""
    entries: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        entries[key] = val
    return entries


def _convert(kind, raw: str, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "ints":
            return tuple(int(x) for x in raw.replace("x", ",").split(",") if x.strip())
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "optint":
            return None if raw.lower() in ("", "none") else int(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _field_kinds(cls) -> dict[str, Any]:
    kinds = {}
    for f in dataclasses.fields(cls):
        t = str(f.type)
        if "tuple[int" in t:
            kinds[f.name] = "ints"
        elif "tuple[float" in t:
            kinds[f.name] = "floats"
        elif t.startswith("int | None"):
            kinds[f.name] = "optint"
        elif t in ("int", "float", "bool", "str"):
            kinds[f.name] = {"int": int, "float": float, "bool": bool, "str": str}[t]
        else:
            kinds[f.name] = str
    return kinds


def section_to_dataclass(cls, entries: Mapping[str, str], prefix: str, base=None):
    """Build ``cls`` from ``prefix.*`` keys, starting from ``base`` (or defaults)."""
    kinds = _field_kinds(cls)
    changes = {}
    for key, raw in entries.items():
        section, _, name = key.partition(".")
        if section != prefix:
            continue
        if name not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        if name == "resolution":
            vals = _convert("ints", raw, key)
            changes[name] = vals * 2 if len(vals) == 1 else vals
        else:
            changes[name] = _convert(kinds[name], raw, key)
    if base is None:
        return cls(**changes)
    return dataclasses.replace(base, **changes)


def check_known_sections(entries: Mapping[str, str], sections: set[str]) -> None:
    for key in entries:
        if key.partition(".")[0] not in sections:
            raise ConfigError(f"unknown config key {key!r} (sections: {', '.join(sorted(sections))})")


def load_model_config(path: str | Path) -> ModelConfig:
    entries = read_kv_file(path)
    check_known_sections(entries, {"model"})
    return section_to_dataclass(ModelConfig, entries, "model")
