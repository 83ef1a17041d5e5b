"""YAML-backed extraction configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

# Candidate-layer presets per encoder family (candidate bucket + the layer
# the deployed model normally consumes).
LAYER_PRESETS: dict[str, tuple[tuple[int, ...], int]] = {
    "llava-v1.5": ((13, 15, 17, 19, 21, 23, 25), 24),
    "instructblip": ((29, 31, 33, 35, 37, 39), 38),
    "qwen-vl": ((45, 46, 47, 48), 49),
}


@dataclass(frozen=True)
class ExtractorConfig:
    model: str
    layers: tuple[int, ...]
    standard_layer: int
    questions: Path
    output_dir: Path
    image_root: Path | None = None
    max_new_tokens: int = 2
    noise_channel: bool = False
    noise_sigma: float = 0.5
    device: str = "cpu"
    seed: int = 0
    adapter_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("layers must be non-empty")
        if any(l <= 0 for l in self.layers) or self.standard_layer <= 0:
            raise ConfigError("layer ids are 1-based and must be positive")
        if list(self.layers) != sorted(set(self.layers)):
            raise ConfigError("layers must be strictly increasing and unique")
        if self.standard_layer in self.layers:
            raise ConfigError("standard layer must not be in the candidate list")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


def load_config(path: str | Path) -> ExtractorConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    for key in ("model", "questions", "output_dir"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key '{key}'")

    layers_raw = raw.get("layers")
    if isinstance(layers_raw, str):
        if layers_raw not in LAYER_PRESETS:
            raise ConfigError(
                f"unknown layer preset '{layers_raw}' "
                f"(known: {', '.join(sorted(LAYER_PRESETS))})"
            )
        layers, standard = LAYER_PRESETS[layers_raw]
        standard = int(raw.get("standard_layer", standard))
    elif isinstance(layers_raw, (list, tuple)):
        layers = tuple(int(x) for x in layers_raw)
        if "standard_layer" not in raw:
            raise ConfigError("standard_layer is required with an explicit layer list")
        standard = int(raw["standard_layer"])
    else:
        raise ConfigError("layers must be a preset name or a list of layer ids")

    return ExtractorConfig(
        model=str(raw["model"]),
        layers=layers,
        standard_layer=standard,
        questions=Path(raw["questions"]),
        output_dir=Path(raw["output_dir"]),
        image_root=Path(raw["image_root"]) if raw.get("image_root") else None,
        max_new_tokens=int(raw.get("max_new_tokens", 2)),
        noise_channel=bool(raw.get("noise_channel", False)),
        noise_sigma=float(raw.get("noise_sigma", 0.5)),
        device=str(raw.get("device", "cpu")),
        seed=int(raw.get("seed", 0)),
        adapter_options=dict(raw.get("adapter_options", {})),
    )
