"""Named network configurations.

``C_*`` rate 24x24 windows of the 4x downscaled image, ``F_K8P8`` rates
89x89 windows of the original image and ``S_K8P8`` is the single-stage
25x25 variant. ``K`` counts conv filters, ``P`` hidden perceptrons.
"""
from .nn import CnnConfig

PRESETS = {
    "C_K4P8": CnnConfig(24, 5, 1, 4, 4, 4, 8),
    "C_K8P8": CnnConfig(24, 5, 1, 8, 4, 4, 8),
    "C_K8P16": CnnConfig(24, 5, 1, 8, 4, 4, 16),
    "C_K16P32": CnnConfig(24, 5, 1, 16, 4, 4, 32),
    # 70x70 conv output pooled by 5x5 blocks at stride 5 -> 14x14
    "F_K8P8": CnnConfig(89, 20, 1, 8, 5, 5, 8),
    # 6x6 conv output pooled 2x2 at stride 1 -> 5x5
    "S_K8P8": CnnConfig(25, 20, 1, 8, 2, 1, 8),
}

STAGE_PRESETS = {
    "coarse": ("C_K4P8", "C_K8P8", "C_K8P16", "C_K16P32"),
    "fine": ("F_K8P8",),
    "single": ("S_K8P8",),
}


def get_preset(name: str) -> CnnConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset_name(config: CnnConfig) -> str | None:
    for name, cfg in PRESETS.items():
        if cfg == config:
            return name
    return None
