from .dataset import (FontsConfig, HoldoutInfeasible, enumerate_combinations, generate_dataset,
                      iter_combinations, load_split, plan_split, render, save_split)
from .glyphs import DEFAULT_ATLAS, GlyphAtlas
from .styles import COLORS, STYLES

__all__ = [
    "COLORS", "DEFAULT_ATLAS", "FontsConfig", "GlyphAtlas", "HoldoutInfeasible", "STYLES",
    "enumerate_combinations", "generate_dataset", "iter_combinations", "load_split",
    "plan_split", "render", "save_split",
]
