from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

# CSS named-color values; the names follow the Fonts attribute table.
COLORS: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "orange": (255, 165, 0),
    "yellow": (255, 255, 0),
    "green": (0, 128, 0),
    "cyan": (0, 255, 255),
    "blue": (0, 0, 255),
    "purple": (128, 0, 128),
    "pink": (255, 192, 203),
    "chocolate": (210, 105, 30),
    "silver": (192, 192, 192),
}


@dataclass(frozen=True)
class Style:
    """Parametric stand-in for a typeface.

    ``weight`` grows (>0) or thins (<0) strokes, in glyph-cell units;
    ``slant`` is the horizontal shear per unit height (positive leans right);
    ``aspect`` scales glyph width; ``outline`` keeps only the stroke border.
    """

    weight: float = 0.0
    slant: float = 0.0
    aspect: float = 1.0
    outline: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


_WEIGHTS = {"regular": 0.0, "bold": 0.3, "thin": -0.12, "black": 0.5}
_SLANTS = {"upright": 0.0, "italic": 0.25, "backslant": -0.25, "oblique": 0.45, "reverse": -0.45}
_ASPECTS = {"normal": 1.0, "wide": 1.25, "condensed": 0.8}
_FILLS = {"solid": False, "outline": True}


def _name(weight, slant, aspect, fill) -> str:
    parts = [p for p, default in ((weight, "regular"), (slant, "upright"),
                                  (aspect, "normal"), (fill, "solid")) if p != default]
    return "-".join(parts) or "regular"


def _build_table() -> dict[str, Style]:
    table: dict[str, Style] = {}
    # the first three are the most distinct at small extents
    head = [("regular", "upright", "normal", "solid"),
            ("bold", "upright", "normal", "solid"),
            ("regular", "italic", "normal", "solid")]
    rest = itertools.product(_FILLS, _ASPECTS, _SLANTS, _WEIGHTS)
    for combo in head + [(w, s, a, f) for f, a, s, w in rest]:
        name = _name(*combo)
        if name not in table:
            w, s, a, f = combo
            table[name] = Style(_WEIGHTS[w], _SLANTS[s], _ASPECTS[a], _FILLS[f])
    return table


STYLES: dict[str, Style] = _build_table()
STYLE_NAMES: list[str] = list(STYLES)


def style_names(count: int) -> list[str]:
    if not 1 <= count <= len(STYLE_NAMES):
        raise ValueError(f"style count must be in [1, {len(STYLE_NAMES)}], got {count}")
    return STYLE_NAMES[:count]
