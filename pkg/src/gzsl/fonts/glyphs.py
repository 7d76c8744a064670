"""Embedded 5x9 bitmap glyphs for A-Z and a-z.

Rows 0-6 hold capitals and ascenders, lowercase x-height is rows 2-6 and
descenders use rows 7-8. ``#`` marks ink.
"""
from __future__ import annotations

import string

import numpy as np

GRID_ROWS = 9
GRID_COLS = 5

_UPPER = {
    "A": ".###. #...# #...# ##### #...# #...# #...#",
    "B": "####. #...# #...# ####. #...# #...# ####.",
    "C": ".###. #...# #.... #.... #.... #...# .###.",
    "D": "###.. #..#. #...# #...# #...# #..#. ###..",
    "E": "##### #.... #.... ####. #.... #.... #####",
    "F": "##### #.... #.... ####. #.... #.... #....",
    "G": ".###. #...# #.... #.### #...# #...# .####",
    "H": "#...# #...# #...# ##### #...# #...# #...#",
    "I": ".###. ..#.. ..#.. ..#.. ..#.. ..#.. .###.",
    "J": "..### ...#. ...#. ...#. ...#. #..#. .##..",
    "K": "#...# #..#. #.#.. ##... #.#.. #..#. #...#",
    "L": "#.... #.... #.... #.... #.... #.... #####",
    "M": "#...# ##.## #.#.# #.#.# #...# #...# #...#",
    "N": "#...# #...# ##..# #.#.# #..## #...# #...#",
    "O": ".###. #...# #...# #...# #...# #...# .###.",
    "P": "####. #...# #...# ####. #.... #.... #....",
    "Q": ".###. #...# #...# #...# #.#.# #..#. .##.#",
    "R": "####. #...# #...# ####. #.#.. #..#. #...#",
    "S": ".#### #.... #.... .###. ....# ....# ####.",
    "T": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "U": "#...# #...# #...# #...# #...# #...# .###.",
    "V": "#...# #...# #...# #...# #...# .#.#. ..#..",
    "W": "#...# #...# #...# #.#.# #.#.# #.#.# .#.#.",
    "X": "#...# #...# .#.#. ..#.. .#.#. #...# #...#",
    "Y": "#...# #...# .#.#. ..#.. ..#.. ..#.. ..#..",
    "Z": "##### ....# ...#. ..#.. .#... #.... #####",
}

# (first row, rows)
_LOWER = {
    "a": (2, ".###. ....# .#### #...# .####"),
    "b": (0, "#.... #.... #.##. ##..# #...# #...# ####."),
    "c": (2, ".###. #.... #.... #...# .###."),
    "d": (0, "....# ....# .##.# #..## #...# #...# .####"),
    "e": (2, ".###. #...# ##### #.... .###."),
    "f": (0, "..##. .#..# .#... ###.. .#... .#... .#..."),
    "g": (2, ".#### #...# #...# .#### ....# ....# .###."),
    "h": (0, "#.... #.... #.##. ##..# #...# #...# #...#"),
    "i": (0, "..#.. ..... .##.. ..#.. ..#.. ..#.. .###."),
    "j": (0, "...#. ..... ..##. ...#. ...#. ...#. ...#. #..#. .##.."),
    "k": (0, "#.... #.... #..#. #.#.. ##... #.#.. #..#."),
    "l": (0, ".##.. ..#.. ..#.. ..#.. ..#.. ..#.. .###."),
    "m": (2, "##.#. #.#.# #.#.# #...# #...#"),
    "n": (2, "#.##. ##..# #...# #...# #...#"),
    "o": (2, ".###. #...# #...# #...# .###."),
    "p": (2, "####. #...# #...# #...# ####. #.... #...."),
    "q": (2, ".#### #...# #...# #...# .#### ....# ....#"),
    "r": (2, "#.##. ##..# #.... #.... #...."),
    "s": (2, ".#### #.... .###. ....# ####."),
    "t": (0, ".#... .#... ###.. .#... .#... .#..# ..##."),
    "u": (2, "#...# #...# #...# #..## .##.#"),
    "v": (2, "#...# #...# #...# .#.#. ..#.."),
    "w": (2, "#...# #...# #.#.# #.#.# .#.#."),
    "x": (2, "#...# .#.#. ..#.. .#.#. #...#"),
    "y": (2, "#...# #...# #...# .#### ....# ....# .###."),
    "z": (2, "##### ...#. ..#.. .#... #####"),
}

LETTERS = string.ascii_uppercase + string.ascii_lowercase


def _parse(first_row: int, rows: str) -> np.ndarray:
    grid = np.zeros((GRID_ROWS, GRID_COLS), dtype=bool)
    for r, line in enumerate(rows.split(), start=first_row):
        if len(line) != GRID_COLS:
            raise ValueError(f"glyph row {line!r} is not {GRID_COLS} wide")
        grid[r] = [ch == "#" for ch in line]
    return grid


class GlyphAtlas:
    """Immutable letter -> boolean bitmap table."""

    def __init__(self, bitmaps: dict[str, np.ndarray] | None = None):
        if bitmaps is None:
            bitmaps = {k: _parse(0, v) for k, v in _UPPER.items()}
            bitmaps.update({k: _parse(*v) for k, v in _LOWER.items()})
        for b in bitmaps.values():
            b.setflags(write=False)
        self._bitmaps = bitmaps

    def __contains__(self, letter: str) -> bool:
        return letter in self._bitmaps

    def letters(self) -> list[str]:
        return list(self._bitmaps)

    def bitmap(self, letter: str) -> np.ndarray:
        try:
            return self._bitmaps[letter]
        except KeyError:
            raise KeyError(f"no glyph for letter {letter!r}") from None


DEFAULT_ATLAS = GlyphAtlas()
