"""Attributed Fonts-style dataset: enumeration, generation and splits."""
from __future__ import annotations

import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from ..data import AttributedDataset, AttributeSchema, read_manifest, save_png, write_manifest
from .glyphs import DEFAULT_ATLAS, LETTERS, GlyphAtlas
from .render import render_glyph
from .styles import COLORS, STYLES, style_names

log = logging.getLogger(__name__)

ATTRIBUTE_NAMES = ("letter", "size", "font_color", "background_color", "style")
QUERY_ALIASES = {"fc": "font_color", "bc": "background_color", "font": "style"}
MANIFEST_NAME = "manifest.jsonl"
SENTINEL = ".incomplete"


class HoldoutInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class FontsConfig:
    letters: str = "ABCDEFGHIJ"
    sizes: tuple[int, ...] = (20, 25, 30)
    size_names: tuple[str, ...] = ("small", "medium", "large")
    font_colors: tuple[str, ...] = ("red", "yellow", "green", "blue")
    background_colors: tuple[str, ...] = ("red", "yellow", "green", "blue")
    styles: tuple[str, ...] = ("regular", "bold", "italic")
    extent: int = 32
    allow_same_color: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (tuple, str)) and f.name != "letters" and len(v) == 0:
                raise ValueError(f"{f.name}: empty value list")
        if not self.letters:
            raise ValueError("letters: empty value list")
        if len(set(self.letters)) != len(self.letters):
            raise ValueError("letters must be distinct")
        bad = [c for c in self.letters if c not in LETTERS]
        if bad:
            raise ValueError(f"no glyphs for {bad}")
        if len(self.size_names) != len(self.sizes):
            raise ValueError("size_names must name every size")
        if max(self.sizes) > self.extent or min(self.sizes) < 1:
            raise ValueError(f"sizes must lie in [1, extent={self.extent}]")
        for c in self.font_colors + self.background_colors:
            if c not in COLORS:
                raise ValueError(f"unknown color {c!r}")
        for s in self.styles:
            if s not in STYLES:
                raise ValueError(f"unknown style {s!r}")

    @classmethod
    def mini(cls) -> "FontsConfig":
        return cls()

    @classmethod
    def full(cls) -> "FontsConfig":
        names = tuple(COLORS)
        return cls(letters=LETTERS, sizes=(80, 100, 120), font_colors=names,
                   background_colors=names, styles=tuple(style_names(100)), extent=128)

    @classmethod
    def from_dict(cls, d: dict) -> "FontsConfig":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def schema(self) -> AttributeSchema:
        return AttributeSchema(
            ATTRIBUTE_NAMES,
            (tuple(self.letters), self.size_names, self.font_colors, self.background_colors, self.styles),
        )

    def value_counts(self) -> tuple[int, ...]:
        return (len(self.letters), len(self.sizes), len(self.font_colors),
                len(self.background_colors), len(self.styles))

    def total_combinations(self) -> int:
        return int(np.prod(self.value_counts(), dtype=np.int64))

    def denied(self, tup) -> bool:
        return (not self.allow_same_color
                and self.font_colors[tup[2]] == self.background_colors[tup[3]])


def iter_combinations(config: FontsConfig, include_denied: bool = False) -> Iterator[tuple[int, ...]]:
    """Lexicographic value-index tuples over (letter, size, fc, bc, style)."""
    for tup in itertools.product(*(range(n) for n in config.value_counts())):
        if include_denied or not config.denied(tup):
            yield tup


def enumerate_combinations(config: FontsConfig) -> list[tuple[int, ...]]:
    return list(iter_combinations(config))


def render(tup, config: FontsConfig, atlas: GlyphAtlas = DEFAULT_ATLAS) -> np.ndarray:
    """Ground-truth ``H x W x 3`` image for one attribute tuple (value indices)."""
    schema = config.schema()
    letter_i, size_i, fc_i, bc_i, style_i = schema.encode(tup)
    return render_glyph(
        config.letters[letter_i],
        config.sizes[size_i],
        COLORS[config.font_colors[fc_i]],
        COLORS[config.background_colors[bc_i]],
        STYLES[config.styles[style_i]],
        config.extent,
        atlas,
    )


def manifest_header(config: FontsConfig) -> dict:
    used = dict.fromkeys(config.font_colors + config.background_colors)
    return {
        "schema": config.schema().to_json(),
        "colors": {c: list(COLORS[c]) for c in used},
        "extent": config.extent,
        "fonts": config.to_dict(),
        "styles": {s: STYLES[s].as_dict() for s in config.styles},
    }


def config_from_header(header: dict) -> FontsConfig:
    if "fonts" not in header:
        raise ValueError("manifest header carries no fonts config; ground truth cannot be rendered")
    return FontsConfig.from_dict(header["fonts"])


def _threads() -> int:
    env = os.environ.get("GZSL_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def generate_dataset(config: FontsConfig, out_dir: str | Path,
                     atlas: GlyphAtlas = DEFAULT_ATLAS) -> AttributedDataset:
    """Render every admissible tuple to PNG and write ``manifest.jsonl``.

    A ``.incomplete`` sentinel exists while writing and is removed only after
    the manifest lands, so an interrupted run is detectable.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentinel = out / SENTINEL
    sentinel.touch()
    tuples = enumerate_combinations(config)
    files = [f"img_{i:07d}.png" for i in range(len(tuples))]

    def work(i: int) -> None:
        save_png(render(tuples[i], config, atlas), out / files[i])

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for _ in pool.map(work, range(len(tuples))):
            pass
    rows = [[config.letters[t[0]], *t[1:]] for t in tuples]
    write_manifest(out / MANIFEST_NAME, manifest_header(config), files, rows)
    sentinel.unlink()
    log.info("wrote %d images to %s", len(tuples), out)
    return read_manifest(out / MANIFEST_NAME)


def plan_split(dataset: AttributedDataset, mode: str = "holdout-combinations", seed: int = 0,
               test_fraction: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive (train ids, test ids).

    ``holdout-combinations`` withholds whole attribute tuples while keeping
    every attribute value present in train.
    """
    n = len(dataset)
    rng = np.random.default_rng(seed)
    n_test = int(round(n * test_fraction))
    if mode == "random-75-25":
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    if mode != "holdout-combinations":
        raise ValueError(f"unknown split mode {mode!r}")

    attrs = dataset.attrs
    uniq, inverse = np.unique(attrs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mult = np.bincount(inverse, minlength=len(uniq))
    counts = [np.bincount(attrs[:, j], minlength=c) for j, c in enumerate(dataset.schema.cardinalities)]
    held = np.zeros(len(uniq), dtype=bool)
    taken = 0
    for t in rng.permutation(len(uniq)):
        if taken >= n_test:
            break
        tup, k = uniq[t], mult[t]
        if all(counts[j][tup[j]] - k >= 1 for j in range(len(tup))):
            for j in range(len(tup)):
                counts[j][tup[j]] -= k
            held[t] = True
            taken += k
    if taken == 0 and n_test > 0:
        raise HoldoutInfeasible("no tuple can be withheld without removing a value from train")
    if taken < n_test:
        log.warning("holdout split withheld %d of the %d requested samples", taken, n_test)
    test_mask = held[inverse]
    return np.flatnonzero(~test_mask), np.flatnonzero(test_mask)


def save_split(path: str | Path, manifest: str | Path, mode: str, seed: int,
               train: np.ndarray, test: np.ndarray) -> None:
    path = Path(path)
    rel = os.path.relpath(Path(manifest).resolve(), path.resolve().parent)
    payload = {"manifest": rel, "mode": mode, "seed": seed,
               "train": [int(i) for i in train], "test": [int(i) for i in test]}
    path.write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> dict:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["manifest"] = str((path.parent / payload["manifest"]).resolve())
    payload["train"] = np.asarray(payload["train"], dtype=np.int64)
    payload["test"] = np.asarray(payload["test"], dtype=np.int64)
    return payload
