"""Attributed datasets and their JSON Lines manifests.

A manifest starts with a header line holding at least ``schema`` (ordered
list of ``{"name", "values"}``) and ``extent``; every following line is
``{"file": <relative path>, "attrs": [...]}``. An attribute entry is either
an integer value index or a value string from the schema.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]
    values: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("one value list per attribute class is required")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"attribute names must be unique: {self.names}")
        for name, vals in zip(self.names, self.values):
            if len(vals) < 2:
                raise ValueError(f"attribute {name!r} needs at least two values")
            if len(set(vals)) != len(vals):
                raise ValueError(f"attribute {name!r} has duplicate values")

    @property
    def m(self) -> int:
        return len(self.names)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.values)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute class {name!r}") from None

    def value_index(self, j: int, value) -> int:
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if not 0 <= value < len(self.values[j]):
                raise ValueError(f"{self.names[j]}: value index {value} out of range")
            return int(value)
        try:
            return self.values[j].index(str(value))
        except ValueError:
            raise ValueError(f"{self.names[j]}: unknown value {value!r}") from None

    def encode(self, tup: Sequence) -> tuple[int, ...]:
        if len(tup) != self.m:
            raise ValueError(f"expected {self.m} attributes, got {len(tup)}")
        return tuple(self.value_index(j, v) for j, v in enumerate(tup))

    def decode(self, idx: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.values[j][i] for j, i in enumerate(idx))

    def to_json(self) -> list[dict]:
        return [{"name": n, "values": list(v)} for n, v in zip(self.names, self.values)]

    @classmethod
    def from_json(cls, rows: Iterable[dict]) -> "AttributeSchema":
        rows = list(rows)
        return cls(tuple(r["name"] for r in rows), tuple(tuple(str(v) for v in r["values"]) for r in rows))


@dataclass
class AttributedDataset:
    schema: AttributeSchema
    attrs: np.ndarray  # (n, m) value indices
    files: list[str] = field(default_factory=list)
    root: Path | None = None
    header: dict = field(default_factory=dict)
    _images: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.attrs = np.asarray(self.attrs, dtype=np.int64).reshape(-1, self.schema.m)
        if len(self.attrs) < 1:
            raise ValueError("dataset needs at least one sample")
        card = np.array(self.schema.cardinalities)
        if (self.attrs < 0).any() or (self.attrs >= card).any():
            raise ValueError("attribute index outside its value list")

    def __len__(self) -> int:
        return len(self.attrs)

    @property
    def m(self) -> int:
        return self.schema.m

    def tuple(self, i: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.attrs[i])

    def images(self) -> np.ndarray:
        """All images as float32 ``[n, C, H, W]`` in [0, 1] (loaded once)."""
        if self._images is None:
            if self.root is None:
                raise ValueError("dataset has no image root")
            arrs = [load_png(self.root / f) for f in self.files]
            self._images = np.stack(arrs).transpose(0, 3, 1, 2).copy()
        return self._images

    def set_images(self, images: np.ndarray) -> None:
        images = np.asarray(images, dtype=np.float32)
        if len(images) != len(self):
            raise ValueError("image count does not match sample count")
        self._images = images


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_png(img: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)


def write_manifest(path: Path, header: dict, files: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps({"file": f, "attrs": list(r)}) for f, r in zip(files, rows)]
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_manifest(path: str | Path) -> AttributedDataset:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if "schema" not in header:
        raise ValueError(f"{path}: header line lacks 'schema'")
    schema = AttributeSchema.from_json(header["schema"])
    files, attrs = [], []
    for n, ln in enumerate(lines[1:], start=2):
        row = json.loads(ln)
        try:
            attrs.append(schema.encode(row["attrs"]))
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
        files.append(row["file"])
    return AttributedDataset(schema, np.array(attrs, dtype=np.int64), files, path.parent, header)
