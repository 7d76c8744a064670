"""Multigraph over attributed samples, the Cover predicate, and group samplers.

Class indices are 0-based throughout. Two samples ``i != k`` share edge label
``j`` when their class-``j`` values agree.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import AttributedDataset

log = logging.getLogger(__name__)


class InfeasibleError(LookupError):
    """No sample satisfies a sampler's constraint."""

    def __init__(self, message: str, attribute: str | None = None):
        super().__init__(message)
        self.attribute = attribute


@dataclass(frozen=True)
class GroupSample:
    center: int
    overlap: tuple[int, ...]  # overlap[j] shares exactly class j with center
    partner: int
    cycle_class: int


class Multigraph:
    """Edge-label function plus inverted indexes for sampling.

    ``members`` restricts which samples the samplers may return (e.g. the
    training split); edge labels are defined for every dataset index.
    """

    def __init__(self, dataset: AttributedDataset, members: Sequence[int] | None = None):
        self.dataset = dataset
        self.attrs = dataset.attrs
        n, m = self.attrs.shape
        self.m = m
        self.members = np.arange(n) if members is None else np.unique(np.asarray(members, dtype=np.int64))
        self._member_mask = np.zeros(n, dtype=bool)
        self._member_mask[self.members] = True
        sub = self.attrs[self.members]
        # (class, value) -> sorted member ids
        self.inverted: list[dict[int, np.ndarray]] = []
        for j in range(m):
            order = np.argsort(sub[:, j], kind="stable")
            vals, starts = np.unique(sub[order, j], return_index=True)
            groups = np.split(self.members[order], starts[1:])
            self.inverted.append({int(v): np.sort(g) for v, g in zip(vals, groups)})
        # class j -> key of the other m-1 values -> member ids agreeing on all classes but j
        self.pair_exact: list[dict[tuple, np.ndarray]] = []
        for j in range(m):
            buckets: dict[tuple, list[int]] = defaultdict(list)
            others = np.delete(sub, j, axis=1)
            for i, key in zip(self.members, map(tuple, others.tolist())):
                buckets[key].append(int(i))
            self.pair_exact.append({k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()})
        self._one_overlap_cache: dict[tuple[int, int], np.ndarray] = {}
        self._no_overlap_cache: dict[int, np.ndarray] = {}
        self.fallback_count = 0

    @property
    def n(self) -> int:
        return len(self.attrs)

    def class_name(self, j: int) -> str:
        return self.dataset.schema.names[j]

    def _check(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise IndexError(f"sample id {i} outside [0, {self.n})")

    def edge_labels(self, i: int, k: int) -> frozenset[int]:
        self._check(i)
        self._check(k)
        if i == k:
            raise ValueError("edge labels are only defined between distinct samples")
        return frozenset(np.flatnonzero(self.attrs[i] == self.attrs[k]).tolist())

    def covers(self, S: Iterable[int], i: int) -> bool:
        S = list(S)
        if not S:
            raise ValueError("cover set must be nonempty")
        self._check(i)
        for k in S:
            self._check(k)
        if i in S:
            return True
        agree = (self.attrs[S] == self.attrs[i]).any(axis=0)
        return bool(agree.all())

    def one_overlap_candidates(self, x: int, j: int) -> np.ndarray:
        """Members sharing exactly class ``j`` with ``x``."""
        key = (x, j)
        hit = self._one_overlap_cache.get(key)
        if hit is None:
            self._check(x)
            cand = self.inverted[j].get(int(self.attrs[x, j]), np.empty(0, dtype=np.int64))
            agree = (self.attrs[cand] == self.attrs[x]).sum(axis=1)
            hit = cand[(agree == 1) & (cand != x)]
            self._one_overlap_cache[key] = hit
        return hit

    def no_overlap_candidates(self, x: int) -> np.ndarray:
        hit = self._no_overlap_cache.get(x)
        if hit is None:
            self._check(x)
            diff = (self.attrs[self.members] != self.attrs[x]).all(axis=1)
            hit = self.members[diff]
            self._no_overlap_cache[x] = hit
        return hit

    def differ_only_in(self, x: int, j: int) -> np.ndarray:
        """Members that agree with ``x`` on every class except possibly ``j``."""
        key = tuple(np.delete(self.attrs[x], j).tolist())
        ids = self.pair_exact[j].get(key, np.empty(0, dtype=np.int64))
        return ids[ids != x]

    def members_with(self, j: int, value: int) -> np.ndarray:
        return self.inverted[j].get(int(value), np.empty(0, dtype=np.int64))


def sample_one_overlap_group(g: Multigraph, x: int, rng: np.random.Generator) -> tuple[int, ...]:
    """One member per class, each sharing exactly that class with ``x``."""
    out = []
    for j in range(g.m):
        cand = g.one_overlap_candidates(x, j)
        if len(cand) == 0:
            name = g.class_name(j)
            raise InfeasibleError(f"sample {x}: no member shares only {name!r} with it", name)
        out.append(int(cand[rng.integers(len(cand))]))
    return tuple(out)


def sample_no_overlap(g: Multigraph, x: int, rng: np.random.Generator, fallback: bool = True) -> int:
    """A member sharing no attribute with ``x``.

    Without any such member, ``fallback`` picks uniformly among the members
    with the fewest shared attributes and bumps ``g.fallback_count``.
    """
    cand = g.no_overlap_candidates(x)
    if len(cand):
        return int(cand[rng.integers(len(cand))])
    if not fallback:
        raise InfeasibleError(f"sample {x}: no member shares zero attributes with it")
    others = g.members[g.members != x]
    if len(others) == 0:
        raise InfeasibleError(f"sample {x}: no other member to pair with")
    shared = (g.attrs[others] == g.attrs[x]).sum(axis=1)
    best = others[shared == shared.min()]
    g.fallback_count += 1
    return int(best[rng.integers(len(best))])


def sample_partner(g: Multigraph, x: int, rng: np.random.Generator, mode: str = "no-overlap") -> int:
    if mode == "no-overlap":
        return sample_no_overlap(g, x, rng)
    if mode == "any":
        others = g.members[g.members != x]
        if len(others) == 0:
            raise InfeasibleError(f"sample {x}: no other member to pair with")
        return int(others[rng.integers(len(others))])
    raise ValueError(f"unknown partner mode {mode!r}")


def sample_group(g: Multigraph, x: int, rng: np.random.Generator, partner_mode: str = "no-overlap") -> GroupSample:
    overlap = sample_one_overlap_group(g, x, rng)
    partner = sample_partner(g, x, rng, partner_mode)
    j = int(rng.integers(g.m))
    return GroupSample(int(x), overlap, partner, j)


def check_group(g: Multigraph, grp: GroupSample, partner_mode: str = "no-overlap") -> None:
    """Raise ``AssertionError`` if ``grp`` breaks a GroupSample invariant."""
    assert len(grp.overlap) == g.m
    for j, k in enumerate(grp.overlap):
        assert g.edge_labels(grp.center, k) == {j}, (grp, j)
    assert g.covers(grp.overlap, grp.center)
    if partner_mode == "no-overlap" and len(g.no_overlap_candidates(grp.center)):
        assert g.edge_labels(grp.center, grp.partner) == frozenset()
    assert 0 <= grp.cycle_class < g.m


def mine_cover_sets(g: Multigraph, i: int, max_size: int, limit: int) -> list[frozenset[int]]:
    """Greedy-minimal sets ``S`` (``i`` not in ``S``) with ``Cover(S, i)``.

    Each set starts from a different seed member and grows by the candidate
    adding the most uncovered classes; redundant members are then pruned.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    g._check(i)
    target = g.attrs[i]
    pool = g.members[g.members != i]
    if len(pool) == 0:
        return []
    agree = g.attrs[pool] == target
    useful = agree.any(axis=1)
    pool, agree = pool[useful], agree[useful]
    if not agree.any(axis=0).all():
        return []
    order = np.lexsort((pool, -agree.sum(axis=1)))
    found: list[frozenset[int]] = []
    seen: set[frozenset[int]] = set()
    for start in order:
        if len(found) >= limit:
            break
        chosen = [start]
        covered = agree[start].copy()
        while not covered.all() and len(chosen) < max_size:
            gain = (agree & ~covered).sum(axis=1)
            best = int(np.argmax(gain))
            if gain[best] == 0:
                break
            chosen.append(best)
            covered |= agree[best]
        if not covered.all():
            continue
        for c in list(chosen):
            rest = [o for o in chosen if o != c]
            if rest and agree[rest].any(axis=0).all():
                chosen = rest
        s = frozenset(int(pool[c]) for c in chosen)
        if s not in seen:
            seen.add(s)
            found.append(s)
    return found
