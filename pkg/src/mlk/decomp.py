"""Shard assignment and training-data selection.

Row-wise sharding keeps every shard inside one plane; column-wise sharding
gives every shard a contiguous node block spanning all planes.  Training
selection schemes subsample a shard's members, exploiting the cross-plane
similarity of images at equal node index for the COL* family.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from mlk.errors import ConfigError

__all__ = ["Shard", "SelectionScheme", "partition", "select_training",
           "mix_seed"]


class SelectionScheme(enum.Enum):
    ROW = "row"
    ROW25 = "row25"
    ROW50 = "row50"
    ROW75 = "row75"
    COL = "col"
    COLFST = "colfst"
    COLRAND = "colrand"
    COLRANDIND = "colrandind"
    COL25 = "col25"
    COL50 = "col50"
    COL75 = "col75"

    @property
    def fraction(self):
        tail = self.value[-2:]
        return int(tail) / 100 if tail.isdigit() else None

    @property
    def row_based(self) -> bool:
        return self.value.startswith("row")


@dataclass(frozen=True)
class Shard:
    worker_id: int
    members: tuple  # ordered ((plane, node), ...), non-empty, no duplicates

    def __post_init__(self):
        if not self.members:
            raise ConfigError("shard must have at least one member")

    def planes(self):
        return sorted({p for p, _ in self.members})

    def node_block(self):
        return sorted({x for _, x in self.members})


def _split_blocks(count: int, parts: int):
    """Contiguous near-equal blocks; the first count%parts get one extra."""
    base, extra = divmod(count, parts)
    blocks = []
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        blocks.append(range(start, start + size))
        start += size
    return blocks


def partition(n_planes: int, n_nodes: int, n_workers: int, mode: str):
    """Split (plane, node) pairs into per-worker shards."""
    if n_workers < 1:
        raise ConfigError("need at least one worker")
    if n_workers > n_planes * n_nodes:
        raise ConfigError(
            f"{n_workers} workers cannot all receive data from "
            f"{n_planes * n_nodes} images")
    if mode == "row":
        if n_workers < n_planes:
            raise ConfigError(
                "row-wise decomposition needs at least one worker per plane")
        per_plane = [n_workers // n_planes] * n_planes
        for i in range(n_workers % n_planes):
            per_plane[i] += 1
        if max(per_plane) > n_nodes:
            raise ConfigError("more workers assigned to a plane than nodes")
        shards = []
        wid = 0
        for plane, k in enumerate(per_plane):
            for block in _split_blocks(n_nodes, k):
                shards.append(Shard(wid, tuple((plane, x) for x in block)))
                wid += 1
        return shards
    if mode == "col":
        if n_workers > n_nodes:
            raise ConfigError("more column-wise workers than nodes")
        shards = []
        for wid, block in enumerate(_split_blocks(n_nodes, n_workers)):
            members = tuple((p, x) for p in range(n_planes) for x in block)
            shards.append(Shard(wid, members))
        return shards
    raise ConfigError(f"unknown decomposition mode {mode!r}")


def mix_seed(seed: int, worker_id: int) -> int:
    """SplitMix64 finalizer over (seed, worker_id); stable across runs."""
    z = (seed + 0x9E3779B97F4A7C15 * (worker_id + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def select_training(shard: Shard, scheme: SelectionScheme, n_planes: int,
                    seed: int):
    """Member indices (into shard.members) used for autoencoder training."""
    planes = shard.planes()
    single_plane = len(planes) == 1
    if scheme.row_based and not single_plane and n_planes > 1:
        raise ConfigError(f"{scheme.value} requires row-wise shards")
    if not scheme.row_based and single_plane and n_planes > 1:
        raise ConfigError(f"{scheme.value} requires column-wise shards")

    rng = np.random.Generator(np.random.PCG64(mix_seed(seed, shard.worker_id)))
    n = len(shard.members)
    all_idx = np.arange(n)

    if scheme in (SelectionScheme.ROW, SelectionScheme.COL):
        return all_idx
    if scheme.row_based:
        size = max(1, int(n * scheme.fraction))
        return np.sort(rng.choice(n, size=size, replace=False))

    block = shard.node_block()
    per_plane = len(block)
    if scheme is SelectionScheme.COLFST:
        first = planes[0]
        return np.array([i for i, (p, _) in enumerate(shard.members)
                         if p == first])
    if scheme is SelectionScheme.COLRAND:
        return np.sort(rng.choice(n, size=per_plane, replace=False))
    # COLRANDIND and its fractional variants: one member per node index
    node_pos = {x: j for j, x in enumerate(block)}
    by_node = [[] for _ in block]
    for i, (_, x) in enumerate(shard.members):
        by_node[node_pos[x]].append(i)
    picks = np.array([cands[rng.integers(len(cands))] for cands in by_node])
    if scheme is SelectionScheme.COLRANDIND:
        return np.sort(picks)
    size = max(1, int(per_plane * scheme.fraction))
    return np.sort(rng.choice(picks, size=size, replace=False))
