"""Deterministic random-number provisioning.

Streams are derived from a 64-bit master seed by counter-based splitting
(Philox keyed through ``numpy.random.SeedSequence`` with an explicit spawn
key), so a stream depends only on its derivation path, never on the order
in which sibling streams are created or consumed.  Standard normals come
from NumPy's ziggurat implementation, which is pinned here as the one
generation algorithm the package uses.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox, SeedSequence


def _tag_word(tag: str) -> int:
    # crc32 keeps tags inside SeedSequence's uint32 spawn-key words
    return zlib.crc32(tag.encode("utf-8")) & 0xFFFFFFFF


@dataclass(frozen=True)
class SeedTree:
    """A master seed plus the derivation path taken so far."""

    master_seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, tag: str, index: int) -> "SeedTree":
        if index < 0:
            raise ValueError("stream index must be non-negative")
        return SeedTree(self.master_seed, self.path + (_tag_word(tag), int(index)))


def derive_stream(tree: SeedTree, tag: str, index: int = 0) -> Generator:
    """Deterministic child stream for (tag, index) under the tree's path.

    The same (master seed, path) always yields the same stream, regardless
    of call order or thread count.
    """
    node = tree.child(tag, index)
    seq = SeedSequence(node.master_seed, spawn_key=node.path)
    return Generator(Philox(seq))


def standard_normal(stream: Generator, size=None):
    """Standard normal draws from a derived stream (ziggurat, float64)."""
    return stream.standard_normal(size)
