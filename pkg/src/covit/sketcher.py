"""MinHash k-mer sketching and anchor-fragment feature extraction.

A genome is reduced to the n distinct k-mers with the smallest 64-bit
digests.  Each selected k-mer's leftmost occurrence is the anchor of a
fixed-length fragment, one-hot encoded into an f x 4 matrix (N rows are all
zero).  The digest function is bit-exact and documented, with frozen test
vectors, in docs/kmer_hash.md.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .genome_io import ALPHABET, Genome, seq_to_codes

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_FMIX1 = np.uint64(0xFF51AFD7ED558CCD)
_FMIX2 = np.uint64(0xC4CEB9FE1A85EC53)
_ROT = np.uint64(31)
_MASK64 = (1 << 64) - 1

#: bases per 64-bit lane at 3 bits each (bit 63 unused)
LANE_BASES = 21

# one-hot rows indexed by base code; N (code 4) is all zero
_ONE_HOT = np.zeros((5, 4), dtype=np.uint8)
_ONE_HOT[:4] = np.eye(4, dtype=np.uint8)


@dataclass(frozen=True)
class SketchConfig:
    """k-mer length, fragment length, sketch size and digest seed."""

    k: int = 16
    f: int = 256
    n: int = 256
    hash_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.f < self.k:
            raise ValueError("fragment length f must be >= k")
        if self.n < 1:
            raise ValueError("sketch size n must be >= 1")


@dataclass(frozen=True, order=True)
class Kmer:
    """A k-mer packed 3 bits per base, most significant base first.

    With the first base in the top bits, integer order on `packed` equals
    lexicographic order under A < C < G < T < N for k-mers of equal length.
    """

    packed: int
    k: int

    @classmethod
    def from_str(cls, s: str) -> "Kmer":
        return cls.from_codes(seq_to_codes(s))

    @classmethod
    def from_codes(cls, codes: np.ndarray | list[int]) -> "Kmer":
        packed = 0
        for c in codes:
            packed = (packed << 3) | int(c)
        return cls(packed, len(codes))

    def codes(self) -> np.ndarray:
        out = np.empty(self.k, dtype=np.uint8)
        p = self.packed
        for i in range(self.k - 1, -1, -1):
            out[i] = p & 0b111
            p >>= 3
        return out

    def __str__(self) -> str:
        return "".join(ALPHABET[c] for c in self.codes())


class SketchEntry(NamedTuple):
    kmer: Kmer
    anchor: int
    hash: int


@dataclass(frozen=True)
class Sketch:
    """Bottom-n sketch: entries sorted ascending by (hash, packed k-mer)."""

    cfg: SketchConfig
    entries: tuple[SketchEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def kmer_set(self) -> frozenset[Kmer]:
        return frozenset(e.kmer for e in self.entries)


def _rotl(x: np.ndarray) -> np.ndarray:
    return (x << _ROT) | (x >> (np.uint64(64) - _ROT))


def _fmix64(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(33))
    x = x * _FMIX1
    x = x ^ (x >> np.uint64(33))
    x = x * _FMIX2
    x = x ^ (x >> np.uint64(33))
    return x


def digest_lanes(lanes: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Digest an array of lane sequences; lanes has shape (count, n_lanes).

    The initial state is seed XOR (k * golden ratio); each lane is folded in
    by XOR, multiply and rotate; the murmur3 finalizer produces the digest.
    """
    lanes = np.atleast_2d(np.asarray(lanes, dtype=np.uint64))
    init = ((seed & _MASK64) ^ ((k * 0x9E3779B97F4A7C15) & _MASK64)) & _MASK64
    state = np.full(lanes.shape[0], init, dtype=np.uint64)
    for j in range(lanes.shape[1]):
        state = _rotl((state ^ lanes[:, j]) * _GOLDEN)
    return _fmix64(state)


def _codes_to_lanes(win: np.ndarray) -> np.ndarray:
    """Pack window code rows (count, k) into little-endian 3-bit lanes."""
    count, k = win.shape
    n_lanes = (k + LANE_BASES - 1) // LANE_BASES
    lanes = np.zeros((count, n_lanes), dtype=np.uint64)
    w = win.astype(np.uint64)
    for i in range(k):
        lane, slot = divmod(i, LANE_BASES)
        lanes[:, lane] |= w[:, i] << np.uint64(3 * slot)
    return lanes


def hash_kmer(km: Kmer, seed: int) -> int:
    """64-bit digest of one k-mer under the reference digest function."""
    lanes = _codes_to_lanes(km.codes()[None, :])
    return int(digest_lanes(lanes, km.k, seed)[0])


def _distinct_windows(codes: np.ndarray, k: int):
    """All distinct k-mer windows of a code array, in lexicographic order.

    Returns (win_codes (D, k) uint8, anchors (D,) int64) where anchors are
    leftmost occurrence positions.  np.unique sorts ascending and reports
    first occurrences, which gives both the lexicographic order and the
    leftmost-anchor rule in one pass.
    """
    if k > codes.shape[0]:
        raise ValueError("genome shorter than k")
    win = np.lib.stride_tricks.sliding_window_view(codes, k)
    if k <= LANE_BASES:
        shifts = (3 * (k - 1 - np.arange(k))).astype(np.uint64)
        packed = np.bitwise_or.reduce(win.astype(np.uint64) << shifts, axis=1)
        _, first = np.unique(packed, return_index=True)
    else:
        _, first = np.unique(win, axis=0, return_index=True)
    return win[first], first


def enumerate_kmers(g: Genome, k: int) -> dict[Kmer, int]:
    """Distinct k-mers of a genome mapped to their leftmost start position."""
    win, anchors = _distinct_windows(g.codes(), k)
    return {Kmer.from_codes(row): int(pos) for row, pos in zip(win, anchors)}


def sketch(kmers: dict[Kmer, int] | Iterable[tuple[Kmer, int]], cfg: SketchConfig) -> Sketch:
    """Bottom-n selection by digest; ties broken by packed k-mer value."""
    items = list(kmers.items()) if isinstance(kmers, dict) else list(kmers)
    if not items:
        return Sketch(cfg, ())
    items.sort(key=lambda it: it[0].packed)
    lanes = _codes_to_lanes(np.stack([it[0].codes() for it in items]))
    digests = digest_lanes(lanes, items[0][0].k, cfg.hash_seed)
    order = np.argsort(digests, kind="stable")[: cfg.n]
    entries = tuple(
        SketchEntry(items[i][0], items[i][1], int(digests[i])) for i in order
    )
    return Sketch(cfg, entries)


def sketch_genome(g: Genome, cfg: SketchConfig) -> Sketch:
    return sketch(enumerate_kmers(g, cfg.k), cfg)


def jaccard_estimate(a: Sketch, b: Sketch) -> float:
    """Jaccard index of the two sketches' k-mer sets.

    Approximates the Jaccard index of the underlying k-mer sets when both
    sketches were built with the same configuration.
    """
    if a.cfg != b.cfg:
        raise ValueError("sketches were built with different configurations")
    sa, sb = a.kmer_set(), b.kmer_set()
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def one_hot(fragment: str | np.ndarray) -> np.ndarray:
    """One-hot encode a fragment; rows for N are all zero."""
    codes = seq_to_codes(fragment) if isinstance(fragment, str) else np.asarray(fragment)
    return _ONE_HOT[codes]


def _sorted_anchor_array(codes: np.ndarray, cfg: SketchConfig) -> np.ndarray:
    """Anchors of the sketch-selected k-mers in (hash, packed) order."""
    win, anchors = _distinct_windows(codes, cfg.k)
    lanes = _codes_to_lanes(win)
    digests = digest_lanes(lanes, cfg.k, cfg.hash_seed)
    # windows are already in lexicographic order, so a stable sort on the
    # digest realizes the (hash, packed) order
    order = np.argsort(digests, kind="stable")[: cfg.n]
    return anchors[order]


def extract_fragments(g: Genome, cfg: SketchConfig) -> np.ndarray:
    """Extract exactly n one-hot fragment matrices of shape (f, 4).

    Each sketch anchor at position i yields the window
    g[i - floor((f-k)/2) : i + k + ceil((f-k)/2)]; positions outside the
    genome read as N.  If the sketch has fewer than n entries the list is
    padded with all-N fragments.
    """
    codes = g.codes()
    anchors = _sorted_anchor_array(codes, cfg)
    left = (cfg.f - cfg.k) // 2
    frag_codes = np.full((cfg.n, cfg.f), 4, dtype=np.uint8)
    if anchors.size:
        idx = anchors[:, None] - left + np.arange(cfg.f)[None, :]
        valid = (idx >= 0) & (idx < codes.shape[0])
        frag_codes[: anchors.size] = np.where(
            valid, codes[np.clip(idx, 0, codes.shape[0] - 1)], 4
        )
    return _ONE_HOT[frag_codes]
