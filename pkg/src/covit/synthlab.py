"""Synthetic lineage corpora for exercising the pipeline at desk scale.

A random reference genome is mutated into per-lineage founders, and each
founder into labeled samples, with substitution counts controlled exactly.
Everything is deterministic per seed, with per-lineage derived seeds so
lineages could be generated in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .genome_io import ALPHABET, Genome, GenomeSet, codes_to_seq
from .rng import generator


@dataclass(frozen=True)
class SimConfig:
    ref_length: int = 30000
    num_lineages: int = 8
    lineage_divergence: int = 25
    within_lineage_noise: int = 3
    samples_per_lineage: int = 64
    indel_rate: float = 0.0
    seed: int = 1

    def __post_init__(self):
        if self.ref_length < 1:
            raise ValueError("ref_length must be >= 1")
        if self.num_lineages < 1:
            raise ValueError("num_lineages must be >= 1")
        # a single lineage may sit on the reference itself; multiple lineages
        # need at least one substitution each to be separable
        if self.lineage_divergence < (1 if self.num_lineages > 1 else 0):
            raise ValueError("lineage_divergence must be >= 1 so classes separate")
        if self.within_lineage_noise < 0:
            raise ValueError("within_lineage_noise must be >= 0")
        if self.samples_per_lineage < 1:
            raise ValueError("samples_per_lineage must be >= 1")
        if not 0.0 <= self.indel_rate < 1.0:
            raise ValueError("indel_rate must be in [0, 1)")


@dataclass
class LineageTree:
    """Reference, founders and the substitutions that produced them."""

    reference: Genome
    founders: list[Genome]
    founder_mutations: list[list[tuple[int, str]]] = field(default_factory=list)


def lineage_name(i: int) -> str:
    return f"L{i:02d}"


def _substitute(codes: np.ndarray, count: int, rng, forbidden: np.ndarray | None = None):
    """Apply `count` substitutions at distinct fresh positions; returns
    (new codes, list of (pos, new base))."""
    if forbidden is not None and forbidden.size:
        allowed = np.setdiff1d(np.arange(codes.shape[0]), forbidden)
    else:
        allowed = np.arange(codes.shape[0])
    if count > allowed.shape[0]:
        raise ValueError("not enough positions for requested substitutions")
    positions = rng.choice(allowed, size=count, replace=False)
    out = codes.copy()
    muts = []
    for pos in sorted(int(p) for p in positions):
        old = out[pos]
        new = (old + 1 + rng.integers(0, 3)) % 4  # always a different ACGT base
        out[pos] = new
        muts.append((pos, ALPHABET[new]))
    return out, muts


def _apply_indels(codes: np.ndarray, rate: float, rng) -> np.ndarray:
    """Short (1-3 base) insertions/deletions at `rate` events per base."""
    events = int(rate * codes.shape[0])
    if events == 0:
        return codes
    work = codes
    for _ in range(events):
        size = int(rng.integers(1, 4))
        if rng.random() < 0.5 and work.shape[0] > size + 1:
            pos = int(rng.integers(0, work.shape[0] - size))
            work = np.delete(work, np.s_[pos : pos + size])
        else:
            pos = int(rng.integers(0, work.shape[0] + 1))
            ins = rng.integers(0, 4, size=size).astype(np.uint8)
            work = np.insert(work, pos, ins)
    return work


def simulate(cfg: SimConfig) -> tuple[LineageTree, GenomeSet]:
    """Generate founders and labeled samples per the simulation config."""
    ref_rng = generator(cfg.seed, 0x5EF)
    ref_codes = ref_rng.integers(0, 4, size=cfg.ref_length).astype(np.uint8)
    reference = Genome("reference", codes_to_seq(ref_codes))

    founders: list[Genome] = []
    founder_codes: list[np.ndarray] = []
    founder_positions: list[np.ndarray] = []
    all_mutations: list[list[tuple[int, str]]] = []
    seen: set[bytes] = set()
    for i in range(cfg.num_lineages):
        rng = generator(cfg.seed, 0xF0, i)
        codes, muts = _substitute(ref_codes, cfg.lineage_divergence, rng)
        key = codes.tobytes()
        if key in seen:
            raise ValueError(f"founder collision for lineage {i}; use another seed")
        seen.add(key)
        founders.append(Genome(f"{lineage_name(i)}_founder", codes_to_seq(codes)))
        founder_codes.append(codes)
        founder_positions.append(np.array([p for p, _ in muts], dtype=np.int64))
        all_mutations.append(muts)

    genomes: list[Genome] = []
    labels: dict[str, str] = {}
    for i in range(cfg.num_lineages):
        name = lineage_name(i)
        for j in range(cfg.samples_per_lineage):
            rng = generator(cfg.seed, 0x5A, i, j)
            codes, _ = _substitute(
                founder_codes[i], cfg.within_lineage_noise, rng,
                forbidden=founder_positions[i],
            )
            if cfg.indel_rate > 0:
                codes = _apply_indels(codes, cfg.indel_rate, rng)
            gid = f"{name}_s{j:03d}"
            genomes.append(Genome(gid, codes_to_seq(codes)))
            labels[gid] = name

    tree = LineageTree(reference, founders, all_mutations)
    return tree, GenomeSet(genomes, labels)


def mutation_distance(a: Genome, b: Genome) -> int:
    """Hamming distance in bases; requires equal lengths (substitution mode)."""
    if a.length != b.length:
        raise ValueError("genomes differ in length; distance defined for substitution-only mode")
    return int(np.count_nonzero(a.codes() != b.codes()))
