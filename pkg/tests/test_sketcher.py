import numpy as np
import pytest

from covit.genome_io import Genome, seq_to_codes
from covit.rng import generator
from covit.sketcher import (
    Kmer,
    Sketch,
    SketchConfig,
    digest_lanes,
    enumerate_kmers,
    extract_fragments,
    hash_kmer,
    jaccard_estimate,
    one_hot,
    sketch,
    sketch_genome,
)

# Frozen vectors from docs/kmer_hash.md; any change to the digest function
# invalidates every sketch, feature file and checkpoint.
HASH_VECTORS = [
    ("A", 0, 0x238C33E7543F0D51),
    ("C", 0, 0x66945ABFC287DBF7),
    ("N", 0, 0xF4C7B40FC1A01C01),
    ("ACGT", 0, 0x573304E95E599C51),
    ("ACGT", 1, 0x3DFED46BCE6190F8),
    ("TTTTTTTT", 0, 0xCE6A870500677661),
    ("ACGTACGTACGTACGT", 0, 0x3F296B9A7C0231EC),
    ("ACGTACGTACGTACGT", 0xDEADBEEF, 0xFFE9B58FF0F4AE0E),
    ("NNNNNNNNNNNNNNNN", 7, 0x59017069178B1F46),
    ("ACGTNACGTNACGTNACGTNA", 42, 0xC2F631D6B384ACDE),
]


class TestConfig:
    def test_defaults(self):
        cfg = SketchConfig()
        assert (cfg.k, cfg.f, cfg.n) == (16, 256, 256)

    @pytest.mark.parametrize("kwargs", [dict(k=0), dict(k=9, f=8), dict(n=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SketchConfig(**{"k": 4, "f": 8, "n": 4, **kwargs})


class TestKmer:
    def test_string_round_trip(self):
        for s in ("A", "ACGTN", "TTTGGA", "NAGT"):
            assert str(Kmer.from_str(s)) == s

    def test_packed_order_matches_lexicographic(self):
        # lexicographic under the alphabet order A < C < G < T < N (not ASCII)
        rng = generator(123)
        for _ in range(200):
            a = tuple(rng.integers(0, 5, size=6).tolist())
            b = tuple(rng.integers(0, 5, size=6).tolist())
            ka, kb = Kmer.from_codes(a), Kmer.from_codes(b)
            assert (ka.packed < kb.packed) == (a < b)


class TestHash:
    def test_frozen_vectors(self):
        for seq, seed, digest in HASH_VECTORS:
            assert hash_kmer(Kmer.from_str(seq), seed) == digest, seq

    def test_two_lane_vector(self):
        km = Kmer.from_str("ACGTACGTACGTACGTACGTAC")  # 22 bases -> 2 lanes
        assert hash_kmer(km, 0) == 0xACF01B5485B4065A

    def test_deterministic(self):
        km = Kmer.from_str("ACGTACGTACGTACGT")
        assert hash_kmer(km, 5) == hash_kmer(km, 5)

    def test_avalanche_over_all_8mers(self):
        # every 64-bit output bit flips for 40-60% of single-bit input flips,
        # exhaustively over all 4^8 ACGT 8-mers with seed 0
        k = 8
        grids = np.meshgrid(*[np.arange(4)] * k, indexing="ij")
        codes = np.stack(grids, -1).reshape(-1, k).astype(np.uint64)
        lanes = np.zeros(codes.shape[0], dtype=np.uint64)
        for i in range(k):
            lanes |= codes[:, i] << np.uint64(3 * i)
        base = digest_lanes(lanes[:, None], k, 0)
        flips = np.zeros(64)
        total = 0
        for bit in range(3 * k):
            flipped = digest_lanes((lanes ^ np.uint64(1 << bit))[:, None], k, 0)
            x = base ^ flipped
            flips += [(np.uint64(x >> np.uint64(b)) & np.uint64(1)).sum() for b in range(64)]
            total += x.shape[0]
        rates = flips / total
        assert rates.min() >= 0.40 and rates.max() <= 0.60

    def test_no_collisions_over_corpus(self):
        # distinct 16-mers of a realistic genome yield distinct digests
        rng = generator(77)
        g = Genome("c", "".join("ACGT"[c] for c in rng.integers(0, 4, size=50000)))
        kmers = enumerate_kmers(g, 16)
        digests = {hash_kmer(km, 0) for km in kmers}
        assert len(digests) == len(kmers)


class TestEnumerate:
    def test_exhaustive_windows(self):
        kmers = enumerate_kmers(Genome("g", "ACGT"), 2)
        assert {str(k): p for k, p in kmers.items()} == {"AC": 0, "CG": 1, "GT": 2}

    def test_dedup_keeps_leftmost(self):
        kmers = enumerate_kmers(Genome("g", "AAAA"), 2)
        assert {str(k): p for k, p in kmers.items()} == {"AA": 0}

    def test_n_participates(self):
        kmers = {str(k): p for k, p in enumerate_kmers(Genome("g", "ACNGT"), 2).items()}
        assert kmers["CN"] == 1 and kmers["NG"] == 2

    def test_genome_shorter_than_k(self):
        with pytest.raises(ValueError, match="shorter than k"):
            enumerate_kmers(Genome("g", "ACG"), 4)

    def test_all_windows_covered(self):
        rng = generator(3)
        seq = "".join("ACGT"[c] for c in rng.integers(0, 4, size=300))
        kmers = enumerate_kmers(Genome("g", seq), 5)
        seen = {str(k) for k in kmers}
        assert seen == {seq[i : i + 5] for i in range(len(seq) - 4)}
        for km, pos in kmers.items():
            assert seq.index(str(km)) == pos


class TestSketch:
    def test_small_input_keeps_everything_sorted(self):
        cfg = SketchConfig(k=3, f=6, n=100)
        sk = sketch_genome(Genome("g", "ACGTACGGA"), cfg)
        hashes = [e.hash for e in sk.entries]
        assert hashes == sorted(hashes)
        assert len(sk) == len(enumerate_kmers(Genome("g", "ACGTACGGA"), 3))

    def test_n_one_selects_minimum(self):
        cfg = SketchConfig(k=3, f=6, n=1)
        g = Genome("g", "ACGTACGGATTT")
        sk = sketch_genome(g, cfg)
        all_hashes = [hash_kmer(km, cfg.hash_seed) for km in enumerate_kmers(g, 3)]
        assert len(sk) == 1 and sk.entries[0].hash == min(all_hashes)

    def test_bottom_n_matches_full_sort_oracle(self):
        rng = generator(11)
        kmers = {}
        while len(kmers) < 1000:
            km = Kmer.from_codes(rng.integers(0, 4, size=9))
            kmers.setdefault(km, len(kmers))
        cfg = SketchConfig(k=9, f=9, n=64, hash_seed=5)
        sk = sketch(kmers, cfg)
        oracle = sorted(
            ((hash_kmer(km, 5), km.packed, km) for km in kmers), key=lambda t: t[:2]
        )[:64]
        assert [e.kmer for e in sk.entries] == [t[2] for t in oracle]

    def test_empty_input(self):
        assert len(sketch({}, SketchConfig(k=4, f=8, n=4))) == 0

    def test_deterministic(self):
        g = Genome("g", "ACGTACGGATTTACGGAT")
        cfg = SketchConfig(k=4, f=8, n=5)
        a, b = sketch_genome(g, cfg), sketch_genome(g, cfg)
        assert a.entries == b.entries

    def test_containment_property(self):
        # bottom-n of a union only contains k-mers from the per-set sketches
        rng = generator(21)
        cfg = SketchConfig(k=8, f=8, n=32)
        for trial in range(5):
            a = {Kmer.from_codes(rng.integers(0, 4, size=8)): i for i in range(200)}
            b = {Kmer.from_codes(rng.integers(0, 4, size=8)): i for i in range(200)}
            union = {**a, **b}
            sku = {e.kmer for e in sketch(union, cfg).entries}
            ska = {e.kmer for e in sketch(a, cfg).entries}
            skb = {e.kmer for e in sketch(b, cfg).entries}
            assert sku <= (ska | skb)

    def test_point_mutation_locality(self):
        # one substitution removes at most k distinct k-mers and adds at most
        # k, so the sketch changes by at most 2k entries per direction
        rng = generator(31)
        k = 6
        seq = "".join("ACGT"[c] for c in rng.integers(0, 4, size=2000))
        pos = 1000
        old = seq[pos]
        new = "ACGT"[("ACGT".index(old) + 1) % 4]
        mutated = seq[:pos] + new + seq[pos + 1 :]
        set_a = {str(km) for km in enumerate_kmers(Genome("a", seq), k)}
        set_b = {str(km) for km in enumerate_kmers(Genome("b", mutated), k)}
        assert len(set_a - set_b) <= k and len(set_b - set_a) <= k
        cfg = SketchConfig(k=k, f=12, n=64)
        sk_a = sketch_genome(Genome("a", seq), cfg).kmer_set()
        sk_b = sketch_genome(Genome("b", mutated), cfg).kmer_set()
        assert len(sk_a - sk_b) <= 2 * k and len(sk_b - sk_a) <= 2 * k


class TestJaccard:
    def _sketch_of(self, seq: str, cfg: SketchConfig) -> Sketch:
        return sketch_genome(Genome("g", seq), cfg)

    def test_identical_genomes(self):
        cfg = SketchConfig(k=4, f=8, n=16)
        seq = "ACGTACGGATTTACGGAT"
        assert jaccard_estimate(self._sketch_of(seq, cfg), self._sketch_of(seq, cfg)) == 1.0

    def test_disjoint_kmer_sets(self):
        cfg = SketchConfig(k=2, f=4, n=16)
        assert jaccard_estimate(self._sketch_of("AAAA", cfg), self._sketch_of("TTTT", cfg)) == 0.0

    def test_mismatched_cfg_rejected(self):
        a = self._sketch_of("ACGTACGT", SketchConfig(k=4, f=8, n=4))
        b = self._sketch_of("ACGTACGT", SketchConfig(k=4, f=8, n=5))
        with pytest.raises(ValueError, match="different configurations"):
            jaccard_estimate(a, b)

    def test_two_empty_sketches(self):
        cfg = SketchConfig(k=4, f=8, n=4)
        assert jaccard_estimate(sketch({}, cfg), sketch({}, cfg)) == 0.0

    def test_symmetry_and_unit_value(self):
        cfg = SketchConfig(k=4, f=8, n=8)
        a = self._sketch_of("ACGTACGGATTT", cfg)
        b = self._sketch_of("ACGTACGGATTTGGG", cfg)
        assert jaccard_estimate(a, b) == jaccard_estimate(b, a)
        assert (jaccard_estimate(a, b) == 1.0) == (a.kmer_set() == b.kmer_set())

    def test_estimate_tracks_exact_jaccard(self):
        # ten quick seeded trials; the acceptance suite runs the full protocol
        rng = generator(99)
        for trial in range(10):
            common = [Kmer.from_codes(rng.integers(0, 4, size=12)) for _ in range(300)]
            only_a = [Kmer.from_codes(rng.integers(0, 4, size=12)) for _ in range(150)]
            only_b = [Kmer.from_codes(rng.integers(0, 4, size=12)) for _ in range(150)]
            exact = len(common) / (len(common) + len(only_a) + len(only_b))
            cfg = SketchConfig(k=12, f=12, n=256, hash_seed=trial)
            sa = sketch({km: 0 for km in common + only_a}, cfg)
            sb = sketch({km: 0 for km in common + only_b}, cfg)
            assert abs(jaccard_estimate(sa, sb) - exact) <= 0.10


class TestFragments:
    def test_figure_replay_length_19(self):
        # 19-base genome, k=4, n=3, f=8: three fragments, each the anchor
        # 4-mer extended by 2 bases on both sides
        rng = generator(8)
        seq = "".join("ACGT"[c] for c in rng.integers(0, 4, size=19))
        cfg = SketchConfig(k=4, f=8, n=3)
        g = Genome("g", seq)
        frags = extract_fragments(g, cfg)
        assert frags.shape == (3, 8, 4)
        sk = sketch_genome(g, cfg)
        for entry, mat in zip(sk.entries, frags):
            start = entry.anchor - 2
            expected = "".join(
                seq[i] if 0 <= i < len(seq) else "N" for i in range(start, start + 8)
            )
            assert np.array_equal(mat, one_hot(expected))
            assert expected[2:6] == str(entry.kmer)

    def test_boundary_pads_with_zero_rows(self):
        cfg = SketchConfig(k=4, f=8, n=64)
        g = Genome("g", "ACGTGGTA")
        frags = extract_fragments(g, cfg)
        sk = sketch_genome(g, cfg)
        first = next(i for i, e in enumerate(sk.entries) if e.anchor == 0)
        assert np.array_equal(frags[first][:2], np.zeros((2, 4)))

    def test_padding_to_n_with_all_n_fragments(self):
        cfg = SketchConfig(k=2, f=4, n=10)
        frags = extract_fragments(Genome("g", "AAAA"), cfg)  # one distinct 2-mer
        assert frags.shape == (10, 4, 4)
        assert np.array_equal(frags[1:], np.zeros((9, 4, 4)))

    def test_shape_and_row_sums(self):
        rng = generator(14)
        seq = "".join("ACGTN"[c] for c in rng.integers(0, 5, size=500))
        cfg = SketchConfig(k=8, f=32, n=32)
        frags = extract_fragments(Genome("g", seq), cfg)
        assert frags.shape == (32, 32, 4)
        assert frags.reshape(-1, 4).sum(axis=1).max() <= 1

    def test_short_genome_rejected(self):
        with pytest.raises(ValueError, match="shorter than k"):
            extract_fragments(Genome("g", "ACG"), SketchConfig(k=8, f=16, n=4))


class TestOneHot:
    def test_footnote_codes(self):
        assert np.array_equal(one_hot("A"), [[1, 0, 0, 0]])
        assert np.array_equal(one_hot("N"), [[0, 0, 0, 0]])

    def test_acgt_is_identity(self):
        assert np.array_equal(one_hot("ACGT"), np.eye(4))
