"""FASTA parsing, writing and masking for assembled genomes.

Sequences are normalized to the five-letter alphabet A, C, G, T, N.  Every
IUPAC ambiguity code (R, Y, K, S, W, M, B, D, H, V) and any other letter is
collapsed to N, the worst-case ambiguity symbol.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALPHABET = "ACGTN"


class Base(enum.IntEnum):
    """One genome base; the integer value doubles as its numeric code."""

    A = 0
    C = 1
    G = 2
    T = 3
    N = 4


# Uppercase both cases of ACGT, collapse every other letter to N.
_NORMALIZE = str.maketrans(
    "acgt" + "ACGT",
    "ACGT" + "ACGT",
)
_OTHER_LETTERS = "".join(
    c for c in map(chr, range(128)) if c.isalpha() and c.upper() not in "ACGT"
)
_NORMALIZE.update(str.maketrans(_OTHER_LETTERS, "N" * len(_OTHER_LETTERS)))

_INVALID = re.compile(r"[^ACGTN]")

_CODES = np.full(128, 255, dtype=np.uint8)
for _b in Base:
    _CODES[ord(_b.name)] = _b.value


class FastaError(ValueError):
    """Malformed FASTA input; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def seq_to_codes(seq: str) -> np.ndarray:
    """Map an ACGTN string to a uint8 code array (A=0 .. N=4)."""
    raw = np.frombuffer(seq.encode("ascii"), dtype=np.uint8)
    codes = _CODES[raw]
    if codes.max(initial=0) == 255:
        bad = seq[int(np.argmax(codes == 255))]
        raise ValueError(f"invalid base {bad!r}")
    return codes


def codes_to_seq(codes: np.ndarray) -> str:
    return "".join(ALPHABET[c] for c in codes)


@dataclass(frozen=True)
class Genome:
    """One assembled genome: identifier plus normalized base string."""

    id: str
    seq: str
    description: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("genome id must be non-empty")
        if not self.seq:
            raise ValueError(f"genome {self.id!r} has empty sequence")
        if _INVALID.search(self.seq):
            bad = _INVALID.search(self.seq).group()
            raise ValueError(f"genome {self.id!r} contains invalid base {bad!r}")

    @property
    def length(self) -> int:
        return len(self.seq)

    def codes(self) -> np.ndarray:
        return seq_to_codes(self.seq)


@dataclass
class GenomeSet:
    """Ordered genomes plus an optional id -> lineage label map."""

    genomes: list[Genome] = field(default_factory=list)
    labels: dict[str, str] | None = None

    def __post_init__(self):
        ids = [g.id for g in self.genomes]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate genome id {dup!r}")
        if self.labels:
            known = set(ids)
            for gid in self.labels:
                if gid not in known:
                    raise ValueError(f"label refers to unknown genome id {gid!r}")

    def __len__(self) -> int:
        return len(self.genomes)

    def __iter__(self):
        return iter(self.genomes)

    def by_id(self, gid: str) -> Genome:
        for g in self.genomes:
            if g.id == gid:
                return g
        raise KeyError(gid)


def normalize_sequence(raw: str) -> str:
    """Uppercase and collapse non-ACGT letters to N. Idempotent."""
    return raw.translate(_NORMALIZE)


def parse_fasta(text: str | bytes) -> GenomeSet:
    """Parse FASTA text into a GenomeSet.

    Record ids are the header token before the first whitespace; the rest of
    the header is kept as an opaque description.  Bases are case-insensitive
    and normalized to ACGTN.  Raises FastaError (with a line number) on
    structural problems or non-letter sequence characters.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    genomes: list[Genome] = []
    seen: set[str] = set()
    header: tuple[str, str, int] | None = None  # id, description, line no
    chunks: list[str] = []

    def flush():
        if header is None:
            return
        gid, desc, line = header
        seq = "".join(chunks)
        if not seq:
            raise FastaError(f"record {gid!r} has empty sequence", line)
        genomes.append(Genome(gid, seq, desc))

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith(">"):
            flush()
            parts = stripped[1:].split(maxsplit=1)
            if not parts:
                raise FastaError("header has no identifier", lineno)
            gid = parts[0]
            if gid in seen:
                raise FastaError(f"duplicate genome id {gid!r}", lineno)
            seen.add(gid)
            header = (gid, parts[1] if len(parts) > 1 else "", lineno)
            chunks = []
        else:
            if header is None:
                raise FastaError("sequence data before first '>' header", lineno)
            cleaned = normalize_sequence("".join(stripped.split()))
            bad = _INVALID.search(cleaned)
            if bad:
                raise FastaError(f"invalid sequence character {bad.group()!r}", lineno)
            chunks.append(cleaned)
    flush()
    if not genomes:
        raise FastaError("empty FASTA input")
    return GenomeSet(genomes)


def write_fasta(gs: GenomeSet, width: int = 70) -> str:
    """Render a GenomeSet as FASTA text; inverse of parse_fasta."""
    if width < 1:
        raise ValueError("width must be >= 1")
    out: list[str] = []
    for g in gs:
        head = f">{g.id} {g.description}".rstrip()
        out.append(head)
        for i in range(0, g.length, width):
            out.append(g.seq[i : i + width])
    return "\n".join(out) + ("\n" if out else "")


def read_fasta(path: str | Path) -> GenomeSet:
    return parse_fasta(Path(path).read_text())


def write_fasta_file(gs: GenomeSet, path: str | Path, width: int = 70) -> None:
    Path(path).write_text(write_fasta(gs, width))


def parse_labels(text: str) -> dict[str, str]:
    """Parse a two-column tab-separated (genome id, lineage) file."""
    labels: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ValueError(f"labels line {lineno}: expected 'id<TAB>lineage'")
        if parts[0] in labels:
            raise ValueError(f"labels line {lineno}: duplicate id {parts[0]!r}")
        labels[parts[0]] = parts[1]
    return labels


def read_labels(path: str | Path) -> dict[str, str]:
    return parse_labels(Path(path).read_text())


def write_labels(labels: dict[str, str], path: str | Path) -> None:
    lines = [f"{gid}\t{name}" for gid, name in labels.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def mask_random(g: Genome, rate: float, seed: int) -> Genome:
    """Replace exactly floor(rate * length) random positions with N.

    Positions are drawn uniformly without replacement from a generator seeded
    with `seed`, so the same (genome, rate, seed) always masks the same sites.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must be in [0, 1], got {rate}")
    count = int(rate * g.length)
    if count == 0:
        return g
    rng = np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))
    positions = rng.choice(g.length, size=count, replace=False)
    arr = np.frombuffer(g.seq.encode("ascii"), dtype=np.uint8).copy()
    arr[positions] = ord("N")
    return Genome(g.id, arr.tobytes().decode("ascii"), g.description)
