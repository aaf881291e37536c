"""Binary container for extracted fragment features ("CVFT").

Layout, all little-endian:
  magic "CVFT" | u32 version | u32 header_len | header JSON
  per genome: u16 id_len | id utf8 | bit-packed (n, f, 4) matrix

The header JSON (canonical form: sorted keys, compact separators) carries the
sketch configuration and the genome count.  Matrices are packed with
numpy's little bit order, ceil(n*f*4/8) bytes each.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .sketcher import SketchConfig

FEATURE_MAGIC = b"CVFT"
FEATURE_VERSION = 1


class FeatureFileError(ValueError):
    """Unreadable or corrupt feature container."""


def write_features(path, cfg: SketchConfig, ids: list[str], features: np.ndarray) -> None:
    if features.shape != (len(ids), cfg.n, cfg.f, 4):
        raise ValueError(
            f"features shape {features.shape} does not match {len(ids)} genomes "
            f"and cfg (n={cfg.n}, f={cfg.f})"
        )
    header = json.dumps(
        {
            "cfg": {"k": cfg.k, "f": cfg.f, "n": cfg.n, "hash_seed": cfg.hash_seed},
            "count": len(ids),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for gid, mat in zip(ids, features):
            gid_b = gid.encode("utf-8")
            fh.write(struct.pack("<H", len(gid_b)))
            fh.write(gid_b)
            fh.write(np.packbits(mat.reshape(-1).astype(np.uint8), bitorder="little").tobytes())


def read_features(path) -> tuple[SketchConfig, list[str], np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(buf):
            raise FeatureFileError("truncated feature file")
        out = buf[pos : pos + count]
        pos += count
        return out

    if take(4) != FEATURE_MAGIC:
        raise FeatureFileError("not a feature file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported feature file version {version}")
    (header_len,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(header_len).decode("utf-8"))
        cfg = SketchConfig(**header["cfg"])
        count = int(header["count"])
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FeatureFileError):
            raise
        raise FeatureFileError(f"invalid feature file header: {exc}") from exc
    bits = cfg.n * cfg.f * 4
    nbytes = (bits + 7) // 8
    ids: list[str] = []
    mats = np.empty((count, cfg.n, cfg.f, 4), dtype=np.uint8)
    for i in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        ids.append(take(id_len).decode("utf-8"))
        packed = np.frombuffer(take(nbytes), dtype=np.uint8)
        mats[i] = np.unpackbits(packed, count=bits, bitorder="little").reshape(cfg.n, cfg.f, 4)
    if pos != len(buf):
        raise FeatureFileError("trailing bytes after feature records")
    return cfg, ids, mats
