"""The lineage classifier network and its parameter lifecycle.

Pipeline per genome: n one-hot fragment matrices -> 5-parameter base-wise
embedding -> L pre-norm transformer encoder layers (multi-head self-attention
plus a per-position two-matrix MLP, residual connections around both) ->
final layer norm -> mean pool -> affine head -> softmax over lineages.

The fragment sequence enters the encoder in sketch order (ascending digest).
No positional encoding is added: sketch order carries no positional meaning.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .rng import generator, mix64, str_key
from .tensor import (
    Tensor,
    concat_last_axis,
    dropout,
    layer_norm,
    no_grad,
    softmax_rows,
)

CHECKPOINT_MAGIC = b"CVIT"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 1, np.dtype(np.float32): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters; f is tied to d_model."""

    num_classes: int
    L: int = 4
    d_model: int = 256
    h: int = 18
    d_k: int = 96
    d_v: int = 96
    d_ff: int = 1536
    n_fragments: int = 256
    f: int = 256
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.f != self.d_model:
            raise ValueError("fragment length f must equal d_model")
        for name in ("num_classes", "d_model", "h", "d_k", "d_v", "d_ff", "n_fragments", "f"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def layer_tensor_names(i: int, cfg: ModelConfig) -> list[str]:
    names = []
    for l in range(cfg.h):
        names += [f"enc.{i}.q.{l}", f"enc.{i}.k.{l}", f"enc.{i}.v.{l}"]
    names += [f"enc.{i}.o", f"enc.{i}.ff", f"enc.{i}.m"]
    names += [f"enc.{i}.ln1.g", f"enc.{i}.ln1.b", f"enc.{i}.ln2.g", f"enc.{i}.ln2.b"]
    return names


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names mapped to shapes, in serialization order."""
    d, dk, dv, dff = cfg.d_model, cfg.d_k, cfg.d_v, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed.w": (4,), "embed.b": ()}
    for i in range(cfg.L):
        for l in range(cfg.h):
            shapes[f"enc.{i}.q.{l}"] = (d, dk)
            shapes[f"enc.{i}.k.{l}"] = (d, dk)
            shapes[f"enc.{i}.v.{l}"] = (d, dv)
        shapes[f"enc.{i}.o"] = (cfg.h * dv, d)
        shapes[f"enc.{i}.ff"] = (d, dff)
        shapes[f"enc.{i}.m"] = (dff, d)
        for ln in ("ln1", "ln2"):
            shapes[f"enc.{i}.{ln}.g"] = (d,)
            shapes[f"enc.{i}.{ln}.b"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.w"] = (d, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Total number of scalar parameters declared by the config."""
    return int(sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()))


def decay_names(cfg: ModelConfig) -> frozenset[str]:
    """Weight matrices subject to decay; biases and norm parameters are not."""
    out = {"embed.w", "head.w"}
    for i in range(cfg.L):
        out |= {f"enc.{i}.o", f"enc.{i}.ff", f"enc.{i}.m"}
        for l in range(cfg.h):
            out |= {f"enc.{i}.q.{l}", f"enc.{i}.k.{l}", f"enc.{i}.v.{l}"}
    return frozenset(out)


def _draw(name: str, shape: tuple[int, ...], seed: int, dtype) -> np.ndarray:
    """Glorot-normal weights keyed by (seed, name); norm gains one, biases zero."""
    if name.endswith(".g"):
        return np.ones(shape, dtype=dtype)
    if name.endswith(".b"):
        return np.zeros(shape, dtype=dtype)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif shape == (4,):
        fan_in, fan_out = 4, 1  # the embedding neuron: 4 inputs, 1 output
    else:
        fan_in = fan_out = int(np.prod(shape)) or 1
    std = np.sqrt(2.0 / (fan_in + fan_out))
    rng = generator(seed, 0x14, str_key(name))
    return (rng.standard_normal(shape) * std).astype(dtype)


@dataclass
class ModelParams:
    """Named parameter tensors plus per-layer freeze flags and metadata."""

    cfg: ModelConfig
    tensors: dict[str, Tensor]
    frozen: list[bool]
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> dict[str, Tensor]:
        """Tensors the optimizer may update; frozen encoder layers excluded."""
        skip: set[str] = set()
        for i, fr in enumerate(self.frozen):
            if fr:
                skip.update(layer_tensor_names(i, self.cfg))
        return {k: t for k, t in self.tensors.items() if k not in skip}

    def clone(self) -> "ModelParams":
        return ModelParams(
            self.cfg,
            {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()},
            list(self.frozen),
            dict(self.meta),
        )

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def init_params(cfg: ModelConfig, seed: int, dtype=np.float64) -> ModelParams:
    """Fresh parameters: Glorot-normal weights, zero biases, unit norms."""
    tensors = {
        name: Tensor(_draw(name, shape, seed, dtype), requires_grad=True)
        for name, shape in parameter_shapes(cfg).items()
    }
    return ModelParams(cfg, tensors, [False] * cfg.L, {"seed": seed, "epoch": 0})


def embed(params: ModelParams, fragments) -> Tensor:
    """Base-wise linear embedding of one-hot fragments.

    Each position maps to the weight of its base plus the shared bias, so an
    N row (all zero) contributes the bias alone.  Input (..., f, 4) maps to
    (..., f).
    """
    x = fragments if isinstance(fragments, Tensor) else Tensor(np.asarray(fragments, dtype=params["embed.w"].dtype))
    if x.shape[-1] != 4 or x.shape[-2] != params.cfg.f:
        raise ValueError(f"expected fragment matrices of shape ({params.cfg.f}, 4), got {x.shape[-2:]}")
    return (x * params["embed.w"]).sum(axis=-1) + params["embed.b"]


def mhsa_forward(params: ModelParams, layer: int, seq: Tensor) -> Tensor:
    """Multi-head scaled dot-product self-attention over the fragment axis."""
    cfg = params.cfg
    if seq.shape[-1] != cfg.d_model:
        raise ValueError(f"expected width {cfg.d_model}, got {seq.shape[-1]}")
    scale = 1.0 / np.sqrt(cfg.d_k)
    heads = []
    for l in range(cfg.h):
        q = seq @ params[f"enc.{layer}.q.{l}"]
        k = seq @ params[f"enc.{layer}.k.{l}"]
        v = seq @ params[f"enc.{layer}.v.{l}"]
        scores = (q @ k.swapaxes(-1, -2)) * scale
        heads.append(softmax_rows(scores) @ v)
    return concat_last_axis(heads) @ params[f"enc.{layer}.o"]


def mlp_forward(params: ModelParams, layer: int, seq: Tensor) -> Tensor:
    """Per-position feed-forward map: relu(x W_ff) W_m, no biases."""
    return (seq @ params[f"enc.{layer}.ff"]).relu() @ params[f"enc.{layer}.m"]


class DropoutPlan:
    """Per-site dropout streams derived from one seed.

    Each (layer, sublayer) site gets its own counter-based generator, so
    masks are independent of evaluation order and reproducible.
    """

    def __init__(self, seed: int):
        self.seed = seed

    def rng(self, layer: int, sublayer: int) -> np.random.Generator:
        return generator(self.seed, 0xD0, layer, sublayer)


def encoder_layer_forward(
    params: ModelParams,
    layer: int,
    seq: Tensor,
    *,
    train: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    """Pre-norm encoder layer: residual attention then residual MLP."""
    rate = params.cfg.dropout_rate
    plan = plan or DropoutPlan(0)
    attn = mhsa_forward(params, layer, layer_norm(seq, params[f"enc.{layer}.ln1.g"], params[f"enc.{layer}.ln1.b"]))
    seq = seq + dropout(attn, rate, train, plan.rng(layer, 0))
    ff = mlp_forward(params, layer, layer_norm(seq, params[f"enc.{layer}.ln2.g"], params[f"enc.{layer}.ln2.b"]))
    return seq + dropout(ff, rate, train, plan.rng(layer, 1))


def forward(
    params: ModelParams,
    fragments,
    *,
    train: bool = False,
    dropout_seed: int = 0,
) -> Tensor:
    """Class probabilities for one genome (n, f, 4) or a batch (B, n, f, 4)."""
    cfg = params.cfg
    arr = fragments if isinstance(fragments, Tensor) else Tensor(np.asarray(fragments, dtype=params["embed.w"].dtype))
    if arr.ndim not in (3, 4) or arr.shape[-3] != cfg.n_fragments:
        raise ValueError(
            f"expected {cfg.n_fragments} fragment matrices of shape ({cfg.f}, 4), got {arr.shape}"
        )
    batched = arr.ndim == 4
    if not batched:
        arr = arr.reshape((1,) + arr.shape)
    plan = DropoutPlan(dropout_seed)
    x = embed(params, arr)
    for i in range(cfg.L):
        x = encoder_layer_forward(params, i, x, train=train, plan=plan)
    x = layer_norm(x, params["final_ln.g"], params["final_ln.b"])
    pooled = x.mean(axis=-2)
    logits = pooled @ params["head.w"] + params["head.b"]
    probs = softmax_rows(logits)
    return probs if batched else probs.reshape((cfg.num_classes,))


def predict_probs(params: ModelParams, fragments) -> np.ndarray:
    """Inference-mode probabilities as a plain array."""
    with no_grad():
        return forward(params, fragments, train=False).data


def grow(
    params: ModelParams, extra_layers: int, freeze_existing: bool, seed: int = 0
) -> ModelParams:
    """Append freshly initialized encoder layers after the existing stack.

    With freeze_existing the old encoder layers receive no further updates;
    the embedding and head stay trainable either way.
    """
    if extra_layers < 0:
        raise ValueError("extra_layers must be >= 0")
    old_cfg = params.cfg
    new_cfg = replace(old_cfg, L=old_cfg.L + extra_layers)
    dtype = params["embed.w"].dtype
    tensors = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in params.tensors.items()}
    for name, shape in parameter_shapes(new_cfg).items():
        if name not in tensors:
            tensors[name] = Tensor(_draw(name, shape, seed, dtype), requires_grad=True)
    frozen = [fr or freeze_existing for fr in params.frozen] + [False] * extra_layers
    return ModelParams(new_cfg, tensors, frozen, dict(params.meta))


def transfer_head(params: ModelParams, new_num_classes: int, seed: int) -> ModelParams:
    """Keep encoder and embedding bit-exactly; re-initialize the head.

    The head includes the final normalization it consumes, so final_ln is
    reset alongside head.w / head.b.
    """
    if new_num_classes < 1:
        raise ValueError("new_num_classes must be >= 1")
    new_cfg = replace(params.cfg, num_classes=new_num_classes)
    dtype = params["embed.w"].dtype
    tensors = {
        k: Tensor(t.data.copy(), requires_grad=True)
        for k, t in params.tensors.items()
        if not k.startswith(("head.", "final_ln."))
    }
    for name in ("final_ln.g", "final_ln.b", "head.w", "head.b"):
        tensors[name] = Tensor(
            _draw(name, parameter_shapes(new_cfg)[name], seed, dtype), requires_grad=True
        )
    return ModelParams(new_cfg, tensors, list(params.frozen), dict(params.meta))


# -- checkpoint serialization ------------------------------------------------


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt or mismatched checkpoint files."""


def _meta_json(params: ModelParams) -> bytes:
    extra = {k: v for k, v in params.meta.items() if k not in ("epoch", "seed")}
    meta = {
        "config": asdict(params.cfg),
        "frozen": list(params.frozen),
        "epoch": int(params.meta.get("epoch", 0)),
        "seed": int(params.meta.get("seed", 0)),
        "extra": extra,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(params: ModelParams, path) -> None:
    """Write the bit-exact self-describing binary checkpoint."""
    meta = _meta_json(params)
    names = list(parameter_shapes(params.cfg))
    manifest = bytearray()
    payload = bytearray()
    manifest += struct.pack("<I", len(names))
    for name in names:
        t = params.tensors[name]
        data = np.asarray(t.data, order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        entry = name.encode("utf-8")
        manifest += struct.pack("<H", len(entry)) + entry
        manifest += struct.pack("<BB", _DTYPE_CODES[data.dtype], data.ndim)
        manifest += b"".join(struct.pack("<I", d) for d in data.shape)
        manifest += struct.pack("<Q", len(payload))
        payload += data.astype(data.dtype.newbyteorder("<")).tobytes()
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<I", len(meta))
        + meta
        + bytes(manifest)
        + struct.pack("<Q", len(payload))
        + bytes(payload)
    )
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint; the embedded config drives reconstruction."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        cfg = ModelConfig(**meta["config"])
        frozen = [bool(x) for x in meta["frozen"]]
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"invalid checkpoint metadata: {exc}") from exc
    expected = parameter_shapes(cfg)
    if len(frozen) != cfg.L:
        raise CheckpointError("checkpoint manifest does not match model config")
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        dims = tuple(r.unpack(f"<{ndim}I")) if ndim else ()
        (offset,) = r.unpack("<Q")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown tensor dtype code {code}")
        entries.append((name, _CODE_DTYPES[code], dims, offset))
    (payload_len,) = r.unpack("<Q")
    payload = r.take(payload_len)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if [e[0] for e in entries] != list(expected) or any(
        e[2] != expected[e[0]] for e in entries
    ):
        raise CheckpointError("checkpoint manifest does not match model config")
    tensors: dict[str, Tensor] = {}
    for name, dtype, dims, offset in entries:
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if dims else dtype.itemsize
        if offset + nbytes > payload_len:
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<"), count=max(1, int(np.prod(dims, dtype=np.int64))), offset=offset)
        arr = arr.astype(dtype).reshape(dims)
        tensors[name] = Tensor(arr.copy(), requires_grad=True)
    restored = {"epoch": meta["epoch"], "seed": meta["seed"], **meta.get("extra", {})}
    return ModelParams(cfg, tensors, frozen, restored)
