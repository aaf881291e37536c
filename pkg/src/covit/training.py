"""Dataset assembly, cross-entropy training and evaluation metrics.

Training is plain mini-batch Adam with decoupled weight decay and early
stopping on the validation loss; every stream of randomness (shuffling,
dropout, subsampling, masking) is derived from the run seed, so a rerun is
bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .genome_io import Genome, GenomeSet, mask_random
from .model import (
    ModelConfig,
    ModelParams,
    decay_names,
    forward,
    grow,
    init_params,
)
from .rng import generator, mix64, str_key
from .sketcher import SketchConfig, extract_fragments
from .tensor import AdamState, Tensor, adam_step, no_grad


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during fitting."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4  # no value is reported for this; tune per run
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class LabeledDataset:
    """Fragment feature tensors with integer class labels."""

    features: np.ndarray  # (N, n_fragments, f, 4) uint8
    labels: np.ndarray  # (N,) int64
    ids: list[str]
    class_names: list[str]
    split: str = ""

    def __post_init__(self):
        if self.features.ndim != 4:
            raise ValueError("features must have shape (N, n, f, 4)")
        if len(self.ids) != self.features.shape[0] or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("features, labels and ids must align")
        if self.labels.size and self.labels.max() >= len(self.class_names):
            raise ValueError("label index out of range of class_names")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray, split: str = "") -> "LabeledDataset":
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            [self.ids[i] for i in idx],
            self.class_names,
            split or self.split,
        )


def build_dataset(
    gs: GenomeSet,
    cfg: SketchConfig,
    per_class_cap: int = 1024,
    min_class_size: int = 1,
    seed: int = 0,
    threads: int | None = None,
) -> LabeledDataset:
    """Group labeled genomes by lineage, apply size filters, extract features.

    Classes smaller than min_class_size are dropped; classes larger than
    per_class_cap are subsampled deterministically per (seed, class).
    """
    if not gs.labels:
        raise ValueError("genome set has no labels")
    by_class: dict[str, list[str]] = {}
    for g in gs:
        name = gs.labels.get(g.id)
        if name is not None:
            by_class.setdefault(name, []).append(g.id)
    kept_classes = sorted(n for n, ids in by_class.items() if len(ids) >= min_class_size)
    if not kept_classes:
        raise ValueError(f"no classes with at least {min_class_size} samples")
    chosen: list[tuple[str, str]] = []
    for name in kept_classes:
        ids = by_class[name]
        if len(ids) > per_class_cap:
            rng = generator(seed, 0xCA, str_key(name))
            keep = set(rng.choice(len(ids), size=per_class_cap, replace=False).tolist())
            ids = [gid for i, gid in enumerate(ids) if i in keep]
        chosen.extend((gid, name) for gid in ids)
    class_index = {name: i for i, name in enumerate(kept_classes)}
    genomes = [gs.by_id(gid) for gid, _ in chosen]
    feats = extract_features(genomes, cfg, threads=threads)
    labels = np.array([class_index[name] for _, name in chosen], dtype=np.int64)
    return LabeledDataset(feats, labels, [gid for gid, _ in chosen], kept_classes)


def extract_features(genomes: list[Genome], cfg: SketchConfig, threads: int | None = None) -> np.ndarray:
    """Fragment tensors for many genomes, order preserved; optionally threaded."""
    if threads and threads > 1 and len(genomes) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            feats = list(pool.map(lambda g: extract_fragments(g, cfg), genomes))
    else:
        feats = [extract_fragments(g, cfg) for g in genomes]
    return np.stack(feats) if feats else np.zeros((0, cfg.n, cfg.f, 4), dtype=np.uint8)


def split(
    ds: LabeledDataset,
    val_count: int,
    test_count: int,
    seed: int,
    stratify: bool = False,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Disjoint, exhaustive train/val/test split, deterministic per seed.

    With stratify=True the val and test counts are allocated per class
    (largest remainder), which keeps balanced suites exactly balanced.
    """
    n = len(ds)
    if val_count + test_count >= n:
        raise ValueError("val_count + test_count must be smaller than the dataset")
    if not stratify:
        perm = generator(seed, 0x59).permutation(n)
        val_idx = perm[:val_count]
        test_idx = perm[val_count : val_count + test_count]
        train_idx = perm[val_count + test_count :]
    else:
        val_parts: list[np.ndarray] = []
        test_parts: list[np.ndarray] = []
        train_parts: list[np.ndarray] = []
        counts = _stratified_counts(ds.labels, len(ds.class_names), val_count, test_count, n)
        for c, (vc, tc) in enumerate(counts):
            where = np.where(ds.labels == c)[0]
            perm = where[generator(seed, 0x59, c).permutation(where.size)]
            val_parts.append(perm[:vc])
            test_parts.append(perm[vc : vc + tc])
            train_parts.append(perm[vc + tc :])
        val_idx = np.concatenate(val_parts)
        test_idx = np.concatenate(test_parts)
        train_idx = np.concatenate(train_parts)
    return (
        ds.subset(np.sort(train_idx), "train"),
        ds.subset(np.sort(val_idx), "val"),
        ds.subset(np.sort(test_idx), "test"),
    )


def _stratified_counts(labels, num_classes, val_count, test_count, n):
    sizes = np.bincount(labels, minlength=num_classes)
    out = []
    for want in (val_count, test_count):
        exact = sizes * want / n
        base = np.floor(exact).astype(int)
        rem = want - base.sum()
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:rem]] += 1
        out.append(base)
    return list(zip(out[0], out[1]))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Categorical cross-entropy of one distribution, clamped at 1e-12."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(float(probs[label]), 1e-12)))


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean clamped cross-entropy of a probability batch (graph version)."""
    onehot = np.zeros(probs.shape, dtype=probs.dtype)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = (probs * Tensor(onehot)).sum(axis=-1)
    return -(picked.maximum(1e-12).log().mean())


@dataclass
class TrainLogRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_top1: float
    seconds: float


@dataclass
class TrainLog:
    rows: list[TrainLogRow] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_top1,seconds"]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_top1!r},{r.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"


def rank_classes(probs: np.ndarray) -> np.ndarray:
    """Class indices by descending probability; ties broken by class index."""
    c = probs.shape[-1]
    return np.lexsort((np.arange(c), -probs))


def evaluate(params: ModelParams, ds: LabeledDataset, batch_size: int = 64) -> tuple[float, float]:
    """Mean loss and top-1 accuracy in inference mode."""
    losses = []
    correct = 0
    with no_grad():
        for start in range(0, len(ds), batch_size):
            stop = min(start + batch_size, len(ds))
            frags = ds.features[start:stop].astype(np.float64)
            labels = ds.labels[start:stop]
            probs = forward(params, frags, train=False)
            losses.append(cross_entropy_loss(probs, labels).item() * (stop - start))
            pred = np.array([rank_classes(row)[0] for row in probs.data])
            correct += int((pred == labels).sum())
    return sum(losses) / len(ds), correct / len(ds)


def fit(
    params: ModelParams,
    train: LabeledDataset,
    val: LabeledDataset,
    tc: TrainConfig,
) -> tuple[ModelParams, TrainLog]:
    """Mini-batch Adam with early stopping on best validation loss.

    Returns the parameters of the best-validation-loss epoch and the per
    epoch log.  Frozen layers are never updated.  Aborts with
    TrainingDivergedError if the loss becomes non-finite.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    if len(val) == 0:
        raise ValueError("validation set is empty")
    trainable = params.trainable()
    state = AdamState.init({k: t.data for k, t in trainable.items()})
    decayed = decay_names(params.cfg) & set(trainable)
    log = TrainLog()
    best = params.clone()
    best_loss = np.inf
    stale = 0
    for epoch in range(tc.max_epochs):
        started = time.perf_counter()
        perm = generator(tc.seed, 0xE7, epoch).permutation(len(train))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(train), tc.batch_size)):
            batch = perm[start : start + tc.batch_size]
            frags = train.features[batch].astype(np.float64)
            labels = train.labels[batch]
            params.zero_grads()
            probs = forward(
                params, frags, train=True, dropout_seed=mix64(tc.seed, epoch, b)
            )
            loss = cross_entropy_loss(probs, labels)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            loss.backward()
            grads = {
                k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in trainable.items()
            }
            new_values, state = adam_step(
                {k: t.data for k, t in trainable.items()},
                grads,
                state,
                lr=tc.lr,
                beta1=tc.beta1,
                beta2=tc.beta2,
                eps=tc.eps,
                weight_decay=tc.weight_decay,
                decay_names=decayed,
            )
            for k, t in trainable.items():
                t.data = new_values[k]
            epoch_loss += loss.item() * batch.size
        val_loss, val_top1 = evaluate(params, val)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        log.rows.append(
            TrainLogRow(
                epoch,
                epoch_loss / len(train),
                val_loss,
                val_top1,
                time.perf_counter() - started,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.clone()
            best.meta["epoch"] = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    return best, log


def layerwise_pretrain(
    cfg: ModelConfig,
    schedule: list[tuple[int, int]],
    train: LabeledDataset,
    val: LabeledDataset,
    tc: TrainConfig,
    seed: int | None = None,
) -> tuple[ModelParams, list[TrainLog]]:
    """Greedy stage-wise growth: train, append frozen-prefixed layers, refit.

    Each (layers_to_add, epochs) stage appends that many fresh encoder layers
    (freezing the existing ones) and runs exactly `epochs` epochs; the final
    model has the summed layer count.
    """
    if not schedule:
        raise ValueError("schedule must be non-empty")
    seed = tc.seed if seed is None else seed
    first_layers, first_epochs = schedule[0]
    params = init_params(replace(cfg, L=first_layers), seed)
    logs: list[TrainLog] = []
    for stage, (add, epochs) in enumerate(schedule):
        if stage > 0:
            params = grow(params, add, freeze_existing=True, seed=mix64(seed, 0x9A, stage))
        if epochs > 0:
            stage_seed = tc.seed if stage == 0 else mix64(tc.seed, stage)
            stage_tc = replace(tc, max_epochs=epochs, patience=max(epochs, 1), seed=stage_seed)
            params, log = fit(params, train, val, stage_tc)
            logs.append(log)
        else:
            logs.append(TrainLog())
    return params, logs


@dataclass
class RankedPrediction:
    """Classes for one genome sorted by descending probability."""

    genome_id: str
    class_names: list[str]
    probabilities: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.probabilities) > 0):
            raise ValueError("probabilities must be non-increasing")


def predict(
    params: ModelParams,
    genome: Genome,
    cfg: SketchConfig,
    top_n: int = 5,
    class_names: list[str] | None = None,
) -> RankedPrediction:
    """Full pipeline genome -> sketch -> fragments -> class ranking.

    Always returns a ranking; a fully masked genome still classifies.
    """
    if cfg.f != params.cfg.f or cfg.n != params.cfg.n_fragments:
        raise ValueError(
            f"sketch config (f={cfg.f}, n={cfg.n}) does not match model "
            f"(f={params.cfg.f}, n={params.cfg.n_fragments})"
        )
    names = class_names or [str(i) for i in range(params.cfg.num_classes)]
    frags = extract_fragments(genome, cfg).astype(np.float64)
    with no_grad():
        probs = forward(params, frags, train=False).data
    order = rank_classes(probs)[: max(1, min(top_n, params.cfg.num_classes))]
    return RankedPrediction(genome.id, [names[i] for i in order], probs[order])


def top_n_accuracy(
    preds: list[RankedPrediction], labels: dict[str, str], n: int
) -> float:
    """Fraction of predictions whose true class is within the first n ranks."""
    if not preds:
        raise ValueError("no predictions")
    hits = 0
    for p in preds:
        if p.genome_id not in labels:
            raise ValueError(f"missing label for genome {p.genome_id!r}")
        if labels[p.genome_id] in p.class_names[:n]:
            hits += 1
    return hits / len(preds)


def placement_rate(preds: list[RankedPrediction], attempted: int) -> float:
    """Fraction of attempted genomes that received any ranking at all."""
    if attempted == 0:
        raise ValueError("attempted count must be positive")
    return len(preds) / attempted


@dataclass
class EvalReport:
    ambiguity_rate: float
    placement_rate: float
    top1: float
    top2: float
    top5: float
    per_class: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.top1 <= self.top2 <= self.top5 <= 1.0:
            raise ValueError("top-n accuracies must be non-decreasing in n")


def reports_to_csv(reports: list[EvalReport]) -> str:
    lines = ["ambiguity_rate,placement_rate,top1,top2,top5"]
    for r in reports:
        lines.append(
            f"{r.ambiguity_rate!r},{r.placement_rate!r},{r.top1!r},{r.top2!r},{r.top5!r}"
        )
    return "\n".join(lines) + "\n"


def evaluate_genomes(
    params: ModelParams,
    gs: GenomeSet,
    cfg: SketchConfig,
    class_names: list[str],
    ambiguity_rate: float = 0.0,
    seed: int = 0,
) -> EvalReport:
    """Predict every genome (optionally masked first) and score top-n hits."""
    if not gs.labels:
        raise ValueError("genome set has no labels")
    preds: list[RankedPrediction] = []
    for g in gs:
        if ambiguity_rate > 0:
            g = mask_random(g, ambiguity_rate, mix64(seed, str_key(g.id)))
        preds.append(predict(params, g, cfg, top_n=5, class_names=class_names))
    per_class: dict[str, list[int]] = {}
    for p in preds:
        truth = gs.labels[p.genome_id]
        stats = per_class.setdefault(truth, [0, 0])
        stats[0] += int(p.class_names[0] == truth)
        stats[1] += 1
    return EvalReport(
        ambiguity_rate=ambiguity_rate,
        placement_rate=placement_rate(preds, len(gs)),
        top1=top_n_accuracy(preds, gs.labels, 1),
        top2=top_n_accuracy(preds, gs.labels, 2),
        top5=top_n_accuracy(preds, gs.labels, 5),
        per_class={k: (v[0], v[1]) for k, v in sorted(per_class.items())},
    )


def ambiguity_sweep(
    params: ModelParams,
    test: GenomeSet,
    rates: list[float],
    cfg: SketchConfig,
    seed: int,
    class_names: list[str],
) -> list[EvalReport]:
    """One EvalReport per masking rate; genomes are masked independently
    with per-genome derived seeds and re-sketched from the masked sequence."""
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"ambiguity rate {r} outside [0, 1]")
    return [
        evaluate_genomes(params, test, cfg, class_names, ambiguity_rate=r, seed=seed)
        for r in rates
    ]


def predictions_to_tsv(preds: list[RankedPrediction]) -> str:
    """genome_id, rank, class_name, probability rows for every prediction."""
    lines = ["genome_id\trank\tclass_name\tprobability"]
    for p in preds:
        for rank, (name, prob) in enumerate(zip(p.class_names, p.probabilities), start=1):
            lines.append(f"{p.genome_id}\t{rank}\t{name}\t{prob!r}")
    return "\n".join(lines) + "\n"
