"""End-to-end commands behind the service endpoints and the CLI.

Each function takes explicit paths plus a resolved RunConfig, performs one
pipeline stage, writes its outputs (with the resolved configuration beside
them for provenance) and returns a JSON-friendly summary dict.
"""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .featurefile import read_features, write_features
from .genome_io import (
    FastaError,
    GenomeSet,
    read_fasta,
    read_labels,
    write_fasta_file,
    write_labels,
)
from .model import (
    init_params,
    load_checkpoint,
    save_checkpoint,
    transfer_head,
)
from .sketcher import SketchConfig
from .synthlab import simulate
from .training import (
    LabeledDataset,
    ambiguity_sweep,
    extract_features,
    fit,
    layerwise_pretrain,
    predict,
    predictions_to_tsv,
    reports_to_csv,
    split,
)


def worker_count() -> int:
    """Worker cap: COVIT_THREADS when set, else the CPU count."""
    env = os.environ.get("COVIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"COVIT_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _write_provenance(directory: Path, config: RunConfig) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run_config.txt").write_text(config.resolved_text())


def _sidecar(out_path: Path, config: RunConfig) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out_path) + ".run_config.txt").write_text(config.resolved_text())


def run_synth(out_dir: str | Path, config: RunConfig) -> dict:
    """Simulate a labeled corpus and write FASTA + labels + manifest."""
    sim = config.sim_config()
    out = Path(out_dir)
    _write_provenance(out, config)
    tree, gs = simulate(sim)
    fasta = out / "genomes.fasta"
    labels = out / "labels.tsv"
    write_fasta_file(gs, fasta)
    write_labels(gs.labels, labels)
    sim_keys = sorted(k for k in config.values if k.startswith("sim.")) + ["seed"]
    (out / "sim_config.txt").write_text(
        "".join(f"{k}={config.values[k]}\n" for k in sim_keys)
    )
    classes = sorted(set(gs.labels.values()))
    (out / "manifest.txt").write_text(
        "genomes.fasta\nlabels.tsv\nsim_config.txt\nrun_config.txt\n"
        f"genomes={len(gs)}\nclasses={len(classes)}\n"
    )
    return {
        "out_dir": str(out),
        "fasta": str(fasta),
        "labels": str(labels),
        "genomes": len(gs),
        "classes": len(classes),
    }


def run_extract(fasta: str | Path, out: str | Path, config: RunConfig) -> dict:
    """Extract fragment features for every long-enough genome into a CVFT file."""
    cfg = config.sketch_config()
    try:
        gs = read_fasta(fasta)
    except FileNotFoundError as exc:
        raise ConfigError(f"FASTA file not found: {fasta}") from exc
    except FastaError as exc:
        raise ConfigError(f"{fasta}: {exc}") from exc
    kept = [g for g in gs if g.length >= cfg.k]
    skipped = [g.id for g in gs if g.length < cfg.k]
    feats = extract_features(kept, cfg, threads=worker_count())
    out = Path(out)
    _sidecar(out, config)
    write_features(out, cfg, [g.id for g in kept], feats)
    return {
        "features": str(out),
        "written": len(kept),
        "skipped": skipped,
    }


def _dataset_from_files(features_path, labels_path) -> tuple[LabeledDataset, SketchConfig]:
    try:
        cfg, ids, feats = read_features(features_path)
    except FileNotFoundError as exc:
        raise ConfigError(f"feature file not found: {features_path}") from exc
    try:
        label_map = read_labels(labels_path)
    except FileNotFoundError as exc:
        raise ConfigError(f"labels file not found: {labels_path}") from exc
    missing = [gid for gid in ids if gid not in label_map]
    if missing:
        raise ConfigError(f"no label for genome id {missing[0]!r} (and {len(missing) - 1} more)")
    class_names = sorted(set(label_map[gid] for gid in ids))
    index = {name: i for i, name in enumerate(class_names)}
    labels = np.array([index[label_map[gid]] for gid in ids], dtype=np.int64)
    return LabeledDataset(feats, labels, list(ids), class_names), cfg


def _parse_layerwise(text: str) -> list[tuple[int, int]]:
    """Parse a growth schedule like '2:60,2:120' into (layers, epochs) pairs."""
    schedule = []
    for part in text.split(","):
        try:
            layers, epochs = part.split(":")
            schedule.append((int(layers), int(epochs)))
        except ValueError as exc:
            raise ConfigError(
                f"bad layerwise schedule {text!r}; expected 'layers:epochs,...'"
            ) from exc
    if not schedule or any(l < 1 or e < 0 for l, e in schedule):
        raise ConfigError(f"bad layerwise schedule {text!r}")
    return schedule


def run_train(
    features_path: str | Path,
    labels_path: str | Path,
    out_dir: str | Path,
    config: RunConfig,
    layerwise: str | None = None,
    transfer_from: str | Path | None = None,
    num_classes: int | None = None,
) -> dict:
    """Train (plain, layer-wise, or transfer) and write checkpoint + log."""
    from .model import CheckpointError  # local to keep import surface small

    ds, feat_cfg = _dataset_from_files(features_path, labels_path)
    if num_classes is not None and num_classes != len(ds.class_names):
        raise ConfigError(
            f"--classes {num_classes} does not match {len(ds.class_names)} labeled classes"
        )
    if layerwise and transfer_from:
        raise ConfigError("--layerwise and --transfer-from are mutually exclusive")
    tc = config.train_config()
    val_count = config["data.val_count"] or max(1, len(ds) // 10)
    if val_count >= len(ds):
        raise ConfigError(f"data.val_count {val_count} too large for {len(ds)} samples")
    train, val, _ = split(ds, val_count, 0, seed=tc.seed, stratify=True)

    logs = []
    if transfer_from:
        try:
            base = load_checkpoint(transfer_from)
        except FileNotFoundError as exc:
            raise ConfigError(f"checkpoint not found: {transfer_from}") from exc
        except CheckpointError as exc:
            raise ConfigError(str(exc)) from exc
        if base.cfg.f != feat_cfg.f or base.cfg.n_fragments != feat_cfg.n:
            raise ConfigError(
                f"checkpoint (f={base.cfg.f}, n={base.cfg.n_fragments}) does not match "
                f"feature file (f={feat_cfg.f}, n={feat_cfg.n})"
            )
        params = transfer_head(base, len(ds.class_names), seed=tc.seed)
        params, log = fit(params, train, val, tc)
        logs.append(log)
    else:
        mcfg = config.model_config(len(ds.class_names))
        if mcfg.f != feat_cfg.f or mcfg.n_fragments != feat_cfg.n:
            raise ConfigError(
                f"model (f={mcfg.f}, n={mcfg.n_fragments}) does not match feature file "
                f"(f={feat_cfg.f}, n={feat_cfg.n}); set sketch.f/sketch.n accordingly"
            )
        if layerwise:
            schedule = _parse_layerwise(layerwise)
            if sum(l for l, _ in schedule) != mcfg.L:
                mcfg = replace(mcfg, L=sum(l for l, _ in schedule))
            params, stage_logs = layerwise_pretrain(mcfg, schedule, train, val, tc)
            logs.extend(stage_logs)
        else:
            params = init_params(mcfg, tc.seed)
            params, log = fit(params, train, val, tc)
            logs.append(log)

    params.meta["class_names"] = list(ds.class_names)
    params.meta["sketch"] = {
        "k": feat_cfg.k,
        "f": feat_cfg.f,
        "n": feat_cfg.n,
        "hash_seed": feat_cfg.hash_seed,
    }
    params.meta["seed"] = tc.seed
    out = Path(out_dir)
    _write_provenance(out, config)
    ckpt = out / "checkpoint.cvit"
    save_checkpoint(params, ckpt)
    rows = [r for log in logs for r in log.rows]
    log_csv = out / "trainlog.csv"
    header = "epoch,train_loss,val_loss,val_top1,seconds\n"
    body = "".join(
        f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_top1!r},{r.seconds:.3f}\n"
        for r in rows
    )
    log_csv.write_text(header + body)
    best_val = min((r.val_loss for r in rows), default=float("nan"))
    best_top1 = max((r.val_top1 for r in rows), default=float("nan"))
    return {
        "checkpoint": str(ckpt),
        "trainlog": str(log_csv),
        "epochs": len(rows),
        "best_val_loss": best_val,
        "best_val_top1": best_top1,
        "num_classes": len(ds.class_names),
    }


def _load_model_for_inference(checkpoint, config: RunConfig, sketch_overridden: bool):
    from .model import CheckpointError

    try:
        params = load_checkpoint(checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {checkpoint}") from exc
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    stored = params.meta.get("sketch")
    if sketch_overridden or not stored:
        cfg = config.sketch_config()
    else:
        cfg = SketchConfig(**stored)
    if cfg.f != params.cfg.f or cfg.n != params.cfg.n_fragments:
        raise ConfigError(
            f"sketch config (f={cfg.f}, n={cfg.n}) does not match checkpoint "
            f"(f={params.cfg.f}, n={params.cfg.n_fragments})"
        )
    names = params.meta.get("class_names") or [
        str(i) for i in range(params.cfg.num_classes)
    ]
    if len(names) != params.cfg.num_classes:
        raise ConfigError("checkpoint class names do not match its class count")
    return params, cfg, names


def run_classify(
    fasta: str | Path,
    checkpoint: str | Path,
    config: RunConfig,
    top_n: int = 5,
    out: str | Path | None = None,
    sketch_overridden: bool = False,
) -> dict:
    """Rank lineages for every genome in a FASTA file."""
    params, cfg, names = _load_model_for_inference(checkpoint, config, sketch_overridden)
    try:
        gs = read_fasta(fasta)
    except FileNotFoundError as exc:
        raise ConfigError(f"FASTA file not found: {fasta}") from exc
    except FastaError as exc:
        raise ConfigError(f"{fasta}: {exc}") from exc
    preds = []
    skipped = []
    for g in gs:
        if g.length < cfg.k:
            skipped.append(g.id)
            continue
        preds.append(predict(params, g, cfg, top_n=top_n, class_names=names))
    tsv = predictions_to_tsv(preds)
    result = {
        "predictions": [
            {
                "genome_id": p.genome_id,
                "ranking": [
                    {"rank": i + 1, "class_name": c, "probability": float(q)}
                    for i, (c, q) in enumerate(zip(p.class_names, p.probabilities))
                ],
            }
            for p in preds
        ],
        "skipped": skipped,
    }
    if out is not None:
        out = Path(out)
        _sidecar(out, config)
        out.write_text(tsv)
        result["out"] = str(out)
    return result


def run_eval(
    fasta: str | Path,
    labels_path: str | Path,
    checkpoint: str | Path,
    config: RunConfig,
    rates: list[float],
    out: str | Path | None = None,
    sketch_overridden: bool = False,
) -> dict:
    """Masked-ambiguity sweep over a labeled FASTA; one report row per rate."""
    params, cfg, names = _load_model_for_inference(checkpoint, config, sketch_overridden)
    try:
        gs = read_fasta(fasta)
    except FileNotFoundError as exc:
        raise ConfigError(f"FASTA file not found: {fasta}") from exc
    except FastaError as exc:
        raise ConfigError(f"{fasta}: {exc}") from exc
    try:
        labels = read_labels(labels_path)
    except FileNotFoundError as exc:
        raise ConfigError(f"labels file not found: {labels_path}") from exc
    known_ids = {g.id for g in gs}
    labels = {gid: name for gid, name in labels.items() if gid in known_ids}
    unlabeled = sorted(known_ids - set(labels))
    if unlabeled:
        raise ConfigError(f"no label for genome id {unlabeled[0]!r}")
    unknown = sorted(set(labels.values()) - set(names))
    if unknown:
        raise ConfigError(f"label {unknown[0]!r} is not a class of this checkpoint")
    gs = GenomeSet(list(gs), labels)
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"ambiguity rate {r} outside [0, 1]")
    reports = ambiguity_sweep(params, gs, rates, cfg, seed=config["seed"], class_names=names)
    csv = reports_to_csv(reports)
    result = {
        "reports": [
            {
                "ambiguity_rate": r.ambiguity_rate,
                "placement_rate": r.placement_rate,
                "top1": r.top1,
                "top2": r.top2,
                "top5": r.top5,
            }
            for r in reports
        ]
    }
    if out is not None:
        out = Path(out)
        _sidecar(out, config)
        out.write_text(csv)
        result["out"] = str(out)
    return result
