"""Pydantic request/response models for the HTTP API.

Requests carry file paths on the server's filesystem plus optional config:
a key=value file path and/or inline overrides keyed by the same names.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class ConfiguredRequest(BaseModel):
    config_file: str | None = None
    overrides: dict[str, Any] = Field(default_factory=dict)


class SynthRequest(ConfiguredRequest):
    out_dir: str


class SynthResponse(BaseModel):
    out_dir: str
    fasta: str
    labels: str
    genomes: int
    classes: int


class ExtractRequest(ConfiguredRequest):
    fasta: str
    out: str


class ExtractResponse(BaseModel):
    features: str
    written: int
    skipped: list[str]


class TrainRequest(ConfiguredRequest):
    features: str
    labels: str
    out_dir: str
    layerwise: str | None = None
    transfer_from: str | None = None
    num_classes: int | None = None


class TrainResponse(BaseModel):
    checkpoint: str
    trainlog: str
    epochs: int
    best_val_loss: float
    best_val_top1: float
    num_classes: int


class ClassifyRequest(ConfiguredRequest):
    fasta: str
    checkpoint: str
    top_n: int = 5
    out: str | None = None


class RankedClass(BaseModel):
    rank: int
    class_name: str
    probability: float


class GenomePrediction(BaseModel):
    genome_id: str
    ranking: list[RankedClass]


class ClassifyResponse(BaseModel):
    predictions: list[GenomePrediction]
    skipped: list[str]
    out: str | None = None


class EvalRequest(ConfiguredRequest):
    fasta: str
    labels: str
    checkpoint: str
    rates: list[float] = Field(default_factory=lambda: [0.0])
    out: str | None = None


class EvalRow(BaseModel):
    ambiguity_rate: float
    placement_rate: float
    top1: float
    top2: float
    top5: float


class EvalResponse(BaseModel):
    reports: list[EvalRow]
    out: str | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
