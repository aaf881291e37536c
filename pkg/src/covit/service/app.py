"""FastAPI service wrapping the pipeline workflows.

Errors are reported as a uniform envelope {"kind", "message"} where kind is
"config" (bad input or configuration), "numeric" (training diverged) or
"internal"; clients map these onto exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, RunConfig
from ..training import TrainingDivergedError
from ..workflows import run_classify, run_eval, run_extract, run_synth, run_train
from .schemas import (
    ClassifyRequest,
    ClassifyResponse,
    EvalRequest,
    EvalResponse,
    ExtractRequest,
    ExtractResponse,
    HealthResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, ValueError) as exc:
        raise HTTPException(status_code=400, detail={"kind": "config", "message": str(exc)})
    except TrainingDivergedError as exc:
        raise HTTPException(status_code=500, detail={"kind": "numeric", "message": str(exc)})
    except HTTPException:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        raise HTTPException(
            status_code=500,
            detail={"kind": "internal", "message": f"{type(exc).__name__}: {exc}"},
        )


def _config(req) -> RunConfig:
    try:
        return RunConfig.resolve(req.config_file, req.overrides)
    except FileNotFoundError as exc:
        raise HTTPException(
            status_code=400,
            detail={"kind": "config", "message": f"config file not found: {req.config_file}"},
        ) from exc
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail={"kind": "config", "message": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(
        title="covit",
        version=__version__,
        description="Viral genome lineage placement service",
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        return SynthResponse(**_run(run_synth, req.out_dir, _config(req)))

    @app.post("/extract", response_model=ExtractResponse)
    def extract(req: ExtractRequest) -> ExtractResponse:
        return ExtractResponse(**_run(run_extract, req.fasta, req.out, _config(req)))

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        return TrainResponse(
            **_run(
                run_train,
                req.features,
                req.labels,
                req.out_dir,
                _config(req),
                layerwise=req.layerwise,
                transfer_from=req.transfer_from,
                num_classes=req.num_classes,
            )
        )

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(req: ClassifyRequest) -> ClassifyResponse:
        if req.top_n < 1:
            raise HTTPException(
                status_code=400,
                detail={"kind": "config", "message": "top_n must be >= 1"},
            )
        result = _run(
            run_classify,
            req.fasta,
            req.checkpoint,
            _config(req),
            top_n=req.top_n,
            out=req.out,
            sketch_overridden=any(k.startswith("sketch.") for k in req.overrides),
        )
        return ClassifyResponse(**result)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        result = _run(
            run_eval,
            req.fasta,
            req.labels,
            req.checkpoint,
            _config(req),
            rates=list(req.rates),
            out=req.out,
            sketch_overridden=any(k.startswith("sketch.") for k in req.overrides),
        )
        return EvalResponse(**result)

    return app
