"""FastAPI service wrapping the core package.

Every endpoint is a stateless wrapper over the library: checkpoints are
carried inside requests/responses as base64, tables as CSV text. Training
endpoints run synchronously (desk-scale presets finish in seconds to
minutes); domain errors surface as HTTP 400 with the library message.
"""

from __future__ import annotations

import base64
import warnings

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checkpoint import Checkpoint, checkpoint_from_bytes, checkpoint_to_bytes, describe
from ..config import RunConfig
from ..metrics import evaluate_files
from ..pretrain import pretrain_loop
from ..table import dumps_csv, loads_csv
from ..tasks import (
    TaskSpec,
    embed,
    embeddings_to_csv,
    finetune,
    impute,
    predict,
    predictions_to_csv,
)
from . import schemas as S


def _ckpt_from_b64(blob: str) -> Checkpoint:
    return checkpoint_from_bytes(base64.b64decode(blob))


def _ckpt_to_b64(ckpt: Checkpoint) -> str:
    return base64.b64encode(checkpoint_to_bytes(ckpt)).decode("ascii")


def _spec_from_request(req, ckpt: Checkpoint, config: RunConfig) -> TaskSpec | None:
    if req.target is None and req.task is None and not req.labels:
        return None  # fall back to the checkpoint's stored task
    stored = TaskSpec.from_dict(ckpt.task) if ckpt.task else None
    kind = req.task or (stored.kind if stored else ("classify" if req.labels else "generate"))
    target = req.target or (stored.target if stored else None)
    if target is None:
        raise ValueError("no target column given and the checkpoint stores none")
    labels = tuple(req.labels) or (stored.labels if stored and stored.kind == kind else ())
    return config.task_spec(kind, target, labels=labels, prompt=req.prompt)


def create_app() -> FastAPI:
    app = FastAPI(title="tabrep", version=__version__)

    def bad_request(exc: Exception) -> HTTPException:
        return HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}")

    @app.get("/health", response_model=S.HealthResponse)
    def health():
        return S.HealthResponse(status="ok", version=__version__)

    @app.post("/pretrain", response_model=S.PretrainResponse)
    def pretrain_endpoint(req: S.PretrainRequest):
        try:
            config = RunConfig().merged(req.config)
            corpus = [loads_csv(t.csv) for t in req.tables]
            log: list[S.LogLine] = []
            ckpt = pretrain_loop(
                corpus,
                config.train_plan(),
                config.encoder_config(),
                on_log=lambda r: log.append(
                    S.LogLine(step=r.step, objective=r.objective, loss=r.loss)
                ),
            )
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.PretrainResponse(
            checkpoint_b64=_ckpt_to_b64(ckpt),
            steps=ckpt.step,
            first_loss=log[0].loss if log else None,
            final_loss=log[-1].loss if log else None,
            log=log,
        )

    @app.post("/finetune", response_model=S.FinetuneResponse)
    def finetune_endpoint(req: S.FinetuneRequest):
        try:
            config = RunConfig().merged(req.config)
            ckpt = _ckpt_from_b64(req.checkpoint_b64)
            train = loads_csv(req.train_csv)
            spec = config.task_spec(
                req.task, req.target, labels=tuple(req.labels), prompt=req.prompt
            )
            losses: list[float] = []
            steps = req.steps if req.steps is not None else config.finetune_steps
            out = finetune(
                ckpt,
                train,
                spec,
                steps=steps,
                seed=req.seed,
                dev_fraction=config.dev_fraction,
                early_stop_patience=config.early_stop_patience,
                on_log=lambda r: losses.append(r["loss"]),
            )
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.FinetuneResponse(
            checkpoint_b64=_ckpt_to_b64(out),
            steps=steps,
            final_loss=losses[-1] if losses else None,
        )

    @app.post("/predict", response_model=S.PredictResponse)
    def predict_endpoint(req: S.PredictRequest):
        try:
            config = RunConfig()
            ckpt = _ckpt_from_b64(req.checkpoint_b64)
            spec = _spec_from_request(req, ckpt, config)
            records = predict(ckpt, loads_csv(req.csv), spec)
            if spec is None:
                spec = TaskSpec.from_dict(ckpt.task)
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.PredictResponse(
            records=[
                S.PredictionItem(
                    row_id=r.row_id,
                    prediction=r.text,
                    probs=r.probs,
                    numeric=r.numeric,
                    unparseable=r.unparseable,
                )
                for r in records
            ],
            csv=predictions_to_csv(records, spec.labels),
            labels=list(spec.labels),
        )

    @app.post("/impute", response_model=S.ImputeResponse)
    def impute_endpoint(req: S.ImputeRequest):
        try:
            ckpt = _ckpt_from_b64(req.checkpoint_b64)
            table = loads_csv(req.csv)
            before = sum(row.count(None) for row in table.rows)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                filled = impute(ckpt, table)
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.ImputeResponse(csv=dumps_csv(filled), filled_cells=before)

    @app.post("/embed", response_model=S.EmbedResponse)
    def embed_endpoint(req: S.EmbedRequest):
        try:
            ckpt = _ckpt_from_b64(req.checkpoint_b64)
            matrix = embed(ckpt, loads_csv(req.csv))
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.EmbedResponse(
            csv=embeddings_to_csv(matrix), rows=matrix.shape[0], dim=matrix.shape[1]
        )

    @app.post("/eval", response_model=S.EvalResponse)
    def eval_endpoint(req: S.EvalRequest):
        try:
            value = evaluate_files(
                req.metric, req.predictions_csv, req.gold_csv, req.positive_label
            )
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.EvalResponse(metric=req.metric, value=value)

    @app.post("/inspect", response_model=S.InspectResponse)
    def inspect_endpoint(req: S.InspectRequest):
        try:
            info = describe(_ckpt_from_b64(req.checkpoint_b64))
        except ValueError as exc:
            raise bad_request(exc) from exc
        return S.InspectResponse(**info)

    return app


app = create_app()
