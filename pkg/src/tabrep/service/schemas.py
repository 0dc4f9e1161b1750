"""Pydantic request/response models for the service API.

Tables travel as CSV text and checkpoints as base64 blobs, so the service
stays stateless and the CLI can run against it in-process or over HTTP.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class TableCsv(BaseModel):
    name: str = "table"
    csv: str


class PretrainRequest(BaseModel):
    tables: list[TableCsv]
    config: dict = Field(default_factory=dict)


class LogLine(BaseModel):
    step: int
    objective: str
    loss: float


class PretrainResponse(BaseModel):
    checkpoint_b64: str
    steps: int
    first_loss: float | None
    final_loss: float | None
    log: list[LogLine]


class FinetuneRequest(BaseModel):
    checkpoint_b64: str
    train_csv: str
    target: str
    task: str = "classify"
    labels: list[str] = Field(default_factory=list)
    prompt: str | None = None
    steps: int | None = None
    seed: int = 0
    config: dict = Field(default_factory=dict)


class FinetuneResponse(BaseModel):
    checkpoint_b64: str
    steps: int
    final_loss: float | None


class PredictRequest(BaseModel):
    checkpoint_b64: str
    csv: str
    target: str | None = None
    task: str | None = None
    labels: list[str] = Field(default_factory=list)
    prompt: str | None = None


class PredictionItem(BaseModel):
    row_id: int
    prediction: str
    probs: dict[str, float] | None = None
    numeric: float | None = None
    unparseable: bool = False


class PredictResponse(BaseModel):
    records: list[PredictionItem]
    csv: str
    labels: list[str]


class ImputeRequest(BaseModel):
    checkpoint_b64: str
    csv: str


class ImputeResponse(BaseModel):
    csv: str
    filled_cells: int


class EmbedRequest(BaseModel):
    checkpoint_b64: str
    csv: str


class EmbedResponse(BaseModel):
    csv: str
    rows: int
    dim: int


class EvalRequest(BaseModel):
    metric: str
    predictions_csv: str
    gold_csv: str
    positive_label: str | None = None


class EvalResponse(BaseModel):
    metric: str
    value: float


class InspectRequest(BaseModel):
    checkpoint_b64: str


class InspectResponse(BaseModel):
    version: int
    preset: str
    config: dict
    vocab_size: int
    param_count: int
    param_count_analytic: int
    step: int
    seed: int
    task: dict | None
    has_optimizer_state: bool


class HealthResponse(BaseModel):
    status: str
    version: str
