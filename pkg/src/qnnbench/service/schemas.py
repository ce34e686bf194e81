"""Request and response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from ..experiments import ExperimentConfig

SCHEMA_VERSION = 1


class Versioned(BaseModel):
    schema_version: int = SCHEMA_VERSION


class HealthResponse(Versioned):
    status: str = "ok"
    version: str


class DataRequest(Versioned):
    config: ExperimentConfig


class DataResponse(Versioned):
    versions: list[str]


class JobRequest(Versioned):
    config: ExperimentConfig


class JobStatus(Versioned):
    job_id: str
    kind: str
    state: Literal["queued", "running", "done", "failed"]
    completed: int = 0
    total: int = 0
    exit_code: int | None = None
    error: str | None = None
    result: dict[str, Any] | None = None


class AnalyzeRequest(Versioned):
    store: str


class ReportRequest(Versioned):
    store: str
    kind: Literal["summary", "runs", "correlation", "transfer"] = "summary"
    out_dir: str | None = None


class ReportResponse(Versioned):
    files: list[str]


class ErrorResponse(Versioned):
    error: str
    exit_code: int


class ParameterCountRequest(Versioned):
    filter_size: int = Field(ge=1)
    n_dconv: int = Field(0, ge=0)
    bias: bool = False
    image_height: int = Field(ge=1)
    image_width: int = Field(ge=1)


class ParameterCountResponse(Versioned):
    conv: int
    dense: int
    total: int


class ConcurrenceRequest(Versioned):
    axis: Literal["X", "Y", "Z"]
    angle: float


class ConcurrenceResponse(Versioned):
    concurrence: float


class SampleQnnRequest(Versioned):
    input_dim: int
    seed: int


class SampleQnnResponse(Versioned):
    architecture: dict[str, Any]
    untrainable_diagonal: bool
    n_parameters: int
