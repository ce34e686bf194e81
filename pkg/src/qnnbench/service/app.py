"""HTTP front end over the experiment runner.

Long protocol runs are submitted as jobs and executed one at a time on a
background thread; clients poll ``GET /jobs/{job_id}``.
"""
from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, analysis, experiments
from ..circuits import DomainError, count_parameters, is_untrainable_diagonal, sample_random_qnn
from ..classical import CnnArchitecture, cnn_parameter_count
from ..statevector import ControlledRotation
from .schemas import (
    AnalyzeRequest,
    ConcurrenceRequest,
    ConcurrenceResponse,
    DataRequest,
    DataResponse,
    HealthResponse,
    JobRequest,
    JobStatus,
    ParameterCountRequest,
    ParameterCountResponse,
    ReportRequest,
    ReportResponse,
    SampleQnnRequest,
    SampleQnnResponse,
)


def _result_payload(result) -> dict:
    if isinstance(result, experiments.SuiteResult):
        return {"counts": result.counts, "n_failed": result.n_failed,
                "summaries": {name: s.to_dict() for name, s in result.items()}}
    return result


class JobManager:
    def __init__(self):
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=1)

    def submit(self, config: experiments.ExperimentConfig) -> JobStatus:
        job = JobStatus(job_id=uuid.uuid4().hex, kind=config.kind, state="queued")
        with self._lock:
            self._jobs[job.job_id] = job
        self._pool.submit(self._run, job.job_id, config)
        return job

    def _update(self, job_id: str, **fields) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=fields)

    def _run(self, job_id: str, config: experiments.ExperimentConfig) -> None:
        self._update(job_id, state="running")
        try:
            result = experiments.run(config, progress=lambda done, total: self._update(
                job_id, completed=done, total=total))
            payload = _result_payload(result)
            failed = payload.get("n_failed", 0) if isinstance(payload, dict) else 0
            code = experiments.EXIT_PARTIAL if failed else experiments.EXIT_OK
            self._update(job_id, state="done", result=payload, exit_code=code)
        except experiments.ExperimentError as exc:
            self._update(job_id, state="failed", error=str(exc), exit_code=exc.exit_code)
        except Exception as exc:  # surfaced to the client rather than lost in the thread
            self._update(job_id, state="failed", error=f"{type(exc).__name__}: {exc}", exit_code=1)

    def get(self, job_id: str) -> JobStatus | None:
        with self._lock:
            return self._jobs.get(job_id)


def create_app() -> FastAPI:
    app = FastAPI(title="qnnbench", version=__version__)
    jobs = JobManager()

    @app.exception_handler(experiments.ExperimentError)
    async def experiment_error(_request, exc: experiments.ExperimentError):
        return JSONResponse(status_code=422 if exc.exit_code == experiments.EXIT_CONFIG else 409,
                            content={"schema_version": 1, "error": str(exc), "exit_code": exc.exit_code})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/datasets", response_model=DataResponse)
    def gen_data(req: DataRequest):
        return DataResponse(versions=experiments.generate_data(req.config))

    @app.post("/jobs", response_model=JobStatus, status_code=202)
    def submit(req: JobRequest):
        return jobs.submit(req.config)

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return job

    @app.post("/analyze")
    def analyze(req: AnalyzeRequest) -> dict:
        return experiments.analyze(req.store)

    @app.post("/reports", response_model=ReportResponse)
    def report(req: ReportRequest):
        return ReportResponse(files=[str(p) for p in experiments.report(req.store, req.kind, req.out_dir)])

    @app.post("/compute/parameter-count", response_model=ParameterCountResponse)
    def parameter_count(req: ParameterCountRequest):
        counts = cnn_parameter_count(CnnArchitecture(req.filter_size, req.n_dconv, req.bias),
                                     (req.image_height, req.image_width))
        return ParameterCountResponse(**counts)

    @app.post("/compute/concurrence", response_model=ConcurrenceResponse)
    def concurrence(req: ConcurrenceRequest):
        return ConcurrenceResponse(concurrence=analysis.gate_concurrence(ControlledRotation(req.axis, req.angle, 0, 1)))

    @app.post("/compute/sample-qnn", response_model=SampleQnnResponse)
    def sample_qnn(req: SampleQnnRequest):
        try:
            arch = sample_random_qnn(req.input_dim, req.seed)
        except DomainError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SampleQnnResponse(architecture=arch.to_dict(), untrainable_diagonal=is_untrainable_diagonal(arch),
                                 n_parameters=count_parameters(arch).total)

    return app


app = create_app()
