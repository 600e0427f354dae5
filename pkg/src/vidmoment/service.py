"""HTTP service: dataset management and asynchronous query execution.

Queries run on a worker pool and are polled by id; ingested datasets are
persisted under the configured data directory and reloaded on demand, so
a service restart loses nothing. All query execution is read-only over
the stores, so concurrent queries never interfere.
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .backends import GroundTruthSidecar
from .config import ServiceConfig, build_backends
from .dataset import (
    ArchiveError,
    Dataset,
    DatasetError,
    create_dataset,
    list_descriptors,
    load_archive,
    load_dataset,
    slugify,
)
from .engine import QueryEngine, StageError
from .model import (
    HyperParams,
    QueryFormatError,
    QuerySpec,
    QueryValidationError,
    parse_query,
    serialize_query,
    validate_query,
)

logger = logging.getLogger(__name__)


class CreateDatasetRequest(BaseModel):
    source_dir: str
    name: str | None = None
    segment_length: int | None = None


class QueryRequest(BaseModel):
    query: dict
    params: dict = {}


def _hyper_params(raw: dict) -> HyperParams:
    known = {"top_k", "temperature", "text_threshold", "image_threshold", "rel_label_threshold"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
    return HyperParams(**raw)


class ServiceState:
    """Datasets, backends, and the asynchronous query job registry."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.sidecar = GroundTruthSidecar()
        self.embedder, self.verifier = build_backends(config, self.sidecar)
        self.datasets: dict[str, Dataset] = {}
        self.jobs: dict[str, dict] = {}
        self.lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=config.job_workers)
        Path(config.data_dir).mkdir(parents=True, exist_ok=True)

    def get_dataset(self, dataset_id: str) -> Dataset:
        with self.lock:
            if dataset_id in self.datasets:
                return self.datasets[dataset_id]
        dataset = load_dataset(self.config.data_dir, dataset_id)
        dim = dataset.entity_store.dimension
        if dim is not None and dim != self.embedder.dimension:
            raise DatasetError(
                f"dataset {dataset_id!r} was embedded at dimension {dim}, "
                f"but the configured backend produces {self.embedder.dimension}"
            )
        if dataset.sidecar is not None:
            self.sidecar.merge(dataset.sidecar)
        with self.lock:
            return self.datasets.setdefault(dataset_id, dataset)

    def register(self, dataset: Dataset):
        if dataset.sidecar is not None:
            self.sidecar.merge(dataset.sidecar)
        with self.lock:
            self.datasets[dataset.dataset_id] = dataset

    def engine_for(self, dataset: Dataset) -> QueryEngine:
        return QueryEngine(
            dataset.entity_store,
            dataset.relationship_store,
            self.embedder,
            self.verifier,
            workers=self.config.engine_workers,
        )

    def submit_query(self, dataset: Dataset, spec: QuerySpec, params: HyperParams) -> str:
        query_id = uuid.uuid4().hex
        with self.lock:
            self.jobs[query_id] = {"status": "running"}

        def run():
            try:
                report = self.engine_for(dataset).execute_query(spec, params)
                payload = {
                    "status": "done",
                    "results": [r.to_dict() for r in report.results],
                    "metrics": report.metrics.to_dict(),
                }
            except StageError as exc:
                payload = {"status": "failed", "error": str(exc), "stage": exc.stage}
            except Exception as exc:  # defensive: never lose a job
                logger.exception("query %s failed", query_id)
                payload = {"status": "failed", "error": str(exc), "stage": "unknown"}
            with self.lock:
                self.jobs[query_id] = payload

        self.executor.submit(run)
        return query_id

    def close(self):
        self.executor.shutdown(wait=True)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config if config is not None else ServiceConfig()
    state = ServiceState(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        state.close()

    app = FastAPI(title="vidmoment", version="0.1.0", lifespan=lifespan)
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.post("/datasets", status_code=201)
    def post_dataset(request: CreateDatasetRequest):
        name = request.name or Path(request.source_dir).name
        dataset_id = slugify(name)
        try:
            docs, sidecar = load_archive(request.source_dir, request.segment_length)
        except ArchiveError as exc:
            raise HTTPException(422, detail={"message": str(exc), "files": exc.file_errors})
        except DatasetError as exc:
            raise HTTPException(400, detail=str(exc))
        try:
            dataset, _stats = create_dataset(
                config.data_dir,
                dataset_id,
                name,
                docs,
                state.embedder,
                raw_path=str(request.source_dir),
                sidecar=sidecar,
                workers=config.engine_workers,
            )
        except DatasetError as exc:
            raise HTTPException(409, detail=str(exc))
        state.register(dataset)
        return dataset.descriptor.to_dict()

    @app.get("/datasets")
    def get_datasets():
        return {"datasets": [d.to_dict() for d in list_descriptors(config.data_dir)]}

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str):
        try:
            dataset = state.get_dataset(dataset_id)
        except DatasetError as exc:
            raise HTTPException(404, detail=str(exc))
        payload = dataset.descriptor.to_dict()
        vids = dataset.entity_store.vids()
        if vids:
            # clients convert user-entered seconds to frame counts with this
            payload["fps"] = dataset.entity_store.segment(vids[0]).fps
        return payload

    @app.post("/datasets/{dataset_id}/queries", status_code=202)
    def post_query(dataset_id: str, request: QueryRequest):
        try:
            dataset = state.get_dataset(dataset_id)
        except DatasetError as exc:
            raise HTTPException(404, detail=str(exc))
        try:
            params = _hyper_params(request.params)
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, detail=str(exc))
        try:
            spec = parse_query(serialize_query_dict(request.query))
        except QueryFormatError as exc:
            raise HTTPException(422, detail={"message": str(exc), "findings": []})
        except QueryValidationError as exc:
            raise HTTPException(
                422,
                detail={
                    "message": "query failed validation",
                    "findings": [
                        {"code": f.code, "message": f.message, "severity": f.severity}
                        for f in exc.findings
                    ],
                },
            )
        return {"query_id": state.submit_query(dataset, spec, params)}

    @app.get("/queries/{query_id}")
    def get_query(query_id: str):
        with state.lock:
            job = state.jobs.get(query_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown query {query_id!r}")
        return job

    @app.post("/validate")
    def post_validate(request: QueryRequest):
        """Validation without execution; used by the query builder UI."""
        try:
            spec = parse_query(serialize_query_dict(request.query))
        except QueryFormatError as exc:
            return {"ok": False, "findings": [{"code": "format", "message": str(exc), "severity": "error"}]}
        except QueryValidationError as exc:
            return {
                "ok": False,
                "findings": [
                    {"code": f.code, "message": f.message, "severity": f.severity}
                    for f in exc.findings
                ],
            }
        report = validate_query(spec)
        return {
            "ok": True,
            "findings": [
                {"code": f.code, "message": f.message, "severity": f.severity}
                for f in report.findings
            ],
            "normalized": serialize_query(spec),
        }

    return app


def serialize_query_dict(query: dict) -> str:
    """Queries arrive as JSON objects; the parser takes document text."""
    import json

    return json.dumps(query)


def serve(config: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
