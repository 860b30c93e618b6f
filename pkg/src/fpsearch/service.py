"""HTTP daemon for the online phase: taxonomy discovery, search, admin.

The whole index lives in RAM. Searches share it under a reader contract;
the admin reindex builds a fresh index off to the side and swaps the
pointer atomically, so readers never observe partial state. All client
faults come back as 4xx with an ``{error, detail}`` body; the daemon
itself must survive arbitrary malformed input.
"""

from __future__ import annotations

import base64
import binascii
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .attrseq import SeqModelParams, load_checkpoint
from .index import InvertedIndex
from .pipeline import (
    KeywordTable,
    QueryRequest,
    ingest_manifest,
    load_keyword_table,
    query,
)
from .roi import Box, Detector, FixtureDetector
from .taxonomy import Taxonomy, load_taxonomy, validate
from .visfeat import DistanceWeights, decode_ppm, feature_from_bytes


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    taxonomy_path: str | Path = "fixtures/taxonomy.json"
    index_path: str | Path = "index.fpsi"
    checkpoint_path: str | Path = "model.fpsm"
    detector_fixture_path: str | Path | None = None
    keywords_path: str | Path | None = None
    default_k: int = 10
    default_appearance_weight: float = 0.7
    static_dir: str | Path | None = None


class _NullDetector:
    def detect(self, image, image_id=None):
        return []


@dataclass
class AppState:
    taxonomy: Taxonomy
    model: SeqModelParams
    detector: Detector
    index: InvertedIndex
    keyword_table: KeywordTable | None
    default_k: int = 10
    default_weights: DistanceWeights = DistanceWeights()

    def __post_init__(self) -> None:
        self._swap_lock = threading.Lock()

    def swap_index(self, new_index: InvertedIndex) -> None:
        with self._swap_lock:
            self.index = new_index


def build_state(config: ServiceConfig) -> AppState:
    """Load everything the daemon needs into RAM; fail fast on bad inputs."""
    taxonomy = load_taxonomy(config.taxonomy_path)
    violations = validate(taxonomy)
    if violations:
        raise ValueError(f"taxonomy invalid: {violations}")
    model = load_checkpoint(config.checkpoint_path, taxonomy)
    index = InvertedIndex.load(config.index_path, taxonomy)
    detector: Detector
    if config.detector_fixture_path:
        detector = FixtureDetector.from_file(config.detector_fixture_path)
    else:
        detector = _NullDetector()
    keyword_table = (
        load_keyword_table(config.keywords_path) if config.keywords_path else None
    )
    return AppState(
        taxonomy=taxonomy,
        model=model,
        detector=detector,
        index=index,
        keyword_table=keyword_table,
        default_k=config.default_k,
        default_weights=DistanceWeights(config.default_appearance_weight),
    )


class RoiBody(BaseModel):
    x: float
    y: float
    w: float
    h: float


class SearchBody(BaseModel):
    option: int
    feature_b64: str | None = None
    image_b64: str | None = None
    guided_category: str | None = None
    roi: RoiBody | None = None
    k: int | None = None
    appearance_weight: float | None = None


class ReindexBody(BaseModel):
    manifest_path: str


def _b64(field: str, payload: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"{field} is not valid base64: {exc}") from None


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="guided visual catalog search")

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": "validation_error", "detail": str(exc.errors())},
        )

    @app.exception_handler(ValueError)
    async def client_fault(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": "bad_request", "detail": str(exc)},
        )

    @app.exception_handler(Exception)
    async def server_fault(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"error": "internal", "detail": str(exc)},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "items": len(state.index)}

    @app.get("/taxonomy")
    def taxonomy_view():
        tax = state.taxonomy
        return {
            "categories": list(tax.categories),
            "groups": [
                {
                    "name": g.name,
                    "classes": list(g.classes),
                    "applicable_categories": sorted(g.applicable_categories),
                }
                for g in tax.groups
            ],
            "eos": tax.eos,
            "vocab_size": tax.vocab_size,
        }

    @app.get("/items/{item_id}")
    def item_view(item_id: str):
        record = state.index.store.get(item_id)
        if record is None:
            return JSONResponse(
                status_code=404,
                content={"error": "not_found", "detail": f"no item {item_id!r}"},
            )
        return {
            "item_id": record.item_id,
            "category": record.category,
            "attributes": list(record.attributes),
            "roi": _box_view(record.roi),
            "meta_text": record.meta_text,
        }

    @app.post("/search")
    def search(body: SearchBody):
        index = state.index  # snapshot the pointer once per request
        image = (
            decode_ppm(_b64("image_b64", body.image_b64))
            if body.image_b64
            else None
        )
        feature = (
            feature_from_bytes(_b64("feature_b64", body.feature_b64))
            if body.feature_b64
            else None
        )
        weights = (
            DistanceWeights(body.appearance_weight)
            if body.appearance_weight is not None
            else state.default_weights
        )
        roi = Box(body.roi.x, body.roi.y, body.roi.w, body.roi.h) if body.roi else None
        request = QueryRequest(
            option=body.option,
            image=image,
            feature=feature,
            guided_category=body.guided_category,
            roi=roi,
            k=body.k if body.k is not None else state.default_k,
            weights=weights,
        )
        outcome = query(request, state.model, state.detector, index)
        return {
            "results": [
                {
                    "item_id": r.item_id,
                    "distance": r.distance,
                    "match_count": r.match_count,
                    "attributes": list(index.store[r.item_id].attributes),
                    "roi": _box_view(index.store[r.item_id].roi),
                }
                for r in outcome.results
            ],
            "generated_sequence": list(outcome.generated.names(state.taxonomy)),
            "generated_probabilities": list(outcome.generated.probabilities or ()),
            "category": outcome.category,
            "query_roi": _box_view(outcome.roi) if outcome.roi else None,
        }

    @app.post("/admin/reindex")
    def reindex(body: ReindexBody):
        if state.keyword_table is None:
            raise ValueError("service has no keyword table configured")
        manifest = Path(body.manifest_path)
        if not manifest.exists():
            raise ValueError(f"manifest not found: {manifest}")
        fresh = InvertedIndex(
            state.taxonomy,
            feature_dim=state.index.config.feature_dim,
            bins=state.index.config.bins,
        )
        report = ingest_manifest(
            manifest, state.model, state.detector, fresh, state.keyword_table
        )
        state.swap_index(fresh)
        return {
            "items": len(fresh),
            "inserted": report.inserted,
            "rejected": [
                {"item_id": item_id, "reason": reason}
                for item_id, reason in report.rejected
            ],
        }

    return app


def _box_view(box: Box) -> dict:
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def serve(config: ServiceConfig) -> None:
    """Blocking entry point: load state, expose the API until shutdown."""
    import uvicorn

    state = build_state(config)
    app = create_app(state)
    if config.static_dir and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount(
            "/ui", StaticFiles(directory=config.static_dir, html=True), name="ui"
        )
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
