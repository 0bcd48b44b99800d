"""HTTP front end over the segmentation pipeline.

The app wraps one loaded model (read-only, shared across requests) plus
a table of live streaming sessions.  Scoring endpoints are stateless.
All package errors surface as HTTP 400 with the error text; calls that
need a model return 503 when the app was started without one.
"""

from __future__ import annotations

import base64
import binascii
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import metrics as metrics_mod
from ..audio import Segment, decode_wav
from ..errors import VadkitError
from ..model import VadModel, size_report
from ..pipeline import segment_offline, segment_streaming
from ..vad import VadSession, model_latency_report
from . import schemas


def _to_bodies(segments: list[Segment]) -> list[schemas.SegmentBody]:
    return [schemas.SegmentBody(start_ms=s.start_ms, end_ms=s.end_ms) for s in segments]


def _to_segments(bodies: list[schemas.SegmentBody]) -> list[Segment]:
    return [Segment(b.start_ms, b.end_ms) for b in bodies]


def _b64(data: str, what: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=400, detail=f"{what} is not valid base64") from None


class _Sessions:
    """Live streaming sessions; a lock guards the table and each step."""

    def __init__(self):
        self._lock = threading.Lock()
        self._table: dict[str, VadSession] = {}

    def create(self, model: VadModel) -> str:
        session_id = uuid.uuid4().hex
        with self._lock:
            self._table[session_id] = VadSession(model)
        return session_id

    def get(self, session_id: str) -> VadSession:
        with self._lock:
            session = self._table.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return session

    def drop(self, session_id: str) -> None:
        with self._lock:
            self._table.pop(session_id, None)

    def lock(self) -> threading.Lock:
        return self._lock


def create_app(model: VadModel | None = None) -> FastAPI:
    app = FastAPI(title="vadkit", version="1.0")
    app.state.model = model
    sessions = _Sessions()

    @app.exception_handler(VadkitError)
    async def _vadkit_error(_: Request, exc: VadkitError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def need_model() -> VadModel:
        if app.state.model is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return app.state.model

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse()

    @app.get("/model", response_model=schemas.ModelInfoResponse)
    def model_info() -> schemas.ModelInfoResponse:
        mdl = need_model()
        report = size_report(mdl)
        return schemas.ModelInfoResponse(
            encoder=mdl.cfg.encoder.type,
            width=mdl.cfg.encoder.width,
            num_blocks=mdl.cfg.encoder.num_blocks,
            encoder_params=int(report["encoder_params"]),
            encoder_mb=report["encoder_mb"],
            latency=schemas.LatencyBody(**model_latency_report(mdl.cfg)),
        )

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def segment(req: schemas.SegmentRequest) -> schemas.SegmentResponse:
        mdl = need_model()
        audio = decode_wav(_b64(req.audio_b64, "audio_b64"), "request audio")
        segs = segment_streaming(mdl, audio) if req.streaming else segment_offline(mdl, audio)
        return schemas.SegmentResponse(segments=_to_bodies(segs), duration_ms=audio.duration_ms)

    # ------------------------------------------------------------------
    # streaming sessions
    # ------------------------------------------------------------------

    @app.post("/sessions", response_model=schemas.SessionCreateResponse)
    def create_session() -> schemas.SessionCreateResponse:
        return schemas.SessionCreateResponse(session_id=sessions.create(need_model()))

    @app.post("/sessions/{session_id}/audio", response_model=schemas.SessionSegmentsResponse)
    def feed_session(session_id: str, req: schemas.SessionFeedRequest) -> schemas.SessionSegmentsResponse:
        raw = _b64(req.pcm_b64, "pcm_b64")
        if len(raw) % 2:
            raise HTTPException(status_code=400, detail="pcm_b64 must hold whole int16 samples")
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
        session = sessions.get(session_id)
        with sessions.lock():
            segs = session.feed(samples)
        return schemas.SessionSegmentsResponse(segments=_to_bodies(segs))

    @app.post("/sessions/{session_id}/flush", response_model=schemas.SessionSegmentsResponse)
    def flush_session(session_id: str) -> schemas.SessionSegmentsResponse:
        session = sessions.get(session_id)
        with sessions.lock():
            segs = session.flush()
        sessions.drop(session_id)
        return schemas.SessionSegmentsResponse(segments=_to_bodies(segs))

    @app.delete("/sessions/{session_id}", response_model=schemas.HealthResponse)
    def delete_session(session_id: str) -> schemas.HealthResponse:
        sessions.get(session_id)
        sessions.drop(session_id)
        return schemas.HealthResponse()

    # ------------------------------------------------------------------
    # stateless scoring
    # ------------------------------------------------------------------

    @app.post("/metrics/dcf", response_model=schemas.DcfResponse)
    def metric_dcf(req: schemas.DcfRequest) -> schemas.DcfResponse:
        alignment = metrics_mod.align_frames(
            _to_segments(req.ref), _to_segments(req.hyp), req.duration_ms, req.grid_ms
        )
        p_miss, p_fa = metrics_mod.miss_fa_rates([alignment])
        return schemas.DcfResponse(dcf=metrics_mod.dcf([alignment]), p_miss=p_miss, p_fa=p_fa)

    @app.post("/metrics/cer", response_model=schemas.CerResponse)
    def metric_cer(req: schemas.CerRequest) -> schemas.CerResponse:
        return schemas.CerResponse(cer=metrics_mod.cer(req.ref, req.hyp))

    @app.post("/metrics/nrr", response_model=schemas.NrrResponse)
    def metric_nrr(req: schemas.NrrRequest) -> schemas.NrrResponse:
        return schemas.NrrResponse(nrr=metrics_mod.nrr([_to_segments(b) for b in req.per_file_segments]))

    return app
