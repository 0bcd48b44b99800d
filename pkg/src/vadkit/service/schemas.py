"""Request/response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class SegmentBody(BaseModel):
    start_ms: int = Field(ge=0)
    end_ms: int = Field(ge=0)


class LatencyBody(BaseModel):
    encoder: str
    mode: str
    lookahead_frames: int
    lookahead_ms: int
    frame_shift_ms: int


class ModelInfoResponse(BaseModel):
    encoder: str
    width: int
    num_blocks: int
    encoder_params: int
    encoder_mb: float
    latency: LatencyBody


class SegmentRequest(BaseModel):
    # base64 of a complete 16 kHz mono 16-bit PCM WAV file
    audio_b64: str
    streaming: bool = False


class SegmentResponse(BaseModel):
    segments: list[SegmentBody]
    duration_ms: int


class SessionCreateResponse(BaseModel):
    session_id: str


class SessionFeedRequest(BaseModel):
    # base64 of raw little-endian int16 samples at 16 kHz (no WAV header)
    pcm_b64: str


class SessionSegmentsResponse(BaseModel):
    segments: list[SegmentBody]


class DcfRequest(BaseModel):
    ref: list[SegmentBody]
    hyp: list[SegmentBody]
    duration_ms: int = Field(gt=0)
    grid_ms: int = Field(default=10, gt=0)


class DcfResponse(BaseModel):
    dcf: float
    p_miss: float
    p_fa: float


class CerRequest(BaseModel):
    ref: str
    hyp: str


class CerResponse(BaseModel):
    cer: float


class NrrRequest(BaseModel):
    per_file_segments: list[list[SegmentBody]]


class NrrResponse(BaseModel):
    nrr: float
