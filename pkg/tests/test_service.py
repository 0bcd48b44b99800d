"""HTTP service: endpoints against direct library calls through the
FastAPI test client, plus error status codes."""

import base64
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vadkit import pipeline
from vadkit.audio import read_wav
from vadkit.model import size_report
from vadkit.service import create_app


@pytest.fixture(scope="module")
def client(trained):
    with TestClient(create_app(trained.model)) as c:
        yield c


@pytest.fixture(scope="module")
def bare_client():
    with TestClient(create_app(None)) as c:
        yield c


@pytest.fixture(scope="module")
def clip(corpus_dir):
    path = os.path.join(corpus_dir, "utt0001.wav")
    with open(path, "rb") as fh:
        wav_bytes = fh.read()
    return path, wav_bytes


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def segment_dicts(segments):
    return [{"start_ms": s.start_ms, "end_ms": s.end_ms} for s in segments]


# ---------------------------------------------------------------------------
# health and model info
# ---------------------------------------------------------------------------


def test_health_works_without_model(bare_client):
    assert bare_client.get("/health").json() == {"status": "ok"}


def test_model_info_requires_model(bare_client):
    assert bare_client.get("/model").status_code == 503


def test_model_info_reports_architecture(client, trained):
    body = client.get("/model").json()
    report = size_report(trained.model)
    assert body["encoder"] == "dfsmn"
    assert body["width"] == trained.cfg.encoder.width
    assert body["encoder_params"] == report["encoder_params"]
    assert body["encoder_mb"] == pytest.approx(report["encoder_mb"])
    assert body["latency"]["mode"] == "streaming"
    assert body["latency"]["frame_shift_ms"] == 20


# ---------------------------------------------------------------------------
# one-shot segmentation
# ---------------------------------------------------------------------------


def test_segment_endpoint_matches_offline_pipeline(client, trained, clip):
    path, wav_bytes = clip
    response = client.post("/segment", json={"audio_b64": b64(wav_bytes)})
    assert response.status_code == 200
    audio = read_wav(path)
    want = pipeline.segment_offline(trained.model, audio)
    assert response.json() == {
        "segments": segment_dicts(want),
        "duration_ms": audio.duration_ms,
    }


def test_segment_endpoint_streaming_flag(client, trained, clip):
    path, wav_bytes = clip
    response = client.post("/segment", json={"audio_b64": b64(wav_bytes), "streaming": True})
    want = pipeline.segment_streaming(trained.model, read_wav(path))
    assert response.json()["segments"] == segment_dicts(want)


def test_segment_rejects_bad_payloads(client, bare_client, clip):
    assert client.post("/segment", json={"audio_b64": "@@not-base64@@"}).status_code == 400
    garbage = client.post("/segment", json={"audio_b64": b64(b"OggS garbage here")})
    assert garbage.status_code == 400
    assert garbage.json()["detail"]  # package error text is forwarded
    assert bare_client.post("/segment", json={"audio_b64": b64(clip[1])}).status_code == 503


# ---------------------------------------------------------------------------
# streaming sessions
# ---------------------------------------------------------------------------


def test_session_round_trip_matches_batch_streaming(client, trained, clip):
    path, _ = clip
    samples = read_wav(path).samples
    pcm = (samples * 32768.0).astype("<i2").tobytes()

    session_id = client.post("/sessions").json()["session_id"]
    collected = []
    step = 6400  # 200 ms of int16 bytes
    for lo in range(0, len(pcm), step):
        r = client.post(f"/sessions/{session_id}/audio", json={"pcm_b64": b64(pcm[lo : lo + step])})
        assert r.status_code == 200
        collected += r.json()["segments"]
    collected += client.post(f"/sessions/{session_id}/flush").json()["segments"]

    want = pipeline.segment_streaming(trained.model, read_wav(path))
    assert collected == segment_dicts(want)


def test_flushed_session_is_gone(client):
    session_id = client.post("/sessions").json()["session_id"]
    assert client.post(f"/sessions/{session_id}/flush").status_code == 200
    assert client.post(f"/sessions/{session_id}/flush").status_code == 404
    assert client.post(f"/sessions/{session_id}/audio", json={"pcm_b64": ""}).status_code == 404


def test_session_delete_and_unknown_session(client):
    session_id = client.post("/sessions").json()["session_id"]
    assert client.delete(f"/sessions/{session_id}").json() == {"status": "ok"}
    assert client.delete(f"/sessions/{session_id}").status_code == 404
    assert client.post("/sessions/feed-of-nobody/audio", json={"pcm_b64": ""}).status_code == 404


def test_session_rejects_odd_pcm_and_needs_model(client, bare_client):
    session_id = client.post("/sessions").json()["session_id"]
    r = client.post(f"/sessions/{session_id}/audio", json={"pcm_b64": b64(b"\x01\x02\x03")})
    assert r.status_code == 400
    assert "int16" in r.json()["detail"]
    client.delete(f"/sessions/{session_id}")
    assert bare_client.post("/sessions").status_code == 503


# ---------------------------------------------------------------------------
# stateless metrics
# ---------------------------------------------------------------------------


def test_dcf_endpoint_hand_case(bare_client):
    body = {
        "ref": [{"start_ms": 0, "end_ms": 100}],
        "hyp": [{"start_ms": 50, "end_ms": 150}],
        "duration_ms": 200,
    }
    r = bare_client.post("/metrics/dcf", json=body).json()
    assert r["dcf"] == pytest.approx(50.0)
    assert r["p_miss"] == pytest.approx(50.0)
    assert r["p_fa"] == pytest.approx(50.0)


def test_dcf_endpoint_error_statuses(bare_client):
    out_of_bounds = {
        "ref": [{"start_ms": 0, "end_ms": 500}],
        "hyp": [],
        "duration_ms": 200,
    }
    assert bare_client.post("/metrics/dcf", json=out_of_bounds).status_code == 400
    negative = {"ref": [{"start_ms": -5, "end_ms": 10}], "hyp": [], "duration_ms": 200}
    assert bare_client.post("/metrics/dcf", json=negative).status_code == 422
    all_speech = {"ref": [{"start_ms": 0, "end_ms": 200}], "hyp": [], "duration_ms": 200}
    assert bare_client.post("/metrics/dcf", json=all_speech).status_code == 400


def test_cer_endpoint(bare_client):
    assert bare_client.post("/metrics/cer", json={"ref": "abcd", "hyp": "abxd"}).json()["cer"] == 25.0
    assert bare_client.post("/metrics/cer", json={"ref": " ", "hyp": "x"}).status_code == 400


def test_nrr_endpoint(bare_client):
    body = {"per_file_segments": [[], [{"start_ms": 0, "end_ms": 80}]]}
    assert bare_client.post("/metrics/nrr", json=body).json()["nrr"] == 50.0
    assert bare_client.post("/metrics/nrr", json={"per_file_segments": []}).status_code == 400
