"""Shared fixtures: a synthetic corpus and a tiny model trained on it.

Corpus and training are session scoped; the model takes a few seconds to
train and nearly every integration test only reads from it.
"""

import os
from dataclasses import dataclass

import pytest
from hypothesis import settings

from vadkit.config import PipelineConfig, config_to_text, default_config
from vadkit.model import VadModel
from vadkit.synth import generate_corpus, generate_noise_set
from vadkit.train import train_toy
from vadkit.weights import save_weights

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


def make_tiny_cfg() -> PipelineConfig:
    """Desk-scale causal config: trains in seconds, exercises every head."""
    cfg = default_config("dfsmn")
    cfg.encoder.num_blocks = 2
    cfg.encoder.width = 32
    cfg.encoder.proj_dim = 64
    cfg.encoder.lorder = 3
    cfg.heads.vocab_size = 8
    cfg.train.epochs = 40
    return cfg


@pytest.fixture
def tiny_cfg() -> PipelineConfig:
    return make_tiny_cfg()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> str:
    root = str(tmp_path_factory.mktemp("corpus"))
    generate_corpus(root, n_clips=12, seed=7, min_duration_s=2.0, max_duration_s=3.0)
    return root


@pytest.fixture(scope="session")
def corpus_manifest(corpus_dir) -> str:
    return os.path.join(corpus_dir, "manifest.tsv")


@pytest.fixture(scope="session")
def noise_manifest(tmp_path_factory) -> str:
    return generate_noise_set(str(tmp_path_factory.mktemp("noise")), n_clips=4, seed=3)


@dataclass
class TrainedModel:
    model: VadModel
    cfg: PipelineConfig
    weights_path: str
    config_path: str
    manifest_path: str


@pytest.fixture(scope="session")
def trained(tmp_path_factory, corpus_manifest) -> TrainedModel:
    cfg = make_tiny_cfg()
    result = train_toy(corpus_manifest, cfg, epochs=40, seed=0)
    out_dir = str(tmp_path_factory.mktemp("trained"))
    weights_path = os.path.join(out_dir, "tiny.vadw")
    save_weights(weights_path, result.model.named_arrays())
    config_path = os.path.join(out_dir, "tiny.cfg")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    return TrainedModel(result.model, cfg, weights_path, config_path, corpus_manifest)
