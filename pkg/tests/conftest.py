"""Shared fixtures: a tiny trained model for fast tests and the desk-scale run for the slow ones."""
import time
from dataclasses import dataclass

import numpy as np
import pytest

from dualstream.codec import train_codec
from dualstream.config import Config
from dualstream.data import make_corpus, stack_videos
from dualstream import trainer as TR

# a configuration small enough that every trainer test runs in seconds
TINY = dict(
    corpus_size=6, frames=4, image_size=32, latent_channels=8, codec_width=8, codec_epochs=1,
    T=10, sample_steps=10, text_dim=16, text_layers=1, text_heads=2, content_width=8,
    motion_width=4, heads=2, exchange_dim=8, exchange_heads=2, rank=2, base_steps=3,
    steps=4, batch_size=2, embedder_dim=8, embedder_corpus_size=6, embedder_epochs=1,
)

_REPORT: list[str] = []


def report(name: str, passed: bool, detail: str) -> None:
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    print(line)
    _REPORT.append(line)


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


def tiny_config(**changes) -> Config:
    return Config(**{**TINY, **changes})


def tiny_codec(config: Config):
    state = TR.build_state(config)
    videos, _ = stack_videos(make_corpus(config.corpus_size, config.corpus_seed, config.frames,
                                         config.image_size))
    train_codec(state.codec, videos, epochs=1, batch_size=8)
    return state.codec


@pytest.fixture(scope="session")
def tiny_codec_trained():
    return tiny_codec(tiny_config())


@pytest.fixture
def tiny_state(tiny_codec_trained):
    """Fresh tiny state with a trained codec; the content base is not yet pretrained."""
    config = tiny_config()
    state = TR.build_state(config, tiny_codec_trained)
    return state, TR.prepare_data(state)


@pytest.fixture(scope="session")
def tiny_trained(tiny_codec_trained):
    """Tiny state after base pretraining and a few joint steps."""
    config = tiny_config()
    state = TR.build_state(config, tiny_codec_trained)
    data = TR.prepare_data(state)
    TR.calibrate_motion_scale(state.model.ops, data.latents)
    TR.pretrain_base(state, data)
    TR.train(state, data, config.steps)
    return state, data


@dataclass
class DeskRun:
    state: TR.TrainState
    data: TR.TrainData
    codec_report: object
    records: list
    codec_seconds: float
    base_seconds: float
    joint_seconds: float
    frozen_at_start: list      # content base and codec weights when the joint phase begins
    frozen_at_100: list        # the same weights after 100 joint steps


def frozen_weights(state):
    return [p.data.copy() for p in state.model.content.base_parameters() + state.codec.parameters()]


@pytest.fixture(scope="session")
def desk_run():
    """The default configuration trained end to end: codec, content base, 500 joint steps."""
    config = Config()
    state = TR.build_state(config)
    videos, _ = stack_videos(make_corpus(config.corpus_size, config.corpus_seed, config.frames,
                                         config.image_size))
    start = time.perf_counter()
    codec_report = train_codec(state.codec, videos, config.codec_epochs, config.codec_lr,
                               config.codec_batch, seed=config.seed)
    codec_seconds = time.perf_counter() - start
    data = TR.prepare_data(state)
    TR.calibrate_motion_scale(state.model.ops, data.latents)
    start = time.perf_counter()
    TR.pretrain_base(state, data)
    base_seconds = time.perf_counter() - start
    frozen_at_start = frozen_weights(state)
    start = time.perf_counter()
    records = TR.train(state, data, 100)
    joint_seconds = time.perf_counter() - start
    frozen_at_100 = frozen_weights(state)
    start = time.perf_counter()
    records += TR.train(state, data, config.steps - 100)
    joint_seconds += time.perf_counter() - start
    return DeskRun(state, data, codec_report, records, codec_seconds, base_seconds, joint_seconds,
                   frozen_at_start, frozen_at_100)


@pytest.fixture(scope="session")
def desk_embedder():
    from dualstream.metrics import fit_embedder
    from dualstream.text import Vocabulary
    vocab = Vocabulary.from_templates()
    emb, _ = fit_embedder(Config(), vocab)
    return emb, vocab
