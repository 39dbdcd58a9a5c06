import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from secoco.editsup import NoiseEdit, NoiseRecord  # noqa: E402
from secoco.model import ModelConfig, ModelParams  # noqa: E402
from secoco.noise import NoiseSpec, TaskSpec, synth_corpus, synth_task  # noqa: E402
from secoco.settings import RunConfig  # noqa: E402
from secoco.textops import SPECIALS, Vocab, build_vocab  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run training-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: training-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def src_vocab():
    return Vocab(SPECIALS + ("a", "b", "c", "d"))


@pytest.fixture
def tgt_vocab():
    return Vocab(SPECIALS + ("A", "B", "C"))


@pytest.fixture
def tiny_config(src_vocab, tgt_vocab):
    return ModelConfig(
        d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ffn=16, max_len=12,
        src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab), dropout=0.0,
    )


@pytest.fixture
def tiny_params(tiny_config):
    return ModelParams.init(tiny_config, seed=3)


@pytest.fixture
def repeat_record():
    """Clean [a, b, c, d] corrupted to [a, b, b, d]: c deleted, b repeated."""
    clean = ("a", "b", "c", "d")
    noisy = ("a", "b", "b", "d")
    record = NoiseRecord(
        alignment=(0, 1, None, 3),
        edits=(NoiseEdit("repeat", 1, "b"), NoiseEdit("delete", 2, "c")),
    )
    return clean, noisy, record


def small_corpus(n, seed=0, spec=None):
    task = TaskSpec(n_words=6, min_len=2, max_len=5, punctuation=False)
    pairs = synth_task(np.random.default_rng([seed, 0]), n, task, dict_seed=seed)
    spec = spec or NoiseSpec(max_edits=2)
    return synth_corpus(pairs, spec, seed, task.source_words())


@pytest.fixture
def corpus():
    return small_corpus(24, seed=5)


@pytest.fixture
def corpus_vocabs(corpus):
    return (
        build_vocab([r.clean for r in corpus] + [r.noisy for r in corpus]),
        build_vocab([r.target for r in corpus]),
    )


@pytest.fixture
def tiny_run():
    run = RunConfig(seed=11)
    run.model = ModelConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ffn=16, max_len=16, dropout=0.1)
    run.train.batch_tokens = 60
    run.train.max_steps = 4
    run.train.warmup = 2
    run.train.log_interval = 1
    run.train.eval_interval = 2
    run.train.checkpoint_interval = 2
    run.train.max_valid = 3
    return run
