import copy
import json
from collections import Counter

import numpy as np
import pytest

from secoco import training
from secoco.checkpoint import load_checkpoint
from secoco.errors import ConfigError, NaNLossError
from secoco.model import LossOutput
from secoco.numerics import Tensor
from secoco.training import (
    CKPT_BEST,
    CKPT_LAST,
    METRICS_FILE,
    RUN_LOG,
    BatchPrefetcher,
    Sample,
    TrainConfig,
    build_samples,
    make_batches,
    train,
)


def _metrics(out_dir):
    return [json.loads(l) for l in (out_dir / METRICS_FILE).read_text(encoding="utf-8").splitlines()]


def test_build_samples_base_mode_is_always_clean(corpus):
    samples = build_samples(corpus, "base", np.random.default_rng(0))
    assert all(s.source == r.clean and not s.noisy for s, r in zip(samples, corpus))


def test_build_samples_mixes_clean_and_noisy(corpus):
    samples = build_samples(corpus, "secoco", np.random.default_rng(0), clean_fraction=0.5)
    assert len(samples) == len(corpus)
    for s, r in zip(samples, corpus):
        assert s.source == (r.noisy if s.noisy else r.clean)
        assert len(s.del_sup[0]) == len(s.del_sup[1])
        assert len(s.ins_sup[1]) == len(s.ins_sup[0]) + 1
    assert all(s.noisy for s in build_samples(corpus, "secoco", np.random.default_rng(0), 0.0)
               if s.source != s.clean)
    assert not any(s.noisy for s in build_samples(corpus, "secoco", np.random.default_rng(0), 1.0))
    with pytest.raises(ConfigError):
        build_samples(corpus, "joint", np.random.default_rng(0))


def test_single_sample_makes_one_batch(corpus):
    samples = build_samples(corpus[:1], "base", np.random.default_rng(0))
    batches, skipped = make_batches(samples, 1, np.random.default_rng(0), 64)
    assert batches == [samples] and skipped == 0


def test_make_batches_partition_and_bound(corpus):
    samples = build_samples(corpus, "secoco", np.random.default_rng(1))
    batches, skipped = make_batches(samples, 40, np.random.default_rng(2), 64)
    assert skipped == 0
    assert Counter(id(s) for b in batches for s in b) == Counter(id(s) for s in samples)
    for b in batches:
        assert len(b) == 1 or max(s.n_positions() for s in b) * len(b) <= 40
    again, _ = make_batches(samples, 40, np.random.default_rng(2), 64)
    assert again == batches


def test_make_batches_padding_waste_stays_below_half():
    rng = np.random.default_rng(7)
    lengths = np.concatenate([rng.integers(1, 4, size=150), rng.integers(20, 41, size=30), [3, 3, 3, 40]])
    samples = []
    for n in lengths:
        src = ("a",) * int(n)
        samples.append(Sample(src, src, ("A",), (src, (0,) * len(src)), (src, ("",) * (len(src) + 1))))
    batches, skipped = make_batches(samples, 200, np.random.default_rng(8), 64)
    assert skipped == 0
    assert Counter(id(s) for b in batches for s in b) == Counter(id(s) for s in samples)
    for b in batches:
        sizes = [s.n_positions() for s in b]
        padded = max(sizes) * len(b)
        assert len(b) == 1 or padded <= 200
        assert 1 - sum(sizes) / padded < 0.5


def test_make_batches_skips_overlong(corpus):
    samples = build_samples(corpus, "base", np.random.default_rng(0))
    limit = sorted(s.n_positions() for s in samples)[len(samples) // 2]
    batches, skipped = make_batches(samples, 100, np.random.default_rng(0), limit)
    assert skipped == sum(s.n_positions() > limit for s in samples)
    assert all(s.n_positions() <= limit for b in batches for s in b)


def test_prefetcher_keeps_order():
    with BatchPrefetcher([[1], [2], [3], [4], [5]], lambda g: g[0] * 10, depth=2) as pf:
        assert list(pf) == [10, 20, 30, 40, 50]


def test_prefetcher_reraises_worker_errors():
    def collate(g):
        if g[0] == 2:
            raise RuntimeError("bad batch")
        return g[0]

    got = []
    with pytest.raises(RuntimeError, match="bad batch"):
        with BatchPrefetcher([[1], [2], [3]], collate) as pf:
            for item in pf:
                got.append(item)
    assert got == [1]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(mode="joint").validate()
    with pytest.raises(ConfigError):
        TrainConfig(clean_fraction=1.5).validate()


def test_secoco_training_writes_metrics_and_checkpoints(tmp_path, tiny_run, corpus, corpus_vocabs):
    src_vocab, tgt_vocab = corpus_vocabs
    result = train(tiny_run, corpus, corpus[:3], src_vocab, tgt_vocab, tmp_path)
    assert result.step == 4
    assert (tmp_path / CKPT_LAST).exists() and (tmp_path / CKPT_BEST).exists()
    assert (tmp_path / RUN_LOG).exists()

    rows = _metrics(tmp_path)
    assert rows[0]["config"]["train"]["mode"] == "secoco"
    losses = [r for r in rows if "loss_total" in r]
    assert [r["step"] for r in losses] == [1, 2, 3, 4]
    assert all({"loss_nll", "loss_del", "loss_ins", "lr", "epoch"} <= set(r) for r in losses)
    evals = [r for r in rows if "valid_bleu" in r]
    assert [r["step"] for r in evals] == [2, 4]

    ckpt = load_checkpoint(tmp_path / CKPT_LAST)
    assert ckpt.step == 4 and ckpt.adam.step == 4
    assert ckpt.src_vocab == src_vocab


def test_base_training_has_no_predictor_losses(tmp_path, tiny_run, corpus, corpus_vocabs):
    tiny_run.train.mode = "base"
    train(tiny_run, corpus, corpus[:3], *corpus_vocabs, tmp_path)
    losses = [r for r in _metrics(tmp_path) if "loss_total" in r]
    assert losses and all("loss_del" not in r and "loss_ins" not in r for r in losses)


def test_metrics_log_every_step_regardless_of_log_interval(tmp_path, tiny_run, corpus, corpus_vocabs):
    tiny_run.train.log_interval = 3
    train(tiny_run, corpus, corpus[:3], *corpus_vocabs, tmp_path)
    assert [r["step"] for r in _metrics(tmp_path) if "loss_total" in r] == [1, 2, 3, 4]


def test_resume_is_bit_identical(tmp_path, tiny_run, corpus, corpus_vocabs):
    src_vocab, tgt_vocab = corpus_vocabs
    straight = copy.deepcopy(tiny_run)
    train(straight, corpus, corpus[:3], src_vocab, tgt_vocab, tmp_path / "straight")

    halted = copy.deepcopy(tiny_run)
    halted.train.max_steps = 2
    train(halted, corpus, corpus[:3], src_vocab, tgt_vocab, tmp_path / "resumed")
    resumed = copy.deepcopy(tiny_run)
    result = train(resumed, corpus, corpus[:3], src_vocab, tgt_vocab, tmp_path / "resumed", resume=True)
    assert result.step == 4

    a = load_checkpoint(tmp_path / "straight" / CKPT_LAST)
    b = load_checkpoint(tmp_path / "resumed" / CKPT_LAST)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    steps = [r["step"] for r in _metrics(tmp_path / "resumed") if "loss_total" in r]
    assert steps == [1, 2, 3, 4]


def test_metrics_writer_keeps_config_when_resuming_at_step_zero(tmp_path):
    path = tmp_path / METRICS_FILE
    path.write_text("".join(json.dumps(o) + "\n" for o in ({"config": {"a": 1}}, {"step": 1}, {"step": 2})),
                    encoding="utf-8")
    with training._metrics_writer(path, 0, {"a": 2}) as fh:
        fh.write(json.dumps({"step": 1}) + "\n")
    assert [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines()] == [{"config": {"a": 1}}, {"step": 1}]

    path.unlink()
    with training._metrics_writer(path, 0, {"a": 2}):
        pass
    assert json.loads(path.read_text(encoding="utf-8")) == {"config": {"a": 2}}


def test_resume_from_step_zero_checkpoint_appends(tmp_path, tiny_run, corpus, corpus_vocabs):
    halted = copy.deepcopy(tiny_run)
    halted.train.max_steps = 0
    assert train(halted, corpus, corpus[:3], *corpus_vocabs, tmp_path).step == 0
    assert load_checkpoint(tmp_path / CKPT_LAST).step == 0

    result = train(copy.deepcopy(tiny_run), corpus, corpus[:3], *corpus_vocabs, tmp_path, resume=True)
    assert result.step == 4
    rows = _metrics(tmp_path)
    assert "config" in rows[0] and sum("config" in r for r in rows) == 1
    assert [r["step"] for r in rows if "loss_total" in r] == [1, 2, 3, 4]


def test_non_finite_loss_dumps_the_batch(tmp_path, tiny_run, corpus, corpus_vocabs, monkeypatch):
    def exploding(params, batch, use_predictors=True, rng=None):
        nan = float("nan")
        return LossOutput(Tensor(np.array(nan)), {"nll": nan, "total": nan})

    monkeypatch.setattr(training, "joint_loss", exploding)
    with pytest.raises(NaNLossError) as info:
        train(tiny_run, corpus, corpus[:3], *corpus_vocabs, tmp_path)
    assert info.value.step == 1
    dump = json.loads((tmp_path / "nan_batch_step1.json").read_text(encoding="utf-8"))
    assert dump["step"] == 1 and "src" in dump["batch"]


@pytest.mark.slow
def test_longer_run_reduces_every_loss_term(tmp_path, tiny_run, corpus, corpus_vocabs):
    tiny_run.train.max_steps = 300
    tiny_run.train.warmup = 20
    tiny_run.train.lr = 3e-3
    tiny_run.train.log_interval = 25
    tiny_run.train.eval_interval = 1000
    tiny_run.train.checkpoint_interval = 1000
    train(tiny_run, corpus, corpus[:3], *corpus_vocabs, tmp_path)
    losses = [r for r in _metrics(tmp_path) if "loss_total" in r]
    first, last = losses[0], losses[-1]
    for term in ("loss_nll", "loss_del", "loss_ins"):
        assert last[term] < first[term], term
