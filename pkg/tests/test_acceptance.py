"""
Training-scale checks on the default synthetic task. Each seed synthesises a
5k-sentence corpus and trains the three systems for 5000 steps, so these only
run with --runslow.
"""

import json

import numpy as np
import pytest

from secoco.checkpoint import load_checkpoint, save_checkpoint
from secoco.cli import main
from secoco.editsup import count_edits
from secoco.evaluation import evaluate_model
from secoco.inference import DecodeConfig, correct_iteratively
from secoco.noise import read_jsonl
from secoco.training import CKPT_BEST, CKPT_LAST, METRICS_FILE

pytestmark = pytest.mark.slow

SYSTEMS = {"secoco": "secoco", "base": "base", "base_syn": "base+synthetic"}
SEEDS = (1, 2, 3, 4, 5)


def _build(root, seed, max_steps=5000):
    data = root / f"data{seed}"
    assert main(["synth", "--seed", str(seed), "--out", str(data)]) == 0
    out = {}
    for name, mode in SYSTEMS.items():
        ckpt_dir = root / f"{name}{seed}"
        rc = main(["train", "--seed", str(seed), "--mode", mode, "--paths.data_dir", str(data),
                   "--out", str(ckpt_dir), "--train.max_steps", str(max_steps)])
        assert rc == 0
        out[name] = ckpt_dir
    return data, out


def _best(ckpt_dir):
    path = ckpt_dir / CKPT_BEST
    return load_checkpoint(path if path.exists() else ckpt_dir / CKPT_LAST, with_optimizer=False)


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return {seed: _build(root, seed) for seed in SEEDS}


def _bleu(ckpt, records, mode):
    report, _ = evaluate_model(ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, records, mode,
                               with_clean=False, with_latency=False)
    return report.bleu


def test_secoco_losses_fall(pipelines):
    _, systems = pipelines[1]
    rows = [json.loads(l) for l in (systems["secoco"] / METRICS_FILE).read_text(encoding="utf-8").splitlines()]
    losses = {r["step"]: r for r in rows if "loss_total" in r}
    assert losses[5000]["loss_total"] < 0.5 * losses[100]["loss_total"]
    for term in ("loss_nll", "loss_del", "loss_ins"):
        early = np.mean([r[term] for s, r in losses.items() if s <= 500])
        late = np.mean([r[term] for s, r in losses.items() if s > 4500])
        assert late < early, term


def test_noisy_test_bleu_ordering(pipelines):
    wins = 0
    for seed, (data, systems) in pipelines.items():
        test = read_jsonl(data / "test.jsonl")
        secoco, base, base_syn = (_best(systems[n]) for n in ("secoco", "base", "base_syn"))
        b = _bleu(base, test, "e2e")
        ok = (
            _bleu(secoco, test, "e2e") > b
            and _bleu(secoco, test, "edit") > b
            and _bleu(base_syn, test, "e2e") > b
        )
        wins += int(ok)
    assert wins >= 4


def test_single_edit_inputs_are_corrected(pipelines):
    data, systems = pipelines[1]
    ckpt = _best(systems["secoco"])
    records = [r for r in read_jsonl(data / "test.jsonl") if count_edits(r.trace) == 1]
    assert records
    results = [correct_iteratively(r.noisy, ckpt.params, src_vocab=ckpt.src_vocab) for r in records]
    exact = np.mean([res.corrected == r.clean for res, r in zip(results, records)])
    assert exact >= 0.8
    assert 1.0 <= np.mean([res.n_iters for res in results]) <= 3.0


def test_editing_terminates_and_leaves_clean_input_alone(pipelines):
    data, systems = pipelines[1]
    ckpt = _best(systems["secoco"])
    records = read_jsonl(data / "test.jsonl")
    noisy = [correct_iteratively(r.noisy, ckpt.params, max_iters=5, src_vocab=ckpt.src_vocab) for r in records]
    assert all(res.n_iters <= 5 for res in noisy)
    clean = [correct_iteratively(r.clean, ckpt.params, src_vocab=ckpt.src_vocab) for r in records]
    assert np.mean([res.n_edits == 0 for res in clean]) >= 0.9


def test_edit_mode_is_not_faster_than_e2e(pipelines):
    data, systems = pipelines[1]
    ckpt = _best(systems["secoco"])
    test = read_jsonl(data / "test.jsonl")[:100]
    decode = DecodeConfig()
    e2e, _ = evaluate_model(ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, test, "e2e", decode, with_clean=False)
    edit, _ = evaluate_model(ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, test, "edit", decode, with_clean=False)
    assert edit.latency_ms >= e2e.latency_ms


def test_reruns_are_identical(tmp_path):
    a_data, a = _build(tmp_path / "a", 7, max_steps=300)
    b_data, b = _build(tmp_path / "b", 7, max_steps=300)
    for name in SYSTEMS:
        # The first line echoes the config, which holds the differing data paths.
        lines_a = (a[name] / METRICS_FILE).read_text(encoding="utf-8").splitlines()[1:]
        lines_b = (b[name] / METRICS_FILE).read_text(encoding="utf-8").splitlines()[1:]
        assert lines_a == lines_b

    test = read_jsonl(a_data / "test.jsonl")[:50]
    ckpt = load_checkpoint(a["secoco"] / CKPT_LAST)
    in_memory, _ = evaluate_model(ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, test, "edit", with_latency=False)
    reloaded = load_checkpoint(save_checkpoint(tmp_path / "copy.ckpt", ckpt))
    again, _ = evaluate_model(reloaded.params, reloaded.src_vocab, reloaded.tgt_vocab, test, "edit", with_latency=False)
    assert in_memory.to_dict() == again.to_dict()
