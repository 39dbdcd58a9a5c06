import json

import numpy as np
import pytest

from secoco.editsup import count_edits, replay, trace_to_json
from secoco.errors import ConfigError, IntegrityError
from secoco.noise import (
    PUNCT,
    NoiseSpec,
    TaskSpec,
    inject_noise,
    noise_stats,
    read_jsonl,
    synth_corpus,
    synth_task,
    translate_source,
    write_jsonl,
)

WORDS = [f"w{i:02d}" for i in range(12)]


def test_translate_source_dictionary_and_reversal():
    d = {"a": "A", "b": "B"}
    assert translate_source(("a", "b"), d) == ("A", "B")
    assert translate_source(("a", "b"), d, reverse=True) == ("B", "A")


def test_synth_task_targets_are_exact_images():
    task = TaskSpec(n_words=10, min_len=3, max_len=6, reverse=True)
    d = task.dictionary(4)
    pairs = synth_task(np.random.default_rng(0), 50, task, d)
    for src, tgt in pairs:
        assert 3 <= len([t for t in src if t not in PUNCT]) <= 6
        assert tgt == translate_source(src, d, reverse=True)
    assert pairs == synth_task(np.random.default_rng(0), 50, task, d)


def test_zero_probabilities_leave_input_untouched():
    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=0)
    clean = ("w01", "w02", ".")
    pair = inject_noise(clean, spec, np.random.default_rng(0), WORDS)
    assert pair.noisy == clean
    assert not pair.trace


def test_zero_budget_leaves_input_untouched():
    pair = inject_noise(("w01", "w02"), NoiseSpec(p_delete=1.0, max_edits=0), np.random.default_rng(0), WORDS)
    assert pair.noisy == ("w01", "w02")


def test_typo_costs_two_atomic_edits():
    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=1.0, max_edits=2)
    pair = inject_noise(("w01", "w02"), spec, np.random.default_rng(3), WORDS)
    assert pair.noisy[0] != "w01" and sorted(pair.noisy[0]) == sorted("w01")
    assert pair.noisy[1] == "w02"
    assert trace_to_json(pair.trace) == [{"del": "10", "ins": ["w01", ""]}]


def test_char_mode_typo_swaps_adjacent_tokens():
    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=1.0, max_edits=2)
    pair = inject_noise(tuple("abcd"), spec, np.random.default_rng(0), list("abcd"))
    assert pair.noisy == ("b", "a", "c", "d")
    assert [e.kind for e in pair.record.edits] == ["typo"]
    assert trace_to_json(pair.trace) == [{"del": "0100", "ins": ["a", "", "", ""]}]

    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=1.0, max_edits=4)
    pair = inject_noise(tuple("abcd"), spec, np.random.default_rng(0), list("abcd"))
    assert pair.noisy == ("b", "a", "d", "c")
    assert replay(pair.noisy, pair.trace) == tuple("abcd")
    assert count_edits(pair.trace) == pair.record.cost() == 4


def test_char_mode_noise_replays_to_clean():
    spec = NoiseSpec(p_delete=0.1, p_insert=0.1, p_repeat=0.1, p_typo=0.2, max_edits=4)
    letters = list("abcdefgh")
    rng = np.random.default_rng(5)
    typos = 0
    for i in range(2000):
        clean = tuple(letters[int(k)] for k in rng.integers(len(letters), size=int(rng.integers(1, 12))))
        pair = inject_noise(clean, spec, np.random.default_rng([5, i]), letters)
        assert replay(pair.noisy, pair.trace) == clean
        assert count_edits(pair.trace) == pair.record.cost() <= spec.max_edits
        typos += sum(e.kind == "typo" for e in pair.record.edits)
    assert typos > 0


def test_dropped_punctuation_is_restored_by_insertion():
    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=0, p_drop_punct=1.0)
    pair = inject_noise(("w01", "."), spec, np.random.default_rng(0), WORDS)
    assert pair.noisy == ("w01",)
    assert trace_to_json(pair.trace) == [{"del": "0", "ins": ["", "."]}]


def test_swapped_punctuation():
    spec = NoiseSpec(p_delete=0, p_insert=0, p_repeat=0, p_typo=0, p_swap_punct=1.0)
    pair = inject_noise(("w01", "."), spec, np.random.default_rng(0), WORDS)
    assert pair.noisy[1] in PUNCT and pair.noisy[1] != "."
    assert replay(pair.noisy, pair.trace) == ("w01", ".")


def test_replaying_gold_traces_restores_clean_sources():
    spec = NoiseSpec(p_delete=0.15, p_insert=0.15, p_repeat=0.15, p_typo=0.1,
                     p_drop_punct=0.2, p_swap_punct=0.2, max_edits=4)
    task = TaskSpec(n_words=12, min_len=1, max_len=10)
    pairs = synth_task(np.random.default_rng(9), 10000, task, dict_seed=9)
    vocab = WORDS + list(PUNCT)
    for i, (src, _) in enumerate(pairs):
        pair = inject_noise(src, spec, np.random.default_rng([9, i]), vocab)
        assert replay(pair.noisy, pair.trace) == src
        assert count_edits(pair.trace) == pair.record.cost() <= spec.max_edits


def test_synth_corpus_is_seed_deterministic():
    task = TaskSpec(n_words=8, min_len=2, max_len=6)
    pairs = synth_task(np.random.default_rng(1), 40, task, dict_seed=1)
    a = synth_corpus(pairs, NoiseSpec(), 17, WORDS)
    b = synth_corpus(pairs, NoiseSpec(), 17, WORDS)
    c = synth_corpus(pairs, NoiseSpec(), 18, WORDS)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]
    assert [r.noisy for r in a] != [r.noisy for r in c]


def test_deletion_rate_matches_probability():
    spec = NoiseSpec(p_delete=0.1, p_insert=0, p_repeat=0, p_typo=0, max_edits=100)
    task = TaskSpec(n_words=12, min_len=4, max_len=12, punctuation=False)
    pairs = synth_task(np.random.default_rng(2), 3000, task, dict_seed=2)
    stats = noise_stats(synth_corpus(pairs, spec, 2, WORDS))
    rate = float(stats.loc[stats.noise_type == "delete", "per_token"].iloc[0])
    assert abs(rate - 0.1) <= 0.01
    assert set(stats.columns) == {"noise_type", "correction", "count", "per_token"}
    assert stats.attrs["sentences"] == 3000


def test_jsonl_round_trip(tmp_path):
    records = synth_corpus(synth_task(np.random.default_rng(4), 10, TaskSpec(), dict_seed=4), NoiseSpec(), 4, WORDS)
    path = tmp_path / "train.jsonl"
    write_jsonl(path, records)
    back = read_jsonl(path)
    assert [r.to_json() for r in back] == [r.to_json() for r in records]
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert set(first) == {"id", "clean", "noisy", "target", "trace", "edits"}


def test_jsonl_rejects_broken_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"clean": "w01"\n', encoding="utf-8")
    with pytest.raises(IntegrityError):
        read_jsonl(path)


def test_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(p_delete=1.5).validate()
    with pytest.raises(ConfigError):
        NoiseSpec(max_edits=-1).validate()
    with pytest.raises(ConfigError):
        TaskSpec(min_len=5, max_len=2).validate()
