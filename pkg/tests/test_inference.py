import numpy as np
import pytest

from secoco import inference
from secoco.errors import ConfigError
from secoco.inference import (
    STOP_CYCLE,
    STOP_FIXPOINT,
    STOP_MAX_ITERS,
    STOP_OVERFLOW,
    DecodeConfig,
    ModelEditor,
    beam_search,
    correct_iteratively,
    max_output_len,
    next_token_log_probs,
    render_edits,
    translate_e2e,
    translate_edit,
)
from secoco.model import encode, wrap_source
from secoco.numerics import NEG_INF
from secoco.textops import EOS_ID, tokenize


class ScriptedPredictor:
    """Deletion/insertion answers looked up by sentence; anything unscripted is left alone."""

    def __init__(self, deletes=None, inserts=None, max_len=None):
        self.deletes = {tuple(tokenize(k)): v for k, v in (deletes or {}).items()}
        self.inserts = {tuple(tokenize(k)): v for k, v in (inserts or {}).items()}
        if max_len is not None:
            self.max_len = max_len

    def deletion_probs(self, tokens):
        return [float(b) for b in self.deletes.get(tuple(tokens), [0] * len(tokens))]

    def insertion_labels(self, tokens):
        return list(self.inserts.get(tuple(tokens), [""] * (len(tokens) + 1)))


class AppendPredictor:
    def __init__(self, token="z", max_len=None):
        self.token = token
        if max_len is not None:
            self.max_len = max_len

    def deletion_probs(self, tokens):
        return [0.0] * len(tokens)

    def insertion_labels(self, tokens):
        return [""] * len(tokens) + [self.token]


class FlipPredictor:
    """Rewrites x as y and y as x: every sentence comes back after two rounds."""

    def __init__(self):
        self.last = ()

    def deletion_probs(self, tokens):
        self.last = tuple(tokens)
        return [1.0] * len(tokens)

    def insertion_labels(self, tokens):
        return ["y" if self.last == ("x",) else "x"]


def test_two_round_correction_walkthrough():
    predictor = ScriptedPredictor(
        deletes={"We has things to to do today": [0, 1, 0, 0, 1, 0, 0]},
        inserts={
            "We things to do today": ["", "have", "", "", "", ""],
            "We have things to do today": ["", "", "", "", "", "", "."],
        },
    )
    src = tokenize("We has things to to do today")
    result = correct_iteratively(src, predictor, max_iters=5)
    assert result.corrected == tokenize("We have things to do today .")
    assert result.converged and result.stop_reason == STOP_FIXPOINT
    assert result.n_iters == 3
    assert len(result.trace) == 2
    assert result.n_edits == 4
    assert render_edits(src, result).splitlines() == [
        "0  We has things to to do today",
        "1  We [-has-] [+have+] things to [-to-] do today",
        "2  We have things to do today [+.+]",
        "3  (no edits)",
    ]


def test_clean_input_converges_in_one_iteration():
    result = correct_iteratively(("a", "b"), ScriptedPredictor())
    assert result.corrected == ("a", "b")
    assert result.n_iters == 1 and result.converged
    assert not result.trace
    assert result.history == [("a", "b")]


def test_threshold_is_strict():
    predictor = ScriptedPredictor(deletes={"a b": [0.5, 0.9]})
    assert correct_iteratively(("a", "b"), predictor, del_threshold=0.5).corrected == ("a",)


def test_max_iters_stops_unconverged():
    result = correct_iteratively(("a",), AppendPredictor(), max_iters=3)
    assert result.corrected == ("a", "z", "z", "z")
    assert not result.converged and result.stop_reason == STOP_MAX_ITERS
    assert result.n_iters == 3 and len(result.trace) == 3
    assert render_edits(("a",), result).splitlines()[-1] == "stopped: max_iters after 3 iterations"


def test_overflowing_round_is_not_applied():
    result = correct_iteratively(("a", "b"), AppendPredictor(max_len=3), max_iters=5)
    assert result.corrected == ("a", "b", "z")
    assert result.stop_reason == STOP_OVERFLOW
    assert result.n_iters == 2 and len(result.trace) == 1


def test_cycle_detection():
    result = correct_iteratively(("x",), FlipPredictor(), max_iters=10)
    assert result.stop_reason == STOP_CYCLE
    assert result.history == [("x",), ("y",), ("x",)]
    assert result.n_iters == 2 and not result.converged


def test_max_iters_must_be_positive():
    with pytest.raises(ConfigError):
        correct_iteratively(("a",), ScriptedPredictor(), max_iters=0)
    with pytest.raises(ConfigError):
        DecodeConfig(del_threshold=1.0).validate()


def _greedy(params, src_ids):
    src = np.asarray([wrap_source(src_ids)])
    memory = encode(params, src)
    out = [1]
    for _ in range(max_output_len(params, len(src_ids))):
        tok = int(np.argmax(next_token_log_probs(params, memory, src, np.asarray([out]))[0]))
        if tok == EOS_ID:
            return out[1:]
        out.append(tok)
    return out[1:]


def test_width_one_beam_is_greedy(tiny_params, src_vocab):
    for src in (("a",), ("a", "b", "b", "d"), ("d", "c")):
        ids = src_vocab.encode(src)
        assert beam_search(tiny_params, ids, beam=1)[0] == _greedy(tiny_params, ids)


def test_beam_search_is_deterministic_and_bounded(tiny_params, src_vocab):
    ids = src_vocab.encode(("a", "c"))
    first = beam_search(tiny_params, ids, beam=4)
    assert beam_search(tiny_params, ids, beam=4) == first
    assert len(first[0]) <= max_output_len(tiny_params, 2)
    assert not {0, 1, 4} & set(first[0])
    with pytest.raises(ConfigError):
        beam_search(tiny_params, ids, beam=0)


def _scripted_log_probs(table, vocab_size):
    """next_token_log_probs stand-in: rows looked up by target prefix, EOS-heavy default."""

    def fn(params, memory, src, tgt_in):
        rows = np.full((len(tgt_in), vocab_size), -50.0)
        for r, prefix in enumerate(tgt_in.tolist()):
            rows[r, EOS_ID] = -1.0
            for tok, lp in table.get(tuple(prefix), {}).items():
                rows[r, tok] = lp
        rows[:, [0, 1, 4]] = NEG_INF
        return rows

    return fn


def test_early_stop_never_returns_an_unfinished_prefix(monkeypatch, tiny_params, src_vocab, tgt_vocab):
    a, b = tgt_vocab.lookup("A"), tgt_vocab.lookup("B")
    table = {(1,): {EOS_ID: -1.0, a: -1.1}, (1, a): {EOS_ID: -5.0, b: -0.01}}
    monkeypatch.setattr(inference, "next_token_log_probs", _scripted_log_probs(table, len(tgt_vocab)))
    ids = src_vocab.encode(("a", "b"))
    assert beam_search(tiny_params, ids, beam=2) == ([], -1.0)
    assert beam_search(tiny_params, ids, beam=1) == ([], -1.0)


def test_wider_beam_scores_at_least_as_well_as_greedy(monkeypatch, tiny_params, src_vocab, tgt_vocab):
    a, b, c = tgt_vocab.lookup("A"), tgt_vocab.lookup("B"), tgt_vocab.lookup("C")
    table = {
        (1,): {a: -0.5, b: -0.9, EOS_ID: -3.0},
        (1, a): {EOS_ID: -3.0, c: -2.9},
        (1, a, c): {EOS_ID: -2.0},
        (1, b): {EOS_ID: -0.05},
    }
    monkeypatch.setattr(inference, "next_token_log_probs", _scripted_log_probs(table, len(tgt_vocab)))
    ids = src_vocab.encode(("a", "c"))
    greedy = beam_search(tiny_params, ids, beam=1)
    wide = beam_search(tiny_params, ids, beam=5)
    assert greedy == ([a, c], pytest.approx(-5.4 / 3))
    assert wide == ([b], pytest.approx(-0.95 / 2))
    assert wide[1] >= greedy[1]


def test_empty_source_translates_to_nothing(tiny_params, src_vocab, tgt_vocab):
    assert translate_e2e((), tiny_params, src_vocab, tgt_vocab) == ()


def test_model_editor_never_inserts_specials(tiny_params, src_vocab):
    editor = ModelEditor(tiny_params, src_vocab)
    scores = editor.insertion_scores(("a", "b"))
    assert scores.shape == (3, len(src_vocab) + 1)
    assert np.all(scores[:, :5] == 0.0)
    labels = editor.insertion_labels(("a", "b"))
    assert len(labels) == 3 and set(labels) <= {"", "a", "b", "c", "d"}
    assert editor.deletion_probs(("a", "b", "c")).shape == (3,)


def test_edit_mode_matches_e2e_when_nothing_is_edited(tiny_params, src_vocab, tgt_vocab):
    p = tiny_params.copy()
    p["enc.ln.g"].data[:] = 0.0
    p["enc.ln.b"].data[:] = 1.0
    p["del_head.w"].data[:] = -1.0
    p["ins_head.z"].data[:] = 0.0
    p["ins_head.z"].data[:, len(src_vocab)] = 1.0
    src = ("a", "b", "b", "d")
    hyp, result = translate_edit(src, p, src_vocab, tgt_vocab, beam=3)
    assert result.converged and result.n_iters == 1
    assert result.corrected == src
    assert hyp == translate_e2e(src, p, src_vocab, tgt_vocab, beam=3)
