"""Prompt learner, prompt assembly, LoRA, toy LM, and tuning-schedule tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgelab.fpl_llm import (EOS_TOKEN, VOCAB_SIZE, FplConfig, LmConfig,
                              LoraConfig, LoraLinear, ToyLm,
                              alternating_schedule, assemble_prompt,
                              count_text_tokens, detokenize_bytes, loss_llm,
                              render_prompt_text, tokenize_bytes)
from forgelab.kfd import KfdConfig, KfdModel
from forgelab.numnn.params import ParamStore


@settings(max_examples=50, deadline=None)
@given(st.text())
def test_tokenize_round_trip(text):
    assert detokenize_bytes(tokenize_bytes(text)) == text


def test_prompt_text_fidelity():
    text = render_prompt_text(0.93)
    assert "According to KFD prediction, the forgery score is 0.93." in text
    assert text.startswith("###Human: <Img></Img>")
    assert text.endswith(" ###Assistant:")
    assert "Is this a deepfake image?" in text


def test_prompt_row_count_matches_token_count():
    lm = ToyLm()
    cfg = FplConfig()
    e_visual = np.zeros((cfg.n_v, lm.config.c_emb), np.float32)
    e_forgery = np.zeros((cfg.n_f, lm.config.c_emb), np.float32)
    prompt = assemble_prompt(lm, e_visual, e_forgery, 0.93)
    n_text = count_text_tokens(prompt.text)
    assert prompt.rows.shape[0] == n_text + cfg.n_v + cfg.n_f
    # spans tile the sequence in order and the learnable spans line up
    start, length = prompt.span("e_visual")
    np.testing.assert_array_equal(prompt.rows[start : start + length], e_visual)
    start, length = prompt.span("e_forgery")
    np.testing.assert_array_equal(prompt.rows[start : start + length], e_forgery)
    assert sum(l for _, _, l in prompt.segment_spans) == prompt.rows.shape[0]


def test_assemble_prompt_rejects_bad_embedding_shape():
    lm = ToyLm()
    with pytest.raises(ValueError):
        assemble_prompt(lm, np.zeros((4, 32), np.float32),
                        np.zeros((13, 64), np.float32), 0.5)


def test_lora_is_exact_noop_before_tuning():
    rng = np.random.default_rng(0)
    store = ParamStore()
    layer = LoraLinear(store, "t", 16, 16, rng, LoraConfig(r=4, alpha=8, dropout=0.0))
    x = rng.standard_normal((5, 16)).astype(np.float32)
    np.testing.assert_array_equal(layer.forward(x), layer.base.forward(x))


def test_lora_rank_validation():
    with pytest.raises(ValueError):
        LoraLinear(ParamStore(), "t", 4, 4, np.random.default_rng(0),
                   LoraConfig(r=8, alpha=8))


def test_lora_active_after_b_update():
    rng = np.random.default_rng(1)
    store = ParamStore()
    layer = LoraLinear(store, "t", 8, 8, rng, LoraConfig(r=2, alpha=4, dropout=0.0))
    store.params["lora/t/b"] += 0.1
    x = rng.standard_normal((3, 8)).astype(np.float32)
    assert not np.array_equal(layer.forward(x), layer.base.forward(x))


def test_loss_llm_uniform_logits_is_log_vocab():
    targets = tokenize_bytes("No.") + [EOS_TOKEN]
    loss, dlogits = loss_llm(np.zeros((len(targets), VOCAB_SIZE), np.float32), targets)
    assert abs(loss - float(np.log(VOCAB_SIZE))) < 1e-4
    # gradient rows sum to zero (softmax minus one-hot, averaged)
    np.testing.assert_allclose(dlogits.sum(axis=-1), 0.0, atol=1e-6)


def test_loss_llm_validates_spans():
    with pytest.raises(ValueError):
        loss_llm(np.zeros((2, VOCAB_SIZE)), [1, 2, 3])
    with pytest.raises(ValueError):
        loss_llm(np.zeros((0, VOCAB_SIZE)), [])


def test_toy_lm_forward_shapes_and_context_cap():
    lm = ToyLm()
    rows = lm.embed_tokens(tokenize_bytes("hello"))
    logits = lm.forward(rows)
    assert logits.shape == (5, VOCAB_SIZE)
    with pytest.raises(ValueError):
        lm.forward(np.zeros((lm.config.context + 1, lm.config.c_emb), np.float32))


def test_greedy_decode_token_range_and_budget():
    lm = ToyLm()
    rows = lm.embed_tokens(tokenize_bytes("Is this a deepfake image?"))
    out = lm.greedy_decode(rows, max_tokens=10)
    assert len(out) <= 10
    assert all(0 <= t < VOCAB_SIZE and t != EOS_TOKEN for t in out)


def test_toy_lm_deterministic():
    rows = ToyLm().embed_tokens([1, 2, 3])
    a = ToyLm().forward(rows)
    b = ToyLm().forward(rows)
    np.testing.assert_array_equal(a, b)


def test_fpl_forward_shapes():
    from forgelab.fpl_llm import ForgeryPromptLearner
    from forgelab.simulate import generate_toy_face

    model = KfdModel(KfdConfig())
    out = model.infer(generate_toy_face(3)[0])
    fpl = ForgeryPromptLearner(ParamStore())
    e_forgery, _ = fpl.forward(out)
    cfg = fpl.config
    assert e_forgery.shape == (cfg.n_f, cfg.c_emb)
    assert cfg.n_f == cfg.n1 + cfg.n2 + cfg.n3 + 1
    # gained unit rows: every row has norm == gain
    np.testing.assert_allclose(np.linalg.norm(e_forgery, axis=1), 5.0, rtol=1e-4)


def test_visual_projector_row_norms():
    from forgelab.fpl_llm import VisualProjector

    vp = VisualProjector(ParamStore())
    rows = vp.forward(np.random.default_rng(0).random((7, 7, 128)).astype(np.float32))
    assert rows.shape == (vp.config.n_v, vp.config.c_emb)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 2.0, rtol=1e-4)


def test_alternating_schedule_properties():
    d = ["d0", "d1", "d2"]
    v = ["v0", "v1"]
    steps = list(alternating_schedule(d, v, 8, seed=0))
    assert [s for s, _ in steps] == ["deepfake", "vqa"] * 4
    assert {x for s, x in steps if s == "deepfake"} == set(d)  # cycles all of D
    assert {x for s, x in steps if s == "vqa"} == set(v)
    again = list(alternating_schedule(d, v, 8, seed=0))
    assert steps == again
    with pytest.raises(ValueError):
        list(alternating_schedule([], v, 2))
