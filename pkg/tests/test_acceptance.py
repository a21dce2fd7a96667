"""Acceptance suite: one test per top-level criterion, each at its stated
tolerance and runtime budget. Every test is independent and seed-pinned."""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from forgelab import checks
from forgelab.blending import BlendRequest, mask_blend, poisson_blend
from forgelab.cli import run_command
from forgelab.config import Config
from forgelab.evalproto import (parse_response, ranking_metrics, sample_frames,
                                video_score)
from forgelab.fpl_llm import (EOS_TOKEN, VOCAB_SIZE, FplConfig, LlmTuner,
                              LoraConfig, LoraLinear, ToyLm, assemble_prompt,
                              count_text_tokens, loss_llm, render_prompt_text,
                              tokenize_bytes)
from forgelab.kfd import (KfdConfig, KfdModel, bce_loss, dice_loss,
                          precompute_taps, train_kfd)
from forgelab.llm_client import mock_server
from forgelab.numnn.checkpoint import load_checkpoint, save_checkpoint
from forgelab.service import create_app
from forgelab.simulate import (SimulateConfig, generate_toy_face, sample_seed,
                               simulate_forgery)
from test_blending import dense_poisson_oracle
from test_evalproto import PARSE_CASES, _oracle_ap, _oracle_auc

TEMPLATE_FAKE_REPLY = ("Yes. This is a deepfake image, and the artifact is "
                       "at the center face of the image.")


def test_acceptance_poisson_solver_oracle():
    """20 seeded instances up to 12x12 match a dense direct solve within
    max-abs 1e-4, in under 5 s total."""
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        h = int(rng.integers(4, 13))
        w = int(rng.integers(4, 13))
        bg = rng.random((h, w, 3)).astype(np.float32)
        fg = rng.random((h, w, 3)).astype(np.float32)
        mask = (rng.random((h, w)) > 0.55).astype(np.float32)
        got = poisson_blend(BlendRequest(bg, fg, mask))
        want = dense_poisson_oracle(bg, fg, mask)
        worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.time() - t0
    assert worst <= 1e-4, f"max-abs {worst:.2e} > 1e-4"
    assert elapsed < 5.0, f"{elapsed:.1f}s >= 5s"


def test_acceptance_blend_identities():
    """M=0 -> background and M=1 -> foreground bit-exact; complement-mask
    swap identity holds within 1e-6."""
    rng = np.random.default_rng(42)
    bg = rng.random((16, 16, 3)).astype(np.float32)
    fg = rng.random((16, 16, 3)).astype(np.float32)
    zero = np.zeros((16, 16), np.float32)
    one = np.ones((16, 16), np.float32)
    np.testing.assert_array_equal(mask_blend(BlendRequest(bg, fg, zero)), bg)
    np.testing.assert_array_equal(mask_blend(BlendRequest(bg, fg, one)), fg)
    m = rng.random((16, 16)).astype(np.float32)
    a = mask_blend(BlendRequest(bg, fg, m))
    b = mask_blend(BlendRequest(bg, fg, 1.0 - m))
    assert float(np.abs((a + b) - (fg + bg)).max()) <= 1e-6


def test_acceptance_loss_analytics():
    """BCE(1, 0.5) = 0.693147 +- 1e-6; Dice agrees with a direct formula to
    1e-6 on random 4x4 masks; lambda=0 localization equals the single Dice
    term exactly; uniform-logits token loss = ln(vocab) +- 1e-4."""
    losses, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert abs(float(losses[0]) - 0.693147) <= 1e-6

    rng = np.random.default_rng(7)
    for _ in range(10):
        pred = rng.random((1, 4, 4))
        gt = (rng.random((1, 4, 4)) > 0.5).astype(np.float64)
        got = float(dice_loss(pred, gt, eps=1.0)[0][0])
        inter = float((pred * gt).sum())
        tot = float(pred.sum() + gt.sum())
        want = 1.0 - (2.0 * inter + 1.0) / (tot + 1.0)
        assert abs(got - want) <= 1e-6

    model = KfdModel(KfdConfig())
    seg = rng.random((2, 224, 224)).astype(np.float32)
    ref = rng.random((2, 224, 224)).astype(np.float32)
    gt = (rng.random((2, 224, 224)) > 0.8).astype(np.float32)
    single, _ = dice_loss(seg, gt, model.config.dice_eps)
    np.testing.assert_array_equal(
        model.loss_localization(seg, ref, gt, lam=0.0), single)

    targets = tokenize_bytes("No.") + [EOS_TOKEN]
    loss, _ = loss_llm(np.zeros((len(targets), VOCAB_SIZE), np.float32), targets)
    assert abs(loss - float(np.log(VOCAB_SIZE))) <= 1e-4


def test_acceptance_gradient_checks():
    """Every trainable layer type plus the composed detector and prompt-tuner
    graphs pass central finite differences at <= 5e-3, in under 60 s."""
    t0 = time.time()
    reports = checks.gradcheck_suite(seed=0)
    elapsed = time.time() - t0
    assert set(reports) == {"linear", "conv2d", "lora-linear",
                            "kfd-composed", "fpl-lora-composed"}
    for name, report in reports.items():
        assert report.max_rel_error <= 5e-3, \
            f"{name}: {report.max_rel_error:.3e} > 5e-3"
    assert elapsed < 60.0, f"{elapsed:.1f}s >= 60s"


def _pinned_set(n: int, face_base: int, seed_base: int, sim: SimulateConfig):
    out = []
    for i in range(n):
        img, lms = generate_toy_face(face_base + i)
        out.append(simulate_forgery(img, lms, sim, sample_seed(seed_base, i)))
    return out


def test_acceptance_kfd_overfit():
    """500 steps on 64 seed-pinned samples: train AUC >= 0.99; 32 fresh-seed
    held-out samples reach AUC >= 0.90 and mean Dice >= 0.60; under 5 min."""
    from forgelab.evalproto import auc, segmentation_scores

    sim = SimulateConfig()
    train = _pinned_set(64, 1000, 7, sim)
    held = _pinned_set(32, 50000, 11, sim)
    model = KfdModel(KfdConfig())
    t0 = time.time()
    train_kfd(model, train, steps=500, batch_size=16, lr=2e-3,
              weight_decay=1e-5, seed=0)
    elapsed = time.time() - t0

    def evaluate(samples):
        taps = precompute_taps(model, np.stack([s.image for s in samples]))
        scored, dices = [], []
        for i, s in enumerate(samples):
            out = model.infer_from_taps([t[i : i + 1] for t in taps])
            scored.append((out.score, s.label))
            if s.label == 1:
                dices.append(segmentation_scores(out.seg_map, s.gt_mask)[0])
        return auc(scored), float(np.mean(dices))

    train_auc, _ = evaluate(train)
    held_auc, held_dice = evaluate(held)
    assert train_auc >= 0.99, f"train AUC {train_auc:.4f} < 0.99"
    assert held_auc >= 0.90, f"held-out AUC {held_auc:.4f} < 0.90"
    assert held_dice >= 0.60, f"held-out Dice {held_dice:.3f} < 0.60"
    assert elapsed < 300.0, f"{elapsed:.1f}s >= 300s"


def test_acceptance_prompt_fidelity():
    """Assembled prompt text is byte-identical to the template for score
    0.93, and the embedding row count is token count + n_v + n_f."""
    expected = (
        "###Human: <Img></Img>"
        "This is a facial image designed for deepfake detection, and it "
        "should not exhibit any localized color discrepancies or evident "
        "signs of splicing."
        "According to KFD prediction, the forgery score is 0.93."
        " Is this a deepfake image? ###Assistant:")
    assert render_prompt_text(0.93) == expected

    lm = ToyLm()
    cfg = FplConfig()
    prompt = assemble_prompt(
        lm, np.zeros((cfg.n_v, lm.config.c_emb), np.float32),
        np.zeros((cfg.n_f, lm.config.c_emb), np.float32), 0.93)
    assert prompt.text == expected
    assert prompt.rows.shape[0] == \
        count_text_tokens(prompt.text) + cfg.n_v + cfg.n_f


def test_acceptance_lora_noop():
    """With zero-initialized B and dropout off, adapter outputs equal base
    outputs bit-exactly, layer-wise and through the whole LM."""
    from forgelab.numnn.params import ParamStore

    rng = np.random.default_rng(0)
    store = ParamStore()
    layer = LoraLinear(store, "probe", 32, 32, rng,
                       LoraConfig(r=4, alpha=8, dropout=0.0))
    x = rng.standard_normal((6, 32)).astype(np.float32)
    np.testing.assert_array_equal(layer.forward(x), layer.base.forward(x))

    lm = ToyLm(lora=LoraConfig(r=4, alpha=8, dropout=0.0))
    rows = lm.embed_tokens(tokenize_bytes("Is this a deepfake image?"))
    with_adapters = lm.forward(rows)
    original_forward = LoraLinear.forward
    try:
        LoraLinear.forward = lambda self, x, rng=None: self.base.forward(x)
        base_only = lm.forward(rows)
    finally:
        LoraLinear.forward = original_forward
    np.testing.assert_array_equal(with_adapters, base_only)


def test_acceptance_prompt_tuning_descent():
    """200 tune steps on 16 QA pairs cut the token loss by >= 50%, greedy
    decoding reproduces >= 14/16 exact answers, and the frozen base LM,
    visual projector, and detector weights stay bit-unchanged."""
    samples, oracles = checks.build_pinned_tuning_set()
    assert len(samples) == 16
    kfd_model = KfdModel(KfdConfig())
    kfd_before = {n: v.copy() for n, v in kfd_model.store.params.items()}
    tuner = LlmTuner(kfd_model, lr=5e-3)
    frozen_before = {n: v.copy() for n, v in tuner.store.params.items()
                     if n.startswith(("lm/", "vproj/"))}
    assert frozen_before

    losses = []
    for step in range(200):
        i = step % 16
        losses.append(tuner.tune_step(samples[i], oracles[i]).loss)
    first = float(np.mean(losses[:16]))
    last = float(np.mean(losses[-16:]))
    assert last <= 0.5 * first, f"loss {first:.3f} -> {last:.3f} (< 50% cut)"

    exact = 0
    for s, o in zip(samples, oracles):
        answer = tuner.answer(s.image, o,
                              max_tokens=len(s.qa.answer.encode()) + 8)
        exact += int(answer == s.qa.answer)
    assert exact >= 14, f"exact decodes {exact}/16 < 14"

    for n, v in frozen_before.items():
        np.testing.assert_array_equal(tuner.store[n], v, err_msg=n)
    for n, v in kfd_before.items():
        np.testing.assert_array_equal(kfd_model.store[n], v, err_msg=n)


def test_acceptance_evaluation_protocol():
    """parse_response matches the 20-case rule fixture; sample_frames(64) is
    the even indices; a 16/32-fake video scores exactly 0.5; AUC matches the
    pairwise oracle to 1e-12 and AP the sweep oracle to 1e-9 on 50 seeds."""
    assert len(PARSE_CASES) == 20
    for text, label, rule in PARSE_CASES:
        parsed = parse_response(text)
        assert (parsed.label, parsed.matched_rule) == (label, rule), repr(text)

    assert sample_frames(64, 32) == list(range(0, 64, 2))

    labels = [parse_response("Yes.")] * 16 + [parse_response("No.")] * 16
    assert video_score("v", labels).score == 0.5

    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(4, 60))
        lab = rng.integers(0, 2, n)
        if lab.sum() in (0, n):
            lab[0] = 1 - lab[0]
        scores = np.round(rng.random(n), 2)
        scored = list(zip(scores.tolist(), lab.tolist()))
        m = ranking_metrics(scored)
        assert abs(m.auc - _oracle_auc(scored)) <= 1e-12
        assert abs(m.ap - _oracle_ap(scored)) <= 1e-9


def test_acceptance_reproducibility(tmp_path):
    """simulate --seed 7 twice yields byte-identical manifests; a checkpoint
    save/load round-trip is bit-exact."""
    a, b = tmp_path / "run_a", tmp_path / "run_b"
    for out in (a, b):
        assert run_command(["--seed", "7", "simulate", "--count", "6",
                            "--out", str(out), "--toy-sources", "3"]) == 0
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()

    model = KfdModel(KfdConfig())
    path = tmp_path / "kfd.ckpt"
    save_checkpoint(model.store.state_dict(), path)
    loaded = load_checkpoint(path)
    state = model.store.state_dict()
    assert set(loaded) == set(state)
    for name, tensor in state.items():
        np.testing.assert_array_equal(loaded[name], tensor, err_msg=name)


def test_acceptance_service_contract():
    """/health returns {"status": "ok"} and /chat against the scripted mock
    returns the template reply, with no frontend build present."""
    with mock_server([TEMPLATE_FAKE_REPLY]) as server:
        cfg = Config()
        cfg.llm.endpoint = server.endpoint
        with TestClient(create_app(cfg)) as client:
            health = client.get("/health")
            assert health.status_code == 200
            assert health.json() == {"status": "ok"}
            chat = client.post("/chat", json={
                "session_id": "acceptance",
                "message": "Is this a deepfake image?"})
            assert chat.status_code == 200
            assert chat.json() == {"reply": TEMPLATE_FAKE_REPLY}
