"""Gradient-check suite over every trainable layer type and the two
composed training graphs (detector and prompt tuner).

Shared by the CLI `gradcheck` subcommand and the test suite. All loss
closures reduce in float64 so the central-difference stencil stays above
float32 rounding noise.
"""

from __future__ import annotations

import numpy as np

from .fpl_llm import (EOS_TOKEN, FplConfig, LmConfig, LoraConfig, LoraLinear,
                      LlmTuner, assemble_prompt, loss_llm, tokenize_bytes)
from .kfd import (ConsistencyStack, KfdConfig, KfdModel, KfdOutput, bce_loss,
                  dice_loss, reference_similarity)
from .numnn.gradcheck import GradCheckReport, grad_check
from .numnn.layers import Conv2d, Linear, bilinear_resize, relu, relu_backward
from .numnn.params import ParamStore
from .simulate import (SimulateConfig, generate_toy_face, sample_seed,
                       simulate_forgery)


def check_linear(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = Linear(store, "lin", 5, 3, rng)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    t = rng.standard_normal((4, 3)).astype(np.float32)

    def loss_fn():
        y = layer.forward(x)
        return float(((y.astype(np.float64) - t) ** 2).sum())

    def backward_fn():
        y = layer.forward(x)
        layer.backward(2.0 * (y - t))

    return grad_check(store, loss_fn, backward_fn, rng=rng)


def check_conv2d(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = Conv2d(store, "conv", 3, 4, k=3, stride=2, rng=rng)
    x = rng.standard_normal((2, 9, 9, 3)).astype(np.float32)
    ho, wo = layer.out_hw(9, 9)
    t = rng.standard_normal((2, ho, wo, 4)).astype(np.float32)

    def loss_fn():
        y = relu(layer.forward(x))
        return float(((y.astype(np.float64) - t) ** 2).sum())

    def backward_fn():
        pre = layer.forward(x)
        y = relu(pre)
        layer.backward(relu_backward(2.0 * (y - t), pre))

    return grad_check(store, loss_fn, backward_fn, rng=rng)


def check_lora_linear(seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = LoraLinear(store, "qq", 6, 6, rng,
                       LoraConfig(r=2, alpha=4, dropout=0.0))
    # B is zero at init, which makes A's gradient identically zero; nudge it
    # so both adapter factors carry signal.
    store.params["lora/qq/b"] += rng.standard_normal(
        store.params["lora/qq/b"].shape).astype(np.float32) * 0.1
    x = rng.standard_normal((3, 6)).astype(np.float32)
    t = rng.standard_normal((3, 6)).astype(np.float32)

    def loss_fn():
        y = layer.forward(x)
        return float(((y.astype(np.float64) - t) ** 2).sum())

    def backward_fn():
        y = layer.forward(x)
        layer.backward(2.0 * (y - t))

    return grad_check(store, loss_fn, backward_fn, rng=rng)


def _toy_batch(seed: int, count: int):
    sim = SimulateConfig(p_real=0.5)
    samples = []
    for i in range(count):
        img, lms = generate_toy_face(seed + 100 + i)
        samples.append(simulate_forgery(img, lms, sim, seed + 200 + i))
    return samples


def check_kfd_composed(seed: int = 0) -> GradCheckReport:
    """Full detector loss (text Dice + lambda * reference Dice + BCE)."""
    model = KfdModel(KfdConfig())
    samples = _toy_batch(seed, 2)
    images = np.stack([s.image for s in samples])
    refs = np.stack([s.reference if s.reference is not None else s.image
                     for s in samples])
    gts = np.stack([s.gt_mask for s in samples])
    labels = np.array([s.label for s in samples], np.float32)
    # float64 taps push the whole composed forward to float64 so the
    # central-difference stencil is not drowned by float32 rounding
    taps = [t.astype(np.float64) for t in model.stem.forward_batch(images)]
    ref_taps = [t.astype(np.float64) for t in model.stem.forward_batch(refs)]
    n = len(samples)
    cfg = model.config

    def loss_fn():
        rho_ref = reference_similarity(taps, ref_taps)
        seg_ref, _ = model.locate([np.repeat(r, 2, axis=-1) for r in rho_ref])
        l_ref, _ = dice_loss(seg_ref, gts, cfg.dice_eps)
        rhos, _ = model.consistency_maps(taps)
        seg, _ = model.locate(rhos)
        l_loc, _ = dice_loss(seg, gts, cfg.dice_eps)
        scores, _, _ = model.classify(rhos)
        l_cls, _ = bce_loss(scores, labels)
        return float(l_loc.mean() + cfg.lam * l_ref.mean() + l_cls.mean())

    def backward_fn():
        rho_ref = reference_similarity(taps, ref_taps)
        seg_ref, loc_cache = model.locate(
            [np.repeat(r, 2, axis=-1) for r in rho_ref])
        _, dref = dice_loss(seg_ref, gts, cfg.dice_eps)
        model.locate_backward(dref * np.float32(cfg.lam / n), loc_cache)
        rhos, cons_cache = model.consistency_maps(taps)
        seg, loc_cache = model.locate(rhos)
        _, dtext = dice_loss(seg, gts, cfg.dice_eps)
        scores, _, cls_cache = model.classify(rhos)
        _, dlogits = bce_loss(scores, labels)
        dmaps_loc = model.locate_backward(dtext / np.float32(n), loc_cache)
        dmaps_cls = model.classify_backward(dlogits / np.float32(n), cls_cache)
        model.consistency_backward(
            [a + b for a, b in zip(dmaps_loc, dmaps_cls)], cons_cache)

    rng = np.random.default_rng(seed)
    # h=3e-5: small enough to keep ReLU-kink crossings rare, large enough
    # for the float64 forward to resolve the stencil
    return grad_check(model.store, loss_fn, backward_fn, h=3e-5,
                      max_entries_per_param=4, rng=rng)


def check_fpl_lora_composed(seed: int = 0) -> GradCheckReport:
    """Prompt-tuning loss through FPL, prompt assembly, adapters and LM.

    Inputs are randomized rather than taken from a fresh detector: an
    untrained detector emits a nearly constant segmentation map, which puts
    entire conv channels right at the ReLU kink where finite differences
    are ill-defined.
    """
    kfd = KfdModel(KfdConfig())
    tuner = LlmTuner(kfd, lora=LoraConfig(r=2, alpha=4, dropout=0.0))
    rng = np.random.default_rng(seed)
    # nudge the zero-initialized LoRA B factors so A gradients are non-trivial
    for name, p in tuner.store.params.items():
        if name.startswith("lora/") and name.endswith("/b"):
            p += rng.standard_normal(p.shape).astype(np.float32) * 0.02
    # float64 inputs keep the composed forward in float64 (see above)
    kfd_out = KfdOutput(
        seg_map=rng.random((224, 224)).astype(np.float64),
        score=0.73,
        stack=ConsistencyStack(rho_text=[
            rng.uniform(-1.0, 1.0, (h, w, 2)).astype(np.float64)
            for h, w in ((28, 28), (14, 14), (7, 7))]))
    e_visual = (rng.standard_normal((tuner.fpl.config.n_v,
                                     tuner.fpl.config.c_emb)) * 0.2)
    targets = tokenize_bytes("No.") + [EOS_TOKEN]

    def forward(want_cache: bool):
        e_forgery, cache = tuner.fpl.forward(kfd_out)
        prompt = assemble_prompt(tuner.lm, e_visual, e_forgery, kfd_out.score)
        rows = np.concatenate(
            [prompt.rows, tuner.lm.embed_tokens(targets[:-1])], axis=0)
        logits = tuner.lm.forward(rows)
        p = prompt.rows.shape[0]
        loss, dspan = loss_llm(logits[p - 1 : p - 1 + len(targets)], targets)
        if not want_cache:
            return loss
        return loss, dspan, logits, prompt, cache, p

    def loss_fn():
        return forward(False)

    def backward_fn():
        _, dspan, logits, prompt, cache, p = forward(True)
        dlogits = np.zeros_like(logits)
        dlogits[p - 1 : p - 1 + len(targets)] = dspan
        drows = tuner.lm.backward(dlogits)
        start, length = prompt.span("e_forgery")
        tuner.fpl.backward(drows[start : start + length], cache)

    return grad_check(tuner.store, loss_fn, backward_fn, h=3e-5,
                      max_entries_per_param=3, rng=rng)


# ---------------------------------------------------------------------------
# Prompt-tuning descent fixture


def oracle_kfd_output(sample) -> KfdOutput:
    """Idealized detector output for a simulated sample: the ground-truth
    mask as segmentation, a constant score by label, and consistency maps
    derived from the resized mask (fake channel high inside the region).

    Used by the tuning descent check so the prompt actually carries the
    label signal; an untrained detector emits near-identical prompts for
    every image, which nothing could learn from.
    """
    gt = sample.gt_mask.astype(np.float32)
    maps = []
    for hw in ((28, 28), (14, 14), (7, 7)):
        m = bilinear_resize(gt[:, :, None], hw)[:, :, 0]
        maps.append(np.stack([1.0 - 2.0 * m, 2.0 * m - 1.0], axis=-1))
    return KfdOutput(seg_map=gt, score=0.95 if sample.label else 0.05,
                     stack=ConsistencyStack(rho_text=maps))


def build_pinned_tuning_set() -> tuple[list, list[KfdOutput]]:
    """16 seed-pinned QA pairs: 8 reals plus the two largest same-answer
    fake groups (4 each) from a 160-sample pool, so the answer set has three
    distinct strings and each appears several times."""
    sim = SimulateConfig()
    pool = []
    for i in range(160):
        img, lms = generate_toy_face(3000 + i)
        pool.append(simulate_forgery(img, lms, sim, sample_seed(13, i)))
    reals = [i for i, s in enumerate(pool) if s.label == 0][:8]
    fake_by_answer: dict[str, list[int]] = {}
    for i, s in enumerate(pool):
        if s.label == 1:
            fake_by_answer.setdefault(s.qa.answer, []).append(i)
    groups = sorted(fake_by_answer.items(), key=lambda kv: -len(kv[1]))
    idx = reals + groups[0][1][:4] + groups[1][1][:4]
    samples = [pool[i] for i in idx]
    return samples, [oracle_kfd_output(s) for s in samples]


def gradcheck_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    return {
        "linear": check_linear(seed),
        "conv2d": check_conv2d(seed),
        "lora-linear": check_lora_linear(seed),
        "kfd-composed": check_kfd_composed(seed),
        "fpl-lora-composed": check_fpl_lora_composed(seed),
    }
