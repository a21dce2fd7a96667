#!/usr/bin/env python3
"""Desk-scale prompt-tuning run.

Tunes the forgery-prompt learner, soft prompt rows, and attention adapters
for 200 steps on 16 seed-pinned QA pairs with idealized detector outputs,
then greedy-decodes every training item and reports how many answers are
reproduced exactly. The base language model stays frozen throughout.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from forgelab.checks import build_pinned_tuning_set
from forgelab.fpl_llm import LlmTuner
from forgelab.kfd import KfdConfig, KfdModel
from forgelab.numnn.checkpoint import save_checkpoint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--out", default="runs/prompt_tuning")
    args = ap.parse_args()

    samples, oracles = build_pinned_tuning_set()
    tuner = LlmTuner(KfdModel(KfdConfig()), lr=args.lr)

    t0 = time.time()
    losses = []
    for step in range(args.steps):
        i = step % len(samples)
        losses.append(tuner.tune_step(samples[i], oracles[i]).loss)
        if step % 20 == 0:
            print(f"step {step}: loss {losses[-1]:.4f}")
    elapsed = time.time() - t0

    n = len(samples)
    first, last = float(np.mean(losses[:n])), float(np.mean(losses[-n:]))
    exact = sum(
        tuner.answer(s.image, k, max_tokens=len(s.qa.answer.encode()) + 8)
        == s.qa.answer
        for s, k in zip(samples, oracles))
    print(f"loss: {first:.3f} -> {last:.3f} "
          f"({100.0 * (1.0 - last / first):.1f}% reduction)")
    print(f"exact greedy decodes: {exact}/{n}")
    print(f"{args.steps} steps in {elapsed:.1f}s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(tuner.store.state_dict(), out / "llm.ckpt")
    print(f"artifacts in {out}/")


if __name__ == "__main__":
    main()
