"""Command-line surface.

Subcommands: simulate, train-kfd, train-llm, eval, infer, chat, serve,
gradcheck. All honor --seed and --config; runtime failures exit 1 with a
diagnostic, usage errors exit 2. Loss logs are CSV with fixed columns
step,l_loc,l_cls,l_llm,total.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .evalproto import (auc, average_precision, parse_response, sample_frames,
                        segmentation_scores, video_score)
from .fpl_llm import LlmTuner, alternating_schedule
from .kfd import KfdModel, precompute_taps, train_kfd
from .llm_client import ChatRequest, complete, mock_server
from .numnn.checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .simulate import (QUESTION_TAIL, SimulateConfig, build_dataset,
                       generate_toy_face, load_png, sample_seed,
                       simulate_forgery)

TEMPLATE_FAKE_REPLY = ("Yes. This is a deepfake image, and the artifact is "
                       "at the center face of the image.")


def _write_loss_log(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l_loc", "l_cls", "l_llm", "total"])
        for r in rows:
            writer.writerow([r.get("step", ""),
                             f"{r.get('l_loc', 0.0):.6f}",
                             f"{r.get('l_cls', 0.0):.6f}",
                             f"{r.get('l_llm', 0.0):.6f}",
                             f"{r.get('total', 0.0):.6f}"])


def _toy_samples(count: int, seed: int, sim: SimulateConfig):
    samples = []
    for i in range(count):
        img, lms = generate_toy_face(sample_seed(seed, 10_000_000 + i))
        samples.append(simulate_forgery(img, lms, sim, sample_seed(seed, i)))
    return samples


def _simulate_config(cfg: Config) -> SimulateConfig:
    return SimulateConfig(n_regions_max=cfg.train.n_regions)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args, cfg: Config) -> int:
    manifest = build_dataset(args.image_dir, args.landmark_dir, args.out,
                             args.count, args.seed,
                             config=_simulate_config(cfg),
                             toy_sources=args.toy_sources)
    errors = sum(1 for e in manifest if "error" in e)
    print(f"wrote {len(manifest) - errors} samples "
          f"({errors} failures) to {args.out}/manifest.jsonl")
    return 0


def cmd_train_kfd(args, cfg: Config) -> int:
    samples = _toy_samples(args.count, args.seed, _simulate_config(cfg))
    model = KfdModel(cfg.kfd)
    lr = args.lr if args.lr is not None else (
        cfg.train.kfd_overfit_lr if args.overfit else cfg.train.lr)
    history = train_kfd(model, samples, steps=args.steps,
                        batch_size=cfg.train.kfd_batch, lr=lr,
                        weight_decay=cfg.train.weight_decay, seed=args.seed,
                        log_every=args.log_every)
    if args.out:
        save_checkpoint(model.store.state_dict(), args.out)
        print(f"checkpoint written to {args.out}")
    if args.log:
        _write_loss_log(args.log, history)
    first, last = history[0]["total"], history[-1]["total"]
    print(f"loss: {first:.4f} -> {last:.4f}")
    if args.overfit and not last <= 0.5 * first:
        print("overfit criterion not met: final loss > 50% of initial",
              file=sys.stderr)
        return 1
    return 0


def cmd_train_llm(args, cfg: Config) -> int:
    deepfake = _toy_samples(args.count, args.seed, _simulate_config(cfg))
    vqa_path = Path(__file__).parent / "data" / "vqa_toy.jsonl"
    vqa = [json.loads(line) for line in vqa_path.read_text().splitlines() if line]
    kfd = KfdModel(cfg.kfd)
    if args.kfd_checkpoint:
        apply_checkpoint(kfd.store, load_checkpoint(args.kfd_checkpoint))
    tuner = LlmTuner(kfd, lr=args.lr if args.lr is not None else cfg.train.llm_tune_lr)
    history = []
    for step, (source, item) in enumerate(
            alternating_schedule(deepfake, vqa, args.steps, seed=args.seed)):
        if source == "deepfake":
            result = tuner.tune_step(item)
        else:
            result = tuner.tune_text_step(item["question"], item["answer"])
        history.append({"step": step, "l_llm": result.loss, "total": result.loss})
        if args.log_every and step % args.log_every == 0:
            print(f"step {step} [{source}]: loss {result.loss:.4f}")
    if args.out:
        save_checkpoint(tuner.store.state_dict(), args.out)
        print(f"checkpoint written to {args.out}")
    if args.log:
        _write_loss_log(args.log, history)
    print(f"loss: {history[0]['total']:.4f} -> {history[-1]['total']:.4f}")
    return 0


def _load_manifest(path: Path) -> list[dict]:
    """Read manifest.jsonl, resolving the relative sample paths it stores."""
    if path.is_dir():
        path = path / "manifest.jsonl"
    entries = [json.loads(line) for line in path.read_text().splitlines() if line]
    entries = [e for e in entries if "error" not in e]
    base = path.parent
    for e in entries:
        for key in ("image_path", "mask_path"):
            if key in e and not Path(e[key]).is_absolute():
                e[key] = str(base / e[key])
    return entries


def cmd_eval(args, cfg: Config) -> int:
    report: dict = {}
    if args.videos:
        endpoint = cfg.llm.endpoint
        if not endpoint:
            print("eval --videos requires a configured llm endpoint",
                  file=sys.stderr)
            return 1
        videos = [json.loads(line)
                  for line in Path(args.videos).read_text().splitlines() if line]
        scored = []
        n_frames = 0
        per_video = {}
        for v in videos:
            labels = []
            for _ in sample_frames(v["frame_count"], cfg.eval.frames_per_video):
                resp = complete(endpoint, ChatRequest(
                    model=cfg.llm.model,
                    messages=[{"role": "user", "content": QUESTION_TAIL}],
                    timeout=cfg.llm.timeout))
                labels.append(parse_response(resp.content))
                n_frames += 1
            vs = video_score(v["video_id"], labels)
            per_video[v["video_id"]] = vs.score
            scored.append((vs.score, int(v["label"])))
        report = {"auc": auc(scored), "ap": average_precision(scored),
                  "dice_mean": None, "iou_mean": None,
                  "n_videos": len(videos), "n_frames": n_frames,
                  "video_scores": per_video}
    else:
        entries = _load_manifest(Path(args.manifest))
        model = KfdModel(cfg.kfd)
        if args.kfd_checkpoint:
            apply_checkpoint(model.store, load_checkpoint(args.kfd_checkpoint))
        images = np.stack([load_png(e["image_path"]) for e in entries])
        taps = precompute_taps(model, images)
        scored, dices, ious = [], [], []
        for i, e in enumerate(entries):
            out = model.infer_from_taps([t[i : i + 1] for t in taps])
            scored.append((out.score, int(e["label"])))
            if e["label"] == 1:
                gt = load_png(e["mask_path"])
                if gt.ndim == 3:
                    gt = gt[..., 0]
                d, j = segmentation_scores(out.seg_map, gt)
                dices.append(d)
                ious.append(j)
        report = {"auc": auc(scored), "ap": average_precision(scored),
                  "dice_mean": float(np.mean(dices)) if dices else None,
                  "iou_mean": float(np.mean(ious)) if ious else None,
                  "n_videos": len(entries), "n_frames": len(entries)}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"metrics written to {args.out}")
    else:
        print(text)
    return 0


def cmd_infer(args, cfg: Config) -> int:
    from .service import AnalysisEngine
    engine = AnalysisEngine(cfg, kfd_checkpoint=args.kfd_checkpoint,
                            llm_checkpoint=args.llm_checkpoint)
    if not engine.ready:
        print(engine.error, file=sys.stderr)
        return 1
    for i, image_path in enumerate(args.images):
        data = Path(image_path).read_bytes()
        result = engine.analyze(data, session_id=f"infer-{i}")
        print(json.dumps(result.to_dict()))
    return 0


def cmd_chat(args, cfg: Config) -> int:
    server = None
    endpoint = cfg.llm.endpoint
    if not endpoint:
        server = mock_server([TEMPLATE_FAKE_REPLY])
        endpoint = server.endpoint
        print(f"(no endpoint configured; using built-in mock at {endpoint})")
    history: list[dict] = []
    try:
        print("chat REPL; empty line or EOF exits")
        while True:
            try:
                line = input("> ").strip()
            except EOFError:
                break
            if not line:
                break
            history.append({"role": "user", "content": line})
            resp = complete(endpoint, ChatRequest(
                model=cfg.llm.model, messages=list(history),
                timeout=cfg.llm.timeout))
            history.append({"role": "assistant", "content": resp.content})
            print(resp.content)
    finally:
        if server is not None:
            server.close()
    return 0


def cmd_serve(args, cfg: Config) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(cfg, kfd_checkpoint=args.kfd_checkpoint,
                     llm_checkpoint=args.llm_checkpoint)
    uvicorn.run(app, host=cfg.serve.host, port=args.port or cfg.serve.port,
                log_level="warning")
    return 0


def cmd_gradcheck(args, cfg: Config) -> int:
    from .checks import gradcheck_suite
    reports = gradcheck_suite(seed=args.seed)
    worst = 0.0
    for name, report in reports.items():
        print(f"[{name}] max relative error {report.max_rel_error:.3e}")
        worst = max(worst, report.max_rel_error)
    print(f"overall max relative error {worst:.3e}")
    if worst > 5e-3:
        print("gradient check FAILED (tolerance 5e-3)", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgelab")
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a forgery dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-dir", default=None)
    p.add_argument("--landmark-dir", default=None)
    p.add_argument("--toy-sources", type=int, default=8)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-kfd", help="train the forgery detector")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--overfit", action="store_true",
                   help="use the overfit lr; exit 0 iff loss halves")
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--log", default=None, help="loss CSV path")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_kfd)

    p = sub.add_parser("train-llm", help="prompt-tune the toy LM")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--kfd-checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_llm)

    p = sub.add_parser("eval", help="compute detection metrics")
    p.add_argument("--manifest", default=None,
                   help="dataset dir or manifest.jsonl (KFD metrics)")
    p.add_argument("--videos", default=None,
                   help="videos JSONL (LLM-response protocol)")
    p.add_argument("--kfd-checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="analyze images")
    p.add_argument("images", nargs="+")
    p.add_argument("--kfd-checkpoint", default=None)
    p.add_argument("--llm-checkpoint", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("chat", help="REPL against the LLM endpoint")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--kfd-checkpoint", default=None)
    p.add_argument("--llm-checkpoint", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    if args.seed is None:
        args.seed = cfg.seed
    if getattr(args, "command", None) == "eval" and not (args.manifest or args.videos):
        parser.error("eval requires --manifest or --videos")
    try:
        return args.func(args, cfg)
    except BrokenPipeError:
        return 1
    except Exception as err:  # CLI boundary: report, don't traceback
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
