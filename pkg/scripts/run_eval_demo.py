#!/usr/bin/env python3
"""Evaluation protocol demo.

Generates a small seed-pinned dataset, scores it with an untrained (or
checkpointed) detector, and prints ranking and segmentation metrics. Also
demonstrates the video protocol against the scripted mock chat service.
"""

import argparse
import json
import tempfile
from pathlib import Path

from forgelab.cli import run_command
from forgelab.config import Config
from forgelab.evalproto import parse_response, sample_frames, video_score
from forgelab.llm_client import ChatRequest, complete, mock_server


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--kfd-checkpoint", default=None)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        ds = str(Path(tmp) / "ds")
        rc = run_command(["--seed", "7", "simulate", "--count",
                          str(args.count), "--out", ds, "--toy-sources", "8"])
        assert rc == 0
        eval_args = ["eval", "--manifest", ds]
        if args.kfd_checkpoint:
            eval_args += ["--kfd-checkpoint", args.kfd_checkpoint]
        rc = run_command(eval_args)
        assert rc == 0

    # video protocol: 2 scripted videos against the mock chat endpoint
    script = ["Yes. This is a deepfake image, and the artifact is at the "
              "mouth of the image."] * 32 + ["No. This is a real image."] * 32
    with mock_server(script) as srv:
        for video_id, label in (("vid-fake", 1), ("vid-real", 0)):
            labels = []
            for _ in sample_frames(64, 32):
                resp = complete(srv.endpoint, ChatRequest(
                    model="forgelab-mock",
                    messages=[{"role": "user",
                               "content": "Is this a deepfake image?"}]))
                labels.append(parse_response(resp.content))
            vs = video_score(video_id, labels)
            print(json.dumps({"video_id": video_id, "label": label,
                              "score": vs.score}))


if __name__ == "__main__":
    main()
