"""Evaluation protocol: rule-based response parsing, uniform frame sampling,
video-level aggregation, AUC/AP ranking metrics, and segmentation scoring.

All functions here are pure and deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

FAKE = "fake"
REAL = "real"


@dataclass(frozen=True)
class ParsedLabel:
    label: str          # "fake" | "real"
    matched_rule: str   # "yes-keyword" | "is-deepfake" | "no-keyword" | "not-deepfake" | "default-real"


@dataclass
class VideoScore:
    video_id: str
    frame_labels: list[ParsedLabel]
    score: float = field(init=False)

    def __post_init__(self):
        if not self.frame_labels:
            raise ValueError("video_score requires at least one frame label")
        fake = sum(1 for l in self.frame_labels if l.label == FAKE)
        self.score = fake / len(self.frame_labels)


@dataclass(frozen=True)
class RankingMetrics:
    auc: float
    ap: float
    n_positive: int
    n_negative: int


# word-boundary patterns; negatives take precedence over positives
_NOT_DEEPFAKE = re.compile(r"\bnot\s+(a\s+)?deepfake\b", re.IGNORECASE)
_NO = re.compile(r"\bno\b", re.IGNORECASE)
_IS_DEEPFAKE = re.compile(r"\bis\s+(a\s+)?deepfake\b", re.IGNORECASE)
_YES = re.compile(r"\byes\b", re.IGNORECASE)


def parse_response(text: str) -> ParsedLabel:
    """Deterministic rule-based parse of an LLM reply into fake/real.

    Case-insensitive keyword search on word boundaries. Negative rules are
    checked before positive ones so that replies matching both (e.g.
    "No ... yes ...") resolve to real; with no keyword at all the reply
    defaults to real.
    """
    if _NOT_DEEPFAKE.search(text):
        return ParsedLabel(REAL, "not-deepfake")
    if _NO.search(text):
        return ParsedLabel(REAL, "no-keyword")
    if _IS_DEEPFAKE.search(text):
        return ParsedLabel(FAKE, "is-deepfake")
    if _YES.search(text):
        return ParsedLabel(FAKE, "yes-keyword")
    return ParsedLabel(REAL, "default-real")


def sample_frames(frame_count: int, k: int = 32) -> list[int]:
    """Uniform frame sampling: floor(i*T/k) for i in 0..k-1, deduplicated
    order-preserving when T < k."""
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    out: list[int] = []
    for i in range(k):
        idx = (i * frame_count) // k
        if not out or out[-1] != idx:
            out.append(idx)
    return out


def video_score(video_id: str, frame_labels: list[ParsedLabel]) -> VideoScore:
    return VideoScore(video_id, list(frame_labels))


def auc(scored: list[tuple[float, int]]) -> float:
    """Mann-Whitney AUC over (score, label) pairs; ties count 0.5."""
    pos = np.array([s for s, c in scored if c == 1], np.float64)
    neg = np.array([s for s, c in scored if c == 0], np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc requires at least one positive and one negative")
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(pos) * len(neg)))


def average_precision(scored: list[tuple[float, int]]) -> float:
    """Step-interpolated AP over the descending-score sweep; ties broken by
    stable input order."""
    n_pos = sum(1 for _, c in scored if c == 1)
    if n_pos == 0:
        raise ValueError("average_precision requires at least one positive")
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    tp = 0
    ap = 0.0
    for rank, i in enumerate(order, start=1):
        if scored[i][1] == 1:
            tp += 1
            ap += (1.0 / n_pos) * (tp / rank)
    return float(ap)


def ranking_metrics(scored: list[tuple[float, int]]) -> RankingMetrics:
    n_pos = sum(1 for _, c in scored if c == 1)
    n_neg = len(scored) - n_pos
    return RankingMetrics(auc(scored), average_precision(scored), n_pos, n_neg)


def segmentation_scores(pred_mask: np.ndarray, gt_mask: np.ndarray,
                        threshold: float = 0.5) -> tuple[float, float]:
    """(dice, iou) of the thresholded prediction against a binary ground
    truth; the both-empty case is defined as (1.0, 1.0)."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    p = pred_mask >= threshold
    q = gt_mask >= threshold
    inter = float(np.logical_and(p, q).sum())
    a = float(p.sum())
    b = float(q.sum())
    union = a + b - inter
    if a + b == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (a + b)
    iou = inter / union if union > 0 else 1.0
    return dice, iou
