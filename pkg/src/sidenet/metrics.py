"""Ranking metrics: video-level AUROC and average precision."""

from __future__ import annotations

import numpy as np

from .errors import MetricError


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic; ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores/labels must be matching 1-d arrays, got {s.shape} vs {y.shape}")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUROC needs both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def video_scores(clip_scores, video_ids, labels):
    """Per-video mean score and label; labels must agree within a video."""
    by_video: dict[str, list[float]] = {}
    video_label: dict[str, int] = {}
    for s, vid, y in zip(clip_scores, video_ids, labels):
        by_video.setdefault(vid, []).append(float(s))
        y = int(y)
        if vid in video_label and video_label[vid] != y:
            raise MetricError(f"video {vid!r} carries conflicting labels")
        video_label[vid] = y
    vids = sorted(by_video)
    means = np.asarray([np.mean(by_video[v]) for v in vids])
    ys = np.asarray([video_label[v] for v in vids])
    return vids, means, ys


def video_auroc(clip_scores, video_ids, labels) -> float:
    """AUROC over per-video mean clip scores."""
    _, means, ys = video_scores(clip_scores, video_ids, labels)
    return auroc(means, ys)


def average_precision(scores, labels) -> float:
    """AP = sum over descending thresholds of (R_k - R_{k-1}) * P_k."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores/labels must be matching 1-d arrays, got {s.shape} vs {y.shape}")
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    while i < len(ss):
        j = i
        while j + 1 < len(ss) and ss[j + 1] == ss[i]:
            j += 1
        tp += int(ys[i : j + 1].sum())
        seen += j - i + 1
        recall = tp / n_pos
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)
