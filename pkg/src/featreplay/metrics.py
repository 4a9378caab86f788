"""Segmentation and continual-learning metrics.

All functions are pure. Dice and the transfer metrics operate on plain
arrays; the ResultMatrix holds mean test Dice (in percent) per
(training stage, task) cell, the substrate for backward/forward transfer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, StateError


def dice(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Overlap score 2|A∩B| / (|A|+|B|), macro-averaged over foreground labels.

    A label that is empty in both masks scores 1.0 (a correct all-background
    prediction is not penalized).
    """
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise InputError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    labels = sorted((set(np.unique(pred_mask)) | set(np.unique(gt_mask))) - {0})
    if not labels:
        return 1.0
    scores = []
    for lab in labels:
        a = pred_mask == lab
        b = gt_mask == lab
        denom = a.sum() + b.sum()
        if denom == 0:
            scores.append(1.0)
        else:
            scores.append(2.0 * np.logical_and(a, b).sum() / denom)
    return float(np.mean(scores))


def ece(pixel_probs: np.ndarray, gt: np.ndarray, n_bins: int = 10) -> float:
    """Expected calibration error of per-pixel foreground probabilities.

    Confidence is max(p, 1-p); a pixel counts as accurate when the implied
    label (p >= 0.5) matches the binary ground truth. Bins partition [0, 1]
    with equal width.
    """
    p = np.asarray(pixel_probs, dtype=np.float64).ravel()
    y = np.asarray(gt).ravel().astype(bool)
    if p.shape != y.shape:
        raise InputError("probability and label counts differ")
    if p.size == 0:
        return 0.0
    if p.min() < 0 or p.max() > 1:
        raise InputError("probabilities must lie in [0, 1]")
    conf = np.maximum(p, 1.0 - p)
    pred = p >= 0.5
    correct = pred == y
    bins = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    total = p.size
    err = 0.0
    for b in range(n_bins):
        in_bin = bins == b
        n_b = int(in_bin.sum())
        if n_b == 0:
            continue
        acc = correct[in_bin].mean()
        avg_conf = conf[in_bin].mean()
        err += (n_b / total) * abs(acc - avg_conf)
    return float(err)


@dataclass
class EceAccumulator:
    """Streaming ECE over many volumes without keeping all pixels around."""

    n_bins: int = 10
    counts: np.ndarray = field(default_factory=lambda: np.zeros(10))
    conf_sums: np.ndarray = field(default_factory=lambda: np.zeros(10))
    acc_sums: np.ndarray = field(default_factory=lambda: np.zeros(10))

    def add(self, pixel_probs: np.ndarray, gt: np.ndarray) -> None:
        p = np.asarray(pixel_probs, dtype=np.float64).ravel()
        y = np.asarray(gt).ravel().astype(bool)
        conf = np.maximum(p, 1.0 - p)
        correct = (p >= 0.5) == y
        bins = np.minimum((conf * self.n_bins).astype(int), self.n_bins - 1)
        for b in range(self.n_bins):
            in_bin = bins == b
            self.counts[b] += in_bin.sum()
            self.conf_sums[b] += conf[in_bin].sum()
            self.acc_sums[b] += correct[in_bin].sum()

    def value(self) -> float:
        total = self.counts.sum()
        if total == 0:
            return 0.0
        err = 0.0
        for b in range(self.n_bins):
            if self.counts[b] == 0:
                continue
            acc = self.acc_sums[b] / self.counts[b]
            conf = self.conf_sums[b] / self.counts[b]
            err += (self.counts[b] / total) * abs(acc - conf)
        return float(err)


@dataclass
class ResultMatrix:
    """R[i][j] = mean test Dice (percent) on task j after training stage i."""

    r: np.ndarray  # (stages, tasks)
    std: np.ndarray  # (stages, tasks)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.r.shape != self.std.shape:
            raise InputError("value and std matrices must share a shape")
        if self.r.size and (np.nanmin(self.r) < 0 or np.nanmax(self.r) > 100):
            raise InputError("Dice percentages must lie in [0, 100]")

    @property
    def n_stages(self) -> int:
        return self.r.shape[0]


def bwt(r: ResultMatrix | np.ndarray) -> float:
    """Backward transfer: how much final performance on early tasks moved
    relative to the moment each task was learned (negative = forgetting)."""
    r = r.r if isinstance(r, ResultMatrix) else np.asarray(r, dtype=np.float64)
    t = r.shape[0]
    if t < 2:
        raise InputError("BWT needs at least two stages")
    deltas = [r[t - 1, i] - r[i, i] for i in range(t - 1)]
    return float(np.mean(deltas))


def fwt(r: ResultMatrix | np.ndarray, r_seq: ResultMatrix | np.ndarray | None) -> float:
    """Forward transfer: just-learned performance relative to a sequential
    reference run on the same stream. The reference scores exactly 0."""
    if r_seq is None:
        raise StateError("FWT needs a sequential reference matrix")
    r = r.r if isinstance(r, ResultMatrix) else np.asarray(r, dtype=np.float64)
    rs = r_seq.r if isinstance(r_seq, ResultMatrix) else np.asarray(r_seq, dtype=np.float64)
    if r.shape != rs.shape:
        raise InputError("result and reference matrices must share a shape")
    t = r.shape[0]
    if t < 2:
        raise InputError("FWT needs at least two stages")
    deltas = [r[j, j] - rs[j, j] for j in range(1, t)]
    return float(np.mean(deltas))


def auroc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic; ``scores_pos`` are the
    cases that should score higher (here: OoD)."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InputError("need scores on both sides")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))
