"""Statistical snapshot summaries and their temporal composition.

Each graph snapshot collapses to five aggregators of a node-feature
distribution: lower median, mean, population standard deviation, skewness
(m3 / m2^1.5) and non-excess kurtosis (m4 / m2^2); zero-variance
distributions get skewness = kurtosis = 0 by convention.

A temporal signature is the concatenation of per-epoch blocks, optionally
smoothed: 'linear_weighted' replaces block tau by the j-weighted average of
blocks 1..tau, 'exponential' by the recurrence a*s(tau) + (1-a)*prev.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centrality import NodeFeatureVector

STAT_NAMES = ("median", "mean", "std", "skewness", "kurtosis")
MODES = ("concat", "linear_weighted", "exponential")


class SignatureError(Exception):
    """Empty inputs or invalid composition parameters."""


@dataclass(frozen=True)
class SnapshotSignature:
    """Five-statistic summary of one epoch's node-feature distribution."""

    epoch: int
    stats: np.ndarray   # (median, mean, std, skewness, kurtosis)


@dataclass(frozen=True)
class TemporalSignature:
    """Concatenated (optionally smoothed) snapshot blocks for one run."""

    run_id: str
    feature_kind: str
    representation_tag: str
    mode: str
    alpha: float
    vector: np.ndarray


def snapshot_stats(values: np.ndarray) -> np.ndarray:
    """(median, mean, std, skew, kurtosis) of a sample; lower median, biased moments."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise SignatureError("empty feature vector")
    lower_median = np.partition(x, (x.size - 1) // 2)[(x.size - 1) // 2]
    mean = x.mean()
    d = x - mean
    m2 = np.mean(d * d)
    if m2 == 0.0:
        return np.array([lower_median, mean, 0.0, 0.0, 0.0])
    m3 = np.mean(d ** 3)
    m4 = np.mean(d ** 4)
    return np.array([lower_median, mean, np.sqrt(m2), m3 / m2 ** 1.5, m4 / m2 ** 2])


def snapshot_signature(features: NodeFeatureVector, epoch: int) -> SnapshotSignature:
    return SnapshotSignature(epoch=epoch, stats=snapshot_stats(features.values))


def compose_blocks(blocks: list[np.ndarray], mode: str, alpha: float = 0.5) -> np.ndarray:
    """Concatenate per-epoch blocks after the chosen smoothing.

    Works on blocks of any fixed length (5 for a single feature vector, 10
    for positive/negative concatenation).
    """
    if not blocks:
        raise SignatureError("no snapshots to compose")
    arr = np.vstack([np.asarray(b, dtype=np.float64) for b in blocks])
    if mode == "concat":
        out = arr
    elif mode == "linear_weighted":
        j = np.arange(1, arr.shape[0] + 1, dtype=np.float64)[:, None]
        out = np.cumsum(j * arr, axis=0) / np.cumsum(j, axis=0)
    elif mode == "exponential":
        if not 0.0 < alpha <= 1.0:
            raise SignatureError(f"alpha must lie in (0, 1], got {alpha}")
        if alpha == 1.0:
            out = arr  # degenerates to concat, bit-exactly
        else:
            out = np.empty_like(arr)
            out[0] = arr[0]
            for t in range(1, arr.shape[0]):
                out[t] = alpha * arr[t] + (1.0 - alpha) * out[t - 1]
    else:
        raise SignatureError(f"unknown mode {mode!r} (expected one of {MODES})")
    return out.reshape(-1)


def temporal_signature(snapshots: list[SnapshotSignature], mode: str = "concat",
                       alpha: float = 0.5, run_id: str = "", feature_kind: str = "",
                       representation_tag: str = "") -> TemporalSignature:
    """Compose ordered snapshot signatures into one run-level vector."""
    if not snapshots:
        raise SignatureError("no snapshots to compose")
    epochs = [s.epoch for s in snapshots]
    if any(b - a != 1 for a, b in zip(epochs, epochs[1:])):
        raise SignatureError(f"snapshot epochs must be consecutive, got {epochs}")
    vector = compose_blocks([s.stats for s in snapshots], mode=mode, alpha=alpha)
    return TemporalSignature(run_id=run_id, feature_kind=feature_kind,
                             representation_tag=representation_tag, mode=mode,
                             alpha=alpha, vector=vector)


def write_signature_matrix(path: str | Path, rows: list[tuple[str, str, float, np.ndarray]]) -> None:
    """CSV interchange format: run_id,label,final_accuracy,f_1..f_k."""
    if not rows:
        raise SignatureError("no rows to write")
    k = len(rows[0][3])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "label", "final_accuracy"]
                        + [f"f_{i + 1}" for i in range(k)])
        for run_id, label, acc, vec in rows:
            if len(vec) != k:
                raise SignatureError("ragged signature matrix")
            writer.writerow([run_id, label, repr(float(acc))]
                            + [repr(float(x)) for x in vec])


def read_signature_matrix(path: str | Path):
    """Inverse of :func:`write_signature_matrix`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = len(header) - 3
        rows = []
        for rec in reader:
            rows.append((rec[0], rec[1], float(rec[2]),
                         np.array([float(x) for x in rec[3:3 + k]])))
    return rows
