"""Per-frame feature distributions, entropies, and the temporal-change series.

Each frame's feature vector is turned into a probability distribution with a
softmax across feature dimensions; the entropy series H_t then yields two
model-independent signals per video:

* pairwise relative change  D_t = |(H_t - H_{t-1}) / H_t|
* contextual relative change  G_t = |(H_t - mean(H_1..H_{t-1})) / H_t|

Both are defined for t in [2, N] and depend only on the features, so they are
computed once per video and cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Floor applied to the H_t denominator. A zero entropy needs a one-hot
# distribution, unreachable from finite features (masked zero rows give the
# uniform distribution, H = ln d), so this is a pure safety net.
ENTROPY_FLOOR = 1e-12


@dataclass(frozen=True)
class InfoMetrics:
    """Cached per-video series; ptri/pctri have length N-1 (t = 2..N)."""

    entropy: np.ndarray
    ptri: np.ndarray
    pctri: np.ndarray


def feature_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over feature dimensions, computed with max-subtraction."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError(f"need at least 2 feature dimensions, got {x.size}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite feature values")
    z = np.exp(x - x.max())
    return z / z.sum()


def entropy(dist: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability terms contribute zero."""
    dist = np.asarray(dist, dtype=np.float64)
    if (dist < 0).any():
        raise ValueError("negative probabilities")
    terms = np.where(dist > 0, dist * np.log(np.where(dist > 0, dist, 1.0)), 0.0)
    return float(-terms.sum())


def entropy_series(features: np.ndarray) -> np.ndarray:
    """Row-wise softmax entropy of an (N, d) feature matrix."""
    feats = _as_matrix(features)
    if not np.isfinite(feats).all():
        raise ValueError("non-finite feature values")
    shifted = feats - feats.max(axis=1, keepdims=True)
    z = np.exp(shifted)
    p = z / z.sum(axis=1, keepdims=True)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def ptri_series(features) -> np.ndarray:
    """Pairwise series D_t = |(H_t - H_{t-1}) / H_t| for t = 2..N."""
    h = entropy_series(features)
    return np.abs((h[1:] - h[:-1]) / np.maximum(h[1:], ENTROPY_FLOOR))


def pctri_series(features) -> np.ndarray:
    """Contextual series G_t = |(H_t - mean(H_1..H_{t-1})) / H_t| for t = 2..N.

    The history mean is a running prefix average, so the whole series is O(N).
    """
    h = entropy_series(features)
    n = h.shape[0]
    history_mean = np.cumsum(h)[:-1] / np.arange(1, n)
    return np.abs((h[1:] - history_mean) / np.maximum(h[1:], ENTROPY_FLOOR))


def compute_info_metrics(features) -> InfoMetrics:
    """Entropy, pairwise, and contextual series for one video in one pass."""
    h = entropy_series(features)
    n = h.shape[0]
    denom = np.maximum(h[1:], ENTROPY_FLOOR)
    ptri = np.abs((h[1:] - h[:-1]) / denom)
    history_mean = np.cumsum(h)[:-1] / np.arange(1, n)
    pctri = np.abs((h[1:] - history_mean) / denom)
    return InfoMetrics(entropy=h, ptri=ptri, pctri=pctri)


def precompute_metrics(dataset: dict) -> dict[str, InfoMetrics]:
    """Compute InfoMetrics for every video of a loaded dataset."""
    return {vid: compute_info_metrics(fs.features) for vid, (fs, _) in dataset.items()}


def write_metrics_cache(path: str | Path, metrics: dict[str, InfoMetrics]) -> None:
    doc = [
        {
            "video_id": vid,
            "entropy": m.entropy.tolist(),
            "ptri": m.ptri.tolist(),
            "pctri": m.pctri.tolist(),
        }
        for vid, m in sorted(metrics.items())
    ]
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def read_metrics_cache(path: str | Path) -> dict[str, InfoMetrics]:
    doc = json.loads(Path(path).read_text())
    return {
        rec["video_id"]: InfoMetrics(
            entropy=np.asarray(rec["entropy"], dtype=np.float64),
            ptri=np.asarray(rec["ptri"], dtype=np.float64),
            pctri=np.asarray(rec["pctri"], dtype=np.float64),
        )
        for rec in doc
    }


def _as_matrix(features) -> np.ndarray:
    mat = getattr(features, "features", features)
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 2 or mat.shape[1] < 2:
        raise ValueError(f"expected (N>=2, d>=2) feature matrix, got shape {mat.shape}")
    return mat
