"""Feature-container ingestion, record validation, and cross-validation splits.

Two on-disk layouts are supported: the community HDF5 container (one group per
video holding ``features``, ``gtscore``, ``picks``, ``n_frames`` and optional
annotation arrays) and a JSON-directory fallback with one file per video and
the same keys. Features are stored as 32-bit floats and promoted to float64
in memory so downstream gradient checks run at full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

from .errors import DataError

OPTIONAL_KEYS = ("user_summary", "user_scores", "change_points")


@dataclass(frozen=True)
class FeatureSequence:
    """One video's sampled-frame feature matrix plus frame bookkeeping."""

    video_id: str
    features: np.ndarray  # (N, d) float64
    picks: np.ndarray  # (N,) int64, strictly increasing original-frame indices
    n_frames: int  # total original frame count

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class VideoAnnotations:
    """Ground-truth signals attached to one video; all but gt_score optional."""

    gt_score: np.ndarray  # (N,) mean importance per sampled frame, in [0, 1]
    user_scores: np.ndarray | None = None  # (U, N) per-annotator scores
    user_summaries: np.ndarray | None = None  # (U', n_frames) binary
    change_points: np.ndarray | None = None  # (S, 2) inclusive frame ranges


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic k-fold assignment; test folds partition the id set."""

    seed: int
    n_folds: int
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # ((train, test), ...)


def validate_record(fs: FeatureSequence, ann: VideoAnnotations) -> None:
    """Check every invariant of one loaded record; raise DataError naming the
    video and offending field on the first violation."""
    vid = fs.video_id

    def fail(field: str, msg: str) -> None:
        raise DataError(f"video {vid!r}, field {field!r}: {msg}")

    feats = fs.features
    if feats.ndim != 2:
        fail("features", f"expected 2-D matrix, got shape {feats.shape}")
    n, d = feats.shape
    if n < 2:
        fail("features", f"need at least 2 sampled frames, got {n}")
    if d < 2:
        fail("features", f"need feature dimension >= 2, got {d}")
    if np.isnan(feats).all(axis=1).any():
        bad = int(np.isnan(feats).all(axis=1).argmax())
        fail("features", f"row {bad} is all-NaN")

    if fs.picks.shape != (n,):
        fail("picks", f"expected length {n}, got {fs.picks.shape}")
    if n > 1 and not (np.diff(fs.picks) > 0).all():
        fail("picks", "not strictly increasing")
    if fs.picks[0] < 0:
        fail("picks", "negative frame index")
    if fs.n_frames < int(fs.picks[-1]) + 1:
        fail("n_frames", f"{fs.n_frames} < last pick {int(fs.picks[-1])} + 1")
    if fs.n_frames < n:
        fail("n_frames", f"{fs.n_frames} < number of sampled frames {n}")

    if ann.gt_score.shape != (n,):
        fail("gtscore", f"expected length {n}, got {ann.gt_score.shape}")
    if np.isnan(ann.gt_score).any():
        fail("gtscore", "contains NaN")
    if (ann.gt_score < 0).any() or (ann.gt_score > 1).any():
        fail("gtscore", "values outside [0, 1]")

    if ann.user_scores is not None:
        if ann.user_scores.ndim != 2 or ann.user_scores.shape[1] != n:
            fail("user_scores", f"expected (U, {n}), got {ann.user_scores.shape}")
    if ann.user_summaries is not None:
        us = ann.user_summaries
        if us.ndim != 2 or us.shape[1] != fs.n_frames:
            fail("user_summary", f"expected (U', {fs.n_frames}), got {us.shape}")
        if not np.isin(us, (0, 1)).all():
            fail("user_summary", "entries must be binary")
    if ann.change_points is not None:
        cps = ann.change_points
        if cps.ndim != 2 or cps.shape[1] != 2:
            fail("change_points", f"expected (S, 2), got {cps.shape}")
        if cps[0, 0] != 0 or cps[-1, 1] != fs.n_frames - 1:
            fail("change_points", f"must tile [0, {fs.n_frames - 1}]")
        if (cps[:, 1] < cps[:, 0]).any():
            fail("change_points", "segment end before start")
        if len(cps) > 1 and not (cps[1:, 0] == cps[:-1, 1] + 1).all():
            fail("change_points", "segments not contiguous")


def _build_record(video_id: str, raw: dict) -> tuple[FeatureSequence, VideoAnnotations]:
    for key in ("features", "gtscore", "picks", "n_frames"):
        if key not in raw or raw[key] is None:
            raise DataError(f"video {video_id!r}: missing mandatory field {key!r}")
    fs = FeatureSequence(
        video_id=video_id,
        features=np.asarray(raw["features"], dtype=np.float64),
        picks=np.asarray(raw["picks"], dtype=np.int64),
        n_frames=int(raw["n_frames"]),
    )
    ann = VideoAnnotations(
        gt_score=np.asarray(raw["gtscore"], dtype=np.float64),
        user_scores=None
        if raw.get("user_scores") is None
        else np.asarray(raw["user_scores"], dtype=np.float64),
        user_summaries=None
        if raw.get("user_summary") is None
        else np.asarray(raw["user_summary"], dtype=np.uint8),
        change_points=None
        if raw.get("change_points") is None
        else np.asarray(raw["change_points"], dtype=np.int64),
    )
    validate_record(fs, ann)
    return fs, ann


def load_dataset(
    path: str | Path, format: str = "auto"
) -> dict[str, tuple[FeatureSequence, VideoAnnotations]]:
    """Load a feature container into {video_id: (FeatureSequence, VideoAnnotations)}.

    ``format`` is "h5", "json-dir", or "auto" (directories are treated as
    JSON directories, files as HDF5).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset path does not exist: {path}")
    if format == "auto":
        format = "json-dir" if path.is_dir() else "h5"
    if format == "h5":
        return _load_h5(path)
    if format == "json-dir":
        return _load_json_dir(path)
    raise DataError(f"unknown dataset format {format!r}")


def _load_h5(path: Path) -> dict[str, tuple[FeatureSequence, VideoAnnotations]]:
    out: dict[str, tuple[FeatureSequence, VideoAnnotations]] = {}
    with h5py.File(path, "r") as f:
        for vid in sorted(f.keys()):
            grp = f[vid]
            raw = {}
            for key in ("features", "gtscore", "picks", "n_frames", *OPTIONAL_KEYS):
                if key in grp:
                    val = grp[key][()]
                    raw[key] = val
            out[vid] = _build_record(vid, raw)
    return out


def _load_json_dir(path: Path) -> dict[str, tuple[FeatureSequence, VideoAnnotations]]:
    out: dict[str, tuple[FeatureSequence, VideoAnnotations]] = {}
    files = sorted(path.glob("*.json"))
    if not files:
        raise DataError(f"no *.json video records under {path}")
    for file in files:
        vid = file.stem
        try:
            raw = json.loads(file.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"{file}: invalid JSON at line {e.lineno}: {e.msg}") from e
        out[vid] = _build_record(vid, raw)
    return out


def write_h5_dataset(path: str | Path, records: dict[str, dict]) -> None:
    """Write records (raw key -> array dicts) in the canonical HDF5 layout."""
    with h5py.File(path, "w") as f:
        for vid, raw in records.items():
            grp = f.create_group(vid)
            grp.create_dataset("features", data=np.asarray(raw["features"], dtype=np.float32))
            grp.create_dataset("gtscore", data=np.asarray(raw["gtscore"], dtype=np.float32))
            grp.create_dataset("picks", data=np.asarray(raw["picks"], dtype=np.int64))
            grp.create_dataset("n_frames", data=np.int64(raw["n_frames"]))
            if raw.get("user_summary") is not None:
                grp.create_dataset("user_summary", data=np.asarray(raw["user_summary"], dtype=np.uint8))
            if raw.get("user_scores") is not None:
                grp.create_dataset("user_scores", data=np.asarray(raw["user_scores"], dtype=np.float32))
            if raw.get("change_points") is not None:
                grp.create_dataset("change_points", data=np.asarray(raw["change_points"], dtype=np.int64))


def write_json_dataset(path: str | Path, records: dict[str, dict]) -> None:
    """Write records as one JSON file per video (row-major nested lists).

    Arrays pass through float32 first so both layouts carry identical values.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for vid, raw in records.items():
        doc = {
            "features": np.asarray(raw["features"], dtype=np.float32).astype(float).tolist(),
            "gtscore": np.asarray(raw["gtscore"], dtype=np.float32).astype(float).tolist(),
            "picks": np.asarray(raw["picks"], dtype=np.int64).tolist(),
            "n_frames": int(raw["n_frames"]),
        }
        if raw.get("user_summary") is not None:
            doc["user_summary"] = np.asarray(raw["user_summary"], dtype=np.uint8).tolist()
        if raw.get("user_scores") is not None:
            doc["user_scores"] = np.asarray(raw["user_scores"], dtype=np.float32).astype(float).tolist()
        if raw.get("change_points") is not None:
            doc["change_points"] = np.asarray(raw["change_points"], dtype=np.int64).tolist()
        (path / f"{vid}.json").write_text(json.dumps(doc))


def generate_cv_splits(video_ids: list[str], n_folds: int, seed: int) -> SplitSpec:
    """Shuffle ids with the given seed and deal them into n_folds test folds
    whose sizes differ by at most one; train = complement within each fold."""
    ids = list(video_ids)
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    if n_folds > len(ids):
        raise ValueError(f"n_folds={n_folds} exceeds number of videos ({len(ids)})")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    chunks = np.array_split(np.arange(len(order)), n_folds)
    folds = []
    for chunk in chunks:
        test = sorted(order[i] for i in chunk)
        test_set = set(test)
        train = sorted(v for v in ids if v not in test_set)
        folds.append((tuple(train), tuple(test)))
    return SplitSpec(seed=seed, n_folds=n_folds, folds=tuple(folds))


def serialize_splits(spec: SplitSpec) -> str:
    doc = {
        "seed": spec.seed,
        "n_folds": spec.n_folds,
        "folds": [{"train": list(tr), "test": list(te)} for tr, te in spec.folds],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_splits(text: str) -> SplitSpec:
    """Parse a split file, re-validating the exact-cover invariant."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"split file: invalid JSON at line {e.lineno}: {e.msg}") from e
    try:
        folds = tuple(
            (tuple(fold["train"]), tuple(fold["test"])) for fold in doc["folds"]
        )
        spec = SplitSpec(seed=int(doc["seed"]), n_folds=int(doc["n_folds"]), folds=folds)
    except (KeyError, TypeError) as e:
        raise DataError(f"split file: missing or malformed field ({e})") from e
    if len(spec.folds) != spec.n_folds:
        raise DataError(
            f"split file: n_folds={spec.n_folds} but {len(spec.folds)} folds present"
        )
    all_ids = set()
    for tr, te in spec.folds:
        all_ids.update(tr)
        all_ids.update(te)
    seen_test: set[str] = set()
    for k, (tr, te) in enumerate(spec.folds):
        overlap = set(tr) & set(te)
        if overlap:
            raise DataError(f"split file: fold {k} train/test overlap: {sorted(overlap)}")
        if set(tr) | set(te) != all_ids:
            raise DataError(f"split file: fold {k} does not cover all video ids")
        dup = seen_test & set(te)
        if dup:
            raise DataError(f"split file: ids in multiple test folds: {sorted(dup)}")
        seen_test.update(te)
    if seen_test != all_ids:
        raise DataError("split file: test folds do not cover all video ids")
    return spec
