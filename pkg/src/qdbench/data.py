"""Dataset handling: fractional labels, patch extraction, normalization, splits.

The on-disk interchange format is a directory with a ``manifest.json``
(schema version, item count, one entry per item) plus one binary file per
item. Signals, axes and patch pixels are little-endian float64 in row-major
order; state maps are unsigned 8-bit integers. Patch labels and provenance
live in the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParameterError
from .synth import N_STATES, CSDRecord

PATCH_SIZE = 30
PATCH_PIXELS = PATCH_SIZE * PATCH_SIZE  # 900; label fractions are multiples of 1/900

SCHEMA_VERSION = 1
BUDGET_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


class NormalizationScheme(str, Enum):
    MIN_MAX = "min_max"
    Z_SCORE = "z_score"


@dataclass(frozen=True)
class LabelVector:
    """Five-component fractional state label (p_ND, p_SDL, p_SDC, p_SDR, p_DD)."""

    p: np.ndarray

    def validate(self) -> None:
        if self.p.shape != (N_STATES,):
            raise DataError(f"label vector must have {N_STATES} components, got {self.p.shape}")
        if np.any(self.p < 0.0) or np.any(self.p > 1.0):
            raise DataError(f"label components must lie in [0, 1], got {self.p}")
        if abs(float(self.p.sum()) - 1.0) > 1e-9:
            raise DataError(f"label components must sum to 1, got sum {self.p.sum()!r}")


@dataclass
class Patch:
    """A 30x30 crop with provenance and its fractional label."""

    pixels: np.ndarray
    label: LabelVector
    parent_id: str
    center: tuple[int, int]  # (row, col) in the parent record
    noise_id: str
    v1_window: np.ndarray
    v2_window: np.ndarray
    patch_id: str = ""

    def validate(self) -> None:
        if self.pixels.shape != (PATCH_SIZE, PATCH_SIZE):
            raise DataError(
                f"patch {self.patch_id or self.parent_id}: pixels shape "
                f"{self.pixels.shape} != ({PATCH_SIZE}, {PATCH_SIZE})"
            )
        self.label.validate()


def fractional_label(state_patch: np.ndarray) -> LabelVector:
    """Per-state pixel fractions of a 30x30 label patch.

    Component i equals (number of pixels with state i) / 900.
    """
    state_patch = np.asarray(state_patch)
    if state_patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise DataError(
            f"label patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {state_patch.shape}"
        )
    flat = state_patch.ravel()
    if flat.min() < 0 or flat.max() >= N_STATES:
        raise DataError(
            f"state labels must lie in 0..{N_STATES - 1}, "
            f"got range [{flat.min()}, {flat.max()}]"
        )
    counts = np.bincount(flat.astype(np.int64), minlength=N_STATES)
    vec = LabelVector(counts.astype(np.float64) / PATCH_PIXELS)
    vec.validate()
    return vec


def extract_patches(record: CSDRecord, count: int, seed: int) -> list[Patch]:
    """Sample ``count`` uniformly placed in-bounds 30x30 patches, seeded.

    Patch centers follow the top-left + 15 convention: a patch anchored at
    rows t..t+29 has center row t+15, so the single possible patch of a
    30x30 record sits at center (15, 15).
    """
    if count < 1:
        raise ParameterError(f"patch count must be >= 1, got {count}")
    rows, cols = record.signal.shape
    if rows < PATCH_SIZE or cols < PATCH_SIZE:
        raise DataError(
            f"record {record.record_id} is {rows}x{cols}, smaller than "
            f"{PATCH_SIZE}x{PATCH_SIZE}"
        )
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, rows - PATCH_SIZE + 1, size=count)
    lefts = rng.integers(0, cols - PATCH_SIZE + 1, size=count)

    patches = []
    for i, (t, l) in enumerate(zip(tops.tolist(), lefts.tolist())):
        label = fractional_label(record.state_map[t : t + PATCH_SIZE, l : l + PATCH_SIZE])
        patches.append(
            Patch(
                pixels=record.signal[t : t + PATCH_SIZE, l : l + PATCH_SIZE].copy(),
                label=label,
                parent_id=record.record_id,
                center=(t + PATCH_SIZE // 2, l + PATCH_SIZE // 2),
                noise_id=record.noise_id,
                v1_window=record.v1_axis[l : l + PATCH_SIZE].copy(),
                v2_window=record.v2_axis[t : t + PATCH_SIZE].copy(),
                patch_id=f"{record.record_id}#p{i:02d}",
            )
        )
    return patches


def unify_size(image: np.ndarray) -> np.ndarray:
    """Center-crop to 30x30. Never resamples; smaller inputs are rejected."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"expected a 2D image, got shape {image.shape}")
    rows, cols = image.shape
    if rows < PATCH_SIZE or cols < PATCH_SIZE:
        raise DataError(
            f"image {rows}x{cols} is smaller than {PATCH_SIZE}x{PATCH_SIZE}; "
            "upscaling is not supported"
        )
    r0 = (rows - PATCH_SIZE) // 2
    c0 = (cols - PATCH_SIZE) // 2
    return image[r0 : r0 + PATCH_SIZE, c0 : c0 + PATCH_SIZE]


def normalize(pixels: np.ndarray, scheme: NormalizationScheme | str) -> np.ndarray:
    """Per-patch normalization.

    min_max maps the patch onto [0, 1]; z_score standardizes to mean 0 and
    population standard deviation 1. A constant patch carries no contrast
    information and maps to all zeros under both schemes.
    """
    scheme = NormalizationScheme(scheme)
    pixels = np.asarray(pixels, dtype=np.float64)
    if scheme is NormalizationScheme.MIN_MAX:
        lo, hi = pixels.min(), pixels.max()
        if hi - lo == 0.0:
            return np.zeros_like(pixels)
        return (pixels - lo) / (hi - lo)
    mean = pixels.mean()
    std = pixels.std()  # population std (ddof=0)
    if std == 0.0:
        return np.zeros_like(pixels)
    return (pixels - mean) / std


def normalize_batch(batch: np.ndarray, scheme: NormalizationScheme | str) -> np.ndarray:
    """Vectorized per-patch normalization of a (N, 30, 30) stack; matches
    :func:`normalize` applied patch by patch."""
    scheme = NormalizationScheme(scheme)
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise DataError(f"expected a (N, H, W) stack, got shape {batch.shape}")
    if scheme is NormalizationScheme.MIN_MAX:
        lo = batch.min(axis=(1, 2), keepdims=True)
        span = batch.max(axis=(1, 2), keepdims=True) - lo
        safe = np.where(span == 0.0, 1.0, span)
        return np.where(span == 0.0, 0.0, (batch - lo) / safe)
    mean = batch.mean(axis=(1, 2), keepdims=True)
    std = batch.std(axis=(1, 2), keepdims=True)
    safe = np.where(std == 0.0, 1.0, std)
    return np.where(std == 0.0, 0.0, (batch - mean) / safe)


@dataclass
class DatasetSplit:
    """Fixed test holdout plus the budgeted train/val pool.

    ``fold_val_ids`` (one id array per fold, filled by the training layer)
    partitions ``pool_ids``; the train ids of fold k are the pool minus the
    fold's validation ids.
    """

    test_ids: np.ndarray
    pool_ids: np.ndarray
    budget_fraction: float
    seed: int
    fold_val_ids: list[np.ndarray] = field(default_factory=list)

    def val_ids(self, fold: int) -> np.ndarray:
        return self.fold_val_ids[fold]

    def train_ids(self, fold: int) -> np.ndarray:
        val = set(self.fold_val_ids[fold].tolist())
        return np.array([i for i in self.pool_ids.tolist() if i not in val], dtype=np.int64)


def make_splits(
    pool_size: int, test_count: int, budget_fraction: float, seed: int
) -> DatasetSplit:
    """Draw the fixed test set, then the budgeted train/val subset.

    The test ids are drawn first and do not depend on the budget; budget
    subsets are prefixes of one seeded shuffle, so smaller budgets are
    nested inside larger ones for the same seed.
    """
    if budget_fraction not in BUDGET_FRACTIONS:
        raise ConfigError(
            [
                f"budget_fraction must be one of {sorted(BUDGET_FRACTIONS)}, "
                f"got {budget_fraction}"
            ]
        )
    if not 0 < test_count < pool_size:
        raise ParameterError(
            f"test_count must satisfy 0 < test_count < pool_size, "
            f"got test_count={test_count}, pool_size={pool_size}"
        )
    perm = np.random.default_rng(seed).permutation(pool_size).astype(np.int64)
    test_ids = perm[:test_count]
    remainder = perm[test_count:]
    take = round(budget_fraction * remainder.size)
    return DatasetSplit(
        test_ids=test_ids,
        pool_ids=remainder[:take],
        budget_fraction=budget_fraction,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Dataset directory I/O
# ---------------------------------------------------------------------------

_F8 = np.dtype("<f8")
_U1 = np.dtype("u1")


def _record_nbytes(rows: int, cols: int) -> int:
    return rows * cols * 8 + rows * cols + cols * 8 + rows * 8


def _patch_nbytes() -> int:
    return (PATCH_PIXELS + 2 * PATCH_SIZE) * 8


def save_dataset(items: list, path: str | Path) -> None:
    """Write records/patches to ``path`` in the interchange layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, item in enumerate(items):
        if isinstance(item, CSDRecord):
            item.validate()
            fname = f"record_{i:06d}.bin"
            rows, cols = item.signal.shape
            blob = b"".join(
                [
                    np.ascontiguousarray(item.signal, dtype=_F8).tobytes(),
                    np.ascontiguousarray(item.state_map, dtype=_U1).tobytes(),
                    np.ascontiguousarray(item.v1_axis, dtype=_F8).tobytes(),
                    np.ascontiguousarray(item.v2_axis, dtype=_F8).tobytes(),
                ]
            )
            entries.append(
                {
                    "id": item.record_id,
                    "kind": "record",
                    "file": fname,
                    "shape": [rows, cols],
                    "noise_id": item.noise_id,
                }
            )
        elif isinstance(item, Patch):
            item.validate()
            fname = f"patch_{i:06d}.bin"
            blob = b"".join(
                [
                    np.ascontiguousarray(item.pixels, dtype=_F8).tobytes(),
                    np.ascontiguousarray(item.v1_window, dtype=_F8).tobytes(),
                    np.ascontiguousarray(item.v2_window, dtype=_F8).tobytes(),
                ]
            )
            entries.append(
                {
                    "id": item.patch_id or f"patch-{i:06d}",
                    "kind": "patch",
                    "file": fname,
                    "shape": [PATCH_SIZE, PATCH_SIZE],
                    "label": [float(x) for x in item.label.p],
                    "parent_id": item.parent_id,
                    "center": [int(item.center[0]), int(item.center[1])],
                    "noise_id": item.noise_id,
                }
            )
        else:
            raise DataError(f"cannot save item of type {type(item).__name__}")
        (path / fname).write_bytes(blob)

    manifest = {"schema_version": SCHEMA_VERSION, "count": len(entries), "items": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_record(path: Path, entry: dict) -> CSDRecord:
    rows, cols = entry["shape"]
    fpath = path / entry["file"]
    blob = fpath.read_bytes()
    if len(blob) != _record_nbytes(rows, cols):
        raise DataError(
            f"{fpath}: expected {_record_nbytes(rows, cols)} bytes for shape "
            f"{rows}x{cols}, found {len(blob)}"
        )
    off = 0
    signal = np.frombuffer(blob, dtype=_F8, count=rows * cols, offset=off).reshape(rows, cols)
    off += rows * cols * 8
    state = np.frombuffer(blob, dtype=_U1, count=rows * cols, offset=off).reshape(rows, cols)
    off += rows * cols
    v1 = np.frombuffer(blob, dtype=_F8, count=cols, offset=off)
    off += cols * 8
    v2 = np.frombuffer(blob, dtype=_F8, count=rows, offset=off)
    record = CSDRecord(
        signal=signal.copy(),
        state_map=state.copy(),
        v1_axis=v1.copy(),
        v2_axis=v2.copy(),
        record_id=entry["id"],
        noise_id=entry.get("noise_id", ""),
    )
    record.validate()
    return record


def _load_patch(path: Path, entry: dict) -> Patch:
    fpath = path / entry["file"]
    blob = fpath.read_bytes()
    shape = entry.get("shape", [PATCH_SIZE, PATCH_SIZE])
    if shape != [PATCH_SIZE, PATCH_SIZE]:
        raise DataError(f"{fpath}: patch shape {shape} != [{PATCH_SIZE}, {PATCH_SIZE}]")
    if len(blob) != _patch_nbytes():
        raise DataError(
            f"{fpath}: expected {_patch_nbytes()} bytes for a "
            f"{PATCH_SIZE}x{PATCH_SIZE} patch, found {len(blob)}"
        )
    pixels = np.frombuffer(blob, dtype=_F8, count=PATCH_PIXELS).reshape(PATCH_SIZE, PATCH_SIZE)
    v1 = np.frombuffer(blob, dtype=_F8, count=PATCH_SIZE, offset=PATCH_PIXELS * 8)
    v2 = np.frombuffer(blob, dtype=_F8, count=PATCH_SIZE, offset=(PATCH_PIXELS + PATCH_SIZE) * 8)
    label = LabelVector(np.asarray(entry["label"], dtype=np.float64))
    try:
        label.validate()
    except DataError as exc:
        raise DataError(f"{fpath}: {exc}") from exc
    patch = Patch(
        pixels=pixels.copy(),
        label=label,
        parent_id=entry.get("parent_id", ""),
        center=tuple(entry.get("center", (PATCH_SIZE // 2, PATCH_SIZE // 2))),
        noise_id=entry.get("noise_id", ""),
        v1_window=v1.copy(),
        v2_window=v2.copy(),
        patch_id=entry["id"],
    )
    patch.validate()
    return patch


def load_dataset(path: str | Path) -> list:
    """Read a dataset directory back into records/patches, in manifest order."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    items = manifest.get("items", [])
    if manifest.get("count") != len(items):
        raise DataError(
            f"{manifest_path}: manifest advertises {manifest.get('count')} items "
            f"but lists {len(items)}"
        )
    loaded = []
    for entry in items:
        fpath = path / entry.get("file", "")
        if not fpath.is_file():
            raise DataError(f"missing dataset file for item {entry.get('id')!r}: {fpath}")
        kind = entry.get("kind")
        if kind == "record":
            loaded.append(_load_record(path, entry))
        elif kind == "patch":
            loaded.append(_load_patch(path, entry))
        else:
            raise DataError(f"{manifest_path}: item {entry.get('id')!r} has unknown kind {kind!r}")
    return loaded
