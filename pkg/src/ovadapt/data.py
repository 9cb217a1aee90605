"""Category-shift specification, synthetic dataset generation, feature-file
I/O and deterministic batching.

The synthetic generator is a desk-scale stand-in for image benchmarks: one
isotropic Gaussian per class with centers shared across domains, and every
target sample passed through a fixed rotation-plus-translation domain shift.
Classes split into shared / source-private / target-private by ascending
index, the index order standing in for the alphabetical pick used with named
benchmark categories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from .numerics import check_finite, substream


class FeatureFileError(ValueError):
    """Malformed feature CSV; message carries the offending line number."""


UNLABELED = -1  # label sentinel for rows whose class is unavailable


@dataclass(frozen=True)
class CategoryShiftSpec:
    """Partition of class ids into shared, source-private, target-private."""

    shared: tuple[int, ...]
    source_private: tuple[int, ...]
    target_private: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "shared", tuple(int(c) for c in self.shared))
        object.__setattr__(self, "source_private", tuple(int(c) for c in self.source_private))
        object.__setattr__(self, "target_private", tuple(int(c) for c in self.target_private))
        groups = (set(self.shared), set(self.source_private), set(self.target_private))
        total = len(self.shared) + len(self.source_private) + len(self.target_private)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValueError("CategoryShiftSpec: the three class lists must be disjoint")
        if not self.shared:
            raise ValueError("CategoryShiftSpec: shared classes must be non-empty")

    @property
    def source_classes(self) -> tuple[int, ...]:
        return self.shared + self.source_private

    @property
    def target_classes(self) -> tuple[int, ...]:
        return self.shared + self.target_private

    @property
    def num_known(self) -> int:
        """Size of the source label space; also the unknown sentinel value."""
        return len(self.shared) + len(self.source_private)


def make_category_shift(
    total: int, n_shared: int, n_src_private: int, n_tgt_private: int
) -> CategoryShiftSpec:
    """Assign class ids by ascending index: shared first, then source-private,
    then target-private."""
    if n_shared < 1:
        raise ValueError("make_category_shift: need at least one shared class")
    if min(n_src_private, n_tgt_private) < 0:
        raise ValueError("make_category_shift: negative class counts")
    if n_shared + n_src_private + n_tgt_private > total:
        raise ValueError(
            f"make_category_shift: {n_shared}+{n_src_private}+{n_tgt_private} "
            f"classes exceed total {total}"
        )
    a = n_shared
    b = n_shared + n_src_private
    c = b + n_tgt_private
    return CategoryShiftSpec(
        shared=tuple(range(a)),
        source_private=tuple(range(a, b)),
        target_private=tuple(range(b, c)),
    )


@dataclass
class Dataset:
    """Feature rows with integer labels and a domain tag.

    Target labels exist purely for evaluation; training code never reads
    them. labels == UNLABELED marks rows whose ground truth is unavailable.
    """

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    domain: str  # "source" | "target"
    class_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError(f"Dataset: need a non-empty (n, d) matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("Dataset: labels must align with feature rows")
        if self.domain not in ("source", "target"):
            raise ValueError(f"Dataset: bad domain {self.domain!r}")
        check_finite(self.features, "Dataset features")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    total_classes: int
    dim: int
    samples_per_class: int  # per domain
    class_center_scale: float = 3.0
    noise_sigma: float = 1.0
    shift_rotation_angle: float = 0.0  # radians, applied in coordinate planes
    shift_translation_sigma: float = 0.0
    min_center_separation: float = 0.0  # 0 disables rejection resampling
    seed: int = 0

    def validate(self) -> None:
        if self.total_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("SynthConfig: counts must be >= 1")
        if self.noise_sigma <= 0:
            raise ValueError(f"SynthConfig: noise_sigma must be > 0, got {self.noise_sigma}")
        if self.shift_rotation_angle != 0.0 and self.dim < 2:
            raise ValueError("SynthConfig: rotation needs dim >= 2")
        if self.min_center_separation < 0 or self.class_center_scale <= 0:
            raise ValueError("SynthConfig: bad center parameters")

    def replace(self, **kw) -> "SynthConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return SynthConfig(**vals)


def _draw_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Gaussian class centers, sequentially resampled until each keeps
    min_center_separation from all earlier ones."""
    centers = np.zeros((cfg.total_classes, cfg.dim))
    for c in range(cfg.total_classes):
        for attempt in range(10_000):
            cand = rng.normal(scale=cfg.class_center_scale, size=cfg.dim)
            if c == 0 or cfg.min_center_separation <= 0:
                break
            d = np.linalg.norm(centers[:c] - cand, axis=1)
            if d.min() >= cfg.min_center_separation:
                break
        else:
            raise ValueError(
                "generate_synthetic: could not place class centers with "
                f"min separation {cfg.min_center_separation} (class {c}); "
                "raise class_center_scale or lower the separation"
            )
        centers[c] = cand
    return centers


def _rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Block-diagonal rotation by ``angle`` in each (2i, 2i+1) plane."""
    rot = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        rot[i, i] = c
        rot[i, i + 1] = -s
        rot[i + 1, i] = s
        rot[i + 1, i + 1] = c
    return rot


def generate_synthetic(
    shift: CategoryShiftSpec, cfg: SynthConfig
) -> tuple[Dataset, Dataset]:
    """Build (source, target) datasets for the given category split.

    Class centers are drawn once and shared across domains; target-private
    centers come from the same distribution as known ones, so rejection is
    a real decision problem rather than an outlier giveaway. All randomness
    derives from labeled substreams of cfg.seed.
    """
    cfg.validate()
    needed = max(shift.shared + shift.source_private + shift.target_private) + 1
    if needed > cfg.total_classes:
        raise ValueError(
            f"generate_synthetic: split references class {needed - 1} but only "
            f"{cfg.total_classes} classes configured"
        )

    centers = _draw_centers(cfg, substream(cfg.seed, "centers"))
    rot = _rotation_matrix(cfg.dim, cfg.shift_rotation_angle)
    shift_rng = substream(cfg.seed, "domain-shift")
    translation = (
        shift_rng.normal(scale=cfg.shift_translation_sigma, size=cfg.dim)
        if cfg.shift_translation_sigma > 0
        else np.zeros(cfg.dim)
    )

    def sample_domain(classes: tuple[int, ...], label: str) -> tuple[np.ndarray, np.ndarray]:
        rng = substream(cfg.seed, f"{label}-samples")
        xs, ys = [], []
        for c in classes:
            pts = centers[c] + rng.normal(scale=cfg.noise_sigma, size=(cfg.samples_per_class, cfg.dim))
            xs.append(pts)
            ys.append(np.full(cfg.samples_per_class, c, dtype=np.int64))
        return np.vstack(xs), np.concatenate(ys)

    src_x, src_y = sample_domain(shift.source_classes, "source")
    tgt_x, tgt_y = sample_domain(shift.target_classes, "target")
    tgt_x = tgt_x @ rot.T + translation

    return (
        Dataset(src_x, src_y, domain="source"),
        Dataset(tgt_x, tgt_y, domain="target"),
    )


def map_to_eval_labels(labels: np.ndarray, num_known: int) -> np.ndarray:
    """Ground truth for evaluation: the class id if it is a known class,
    otherwise the single unknown sentinel ``num_known``."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels == UNLABELED):
        raise ValueError("map_to_eval_labels: dataset has unlabeled rows")
    return np.where(labels < num_known, labels, num_known)


def save_feature_file(dataset: Dataset, path) -> None:
    """Write the documented CSV schema: header ``label,f0,...,f{d-1}``, one
    sample per row, full float precision so a reload is exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for y, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def load_feature_file(path, domain: str = "source") -> Dataset:
    """Read the CSV schema back; label -1 marks evaluation-unavailable rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FeatureFileError(f"{path}: empty file, expected a header") from None
        dim = len(header) - 1
        if dim < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(dim)]:
            raise FeatureFileError(
                f"{path}: line 1: bad header, expected 'label,f0,...,f{{d-1}}'"
            )
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise FeatureFileError(
                    f"{path}: line {lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            try:
                labels.append(int(row[0]))
                feats.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FeatureFileError(f"{path}: line {lineno}: {exc}") from None
        if not feats:
            raise FeatureFileError(f"{path}: no data rows")
    return Dataset(np.array(feats), np.array(labels, dtype=np.int64), domain=domain)


def batch_iter(
    dataset: Dataset, batch_size: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """Endless stream of index batches; each epoch is a fresh uniform shuffle
    of all rows, with the final short batch kept."""
    if batch_size < 1:
        raise ValueError(f"batch_iter: batch_size must be >= 1, got {batch_size}")
    n = dataset.n
    while True:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield perm[i : i + batch_size]
