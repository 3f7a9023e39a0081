"""Synthetic domain-shifted datasets, CSV ingestion, and the three sample
pools (source, labeled target, unlabeled target)."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BudgetError,
    ColumnCountError,
    ConfigError,
    DuplicateIdError,
    NonNumericFeatureError,
    UnknownDomainError,
    UnknownIdError,
)


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET_LABELED = "target_labeled"
    TARGET_UNLABELED = "target_unlabeled"


@dataclass(frozen=True)
class Sample:
    features: tuple[float, ...]
    label: int | None
    domain: Domain
    id: int


@dataclass(frozen=True)
class Dataset:
    """Array form of a sample list: features ``x``, labels ``y`` (-1 when
    absent) and unique integer ``ids``."""

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        if not (len(self.x) == len(self.y) == len(self.ids)):
            raise ConfigError("dataset arrays must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    def samples(self, domain: Domain) -> list[Sample]:
        return [
            Sample(tuple(float(v) for v in row), None if lab < 0 else int(lab), domain, int(i))
            for row, lab, i in zip(self.x, self.y, self.ids)
        ]

    def subset(self, mask_or_index) -> "Dataset":
        return Dataset(self.x[mask_or_index], self.y[mask_or_index], self.ids[mask_or_index])

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return cls(
            np.array([s.features for s in samples], dtype=np.float64),
            np.array([-1 if s.label is None else s.label for s in samples], dtype=np.int64),
            np.array([s.id for s in samples], dtype=np.int64),
        )


# ---------------------------------------------------------------- generators


def rotate_translate(points: np.ndarray, rotation_deg: float, translation, center) -> np.ndarray:
    theta = math.radians(rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    center = np.asarray(center, dtype=np.float64)
    return (points - center) @ rot.T + center + np.asarray(translation, dtype=np.float64)


MOONS_CENTER = (0.5, 0.25)


def _moons(n: int, noise_sd: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_outer = n // 2
    n_inner = n - n_outer
    t_out = rng.uniform(0.0, math.pi, n_outer)
    t_in = rng.uniform(0.0, math.pi, n_inner)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner]) + rng.normal(0.0, noise_sd, size=(n, 2))
    y = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gen_two_moons_shift(n_per_domain: int = 1000, rotation_deg: float = 45.0, translation=(0.0, 0.0),
                        noise_sd: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Two interleaved half circles; the target is drawn from the same
    generator and then rotated about the data centre and translated."""
    if n_per_domain < 2:
        raise ConfigError(f"n_per_domain must be >= 2, got {n_per_domain}", field="n_per_domain")
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be >= 0, got {noise_sd}", field="noise_sd")
    if len(translation) != 2:
        raise ConfigError("translation must have two components", field="translation")
    src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    xs, ys = _moons(n_per_domain, noise_sd, src_rng)
    xt, yt = _moons(n_per_domain, noise_sd, tgt_rng)
    xt = rotate_translate(xt, rotation_deg, translation, MOONS_CENTER)
    source = Dataset(xs, ys, np.arange(n_per_domain, dtype=np.int64))
    target = Dataset(xt, yt, np.arange(n_per_domain, 2 * n_per_domain, dtype=np.int64))
    return source, target


def class_counts(weights: Sequence[float], total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` over ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("class weights must be non-negative with a positive sum", field="imbalance")
    exact = w / w.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - counts.sum()
    order = np.lexsort((np.arange(len(w)), -(exact - counts)))
    counts[order[:short]] += 1
    return counts


def blob_centers(num_classes: int, class_spacing: float) -> np.ndarray:
    """Class means evenly spaced on a circle of radius ``class_spacing``."""
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    return class_spacing * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blobs_shift(num_classes: int = 6, n_per_class: int = 200, class_spacing: float = 3.0,
                    shift_vector=(1.0, 0.0), imbalance: Sequence[float] | None = None, seed: int = 0,
                    cluster_sd: float = 1.0, rotation_deg: float = 0.0) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian class clusters in 2-D.

    The target uses the same class means, rotated by ``rotation_deg`` about
    the origin and then moved by ``shift_vector``. ``imbalance`` gives
    target class weights; the target keeps ``num_classes * n_per_class``
    samples in total.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}", field="num_classes")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}", field="n_per_class")
    if cluster_sd < 0:
        raise ConfigError(f"cluster_sd must be >= 0, got {cluster_sd}", field="cluster_sd")
    if len(shift_vector) != 2:
        raise ConfigError("shift_vector must have two components", field="shift_vector")
    if imbalance is not None and len(imbalance) != num_classes:
        raise ConfigError(f"imbalance needs {num_classes} weights, got {len(imbalance)}", field="imbalance")
    src_rng, tgt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    centers = blob_centers(num_classes, class_spacing)
    total = num_classes * n_per_class

    def draw(counts, means, rng):
        y = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
        x = means[y] + rng.normal(0.0, cluster_sd, size=(len(y), 2))
        perm = rng.permutation(len(y))
        return x[perm], y[perm]

    xs, ys = draw(np.full(num_classes, n_per_class), centers, src_rng)
    tgt_counts = class_counts(imbalance, total) if imbalance is not None else np.full(num_classes, n_per_class)
    tgt_means = rotate_translate(centers, rotation_deg, shift_vector, (0.0, 0.0))
    xt, yt = draw(tgt_counts, tgt_means, tgt_rng)
    source = Dataset(xs, ys, np.arange(len(ys), dtype=np.int64))
    target = Dataset(xt, yt, np.arange(len(ys), len(ys) + len(yt), dtype=np.int64))
    return source, target


# ---------------------------------------------------------------------- CSV

CSV_DOMAINS = {"source": Domain.SOURCE, "target": Domain.TARGET_UNLABELED}


def write_csv(path, samples: Iterable[Sample], num_features: int) -> None:
    """Header ``f0,...,fk,label,domain``; floats use ``repr`` (bit-exact)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(num_features)] + ["label", "domain"])
        for s in samples:
            tag = "source" if s.domain is Domain.SOURCE else "target"
            writer.writerow([repr(float(v)) for v in s.features] + ["" if s.label is None else s.label, tag])


def load_csv(path, num_features: int) -> list[Sample]:
    """Parse a dataset CSV; ids are assigned in row order starting at 0.

    Target rows come back as :attr:`Domain.TARGET_UNLABELED`; their label,
    if present, is the ground truth used by the simulated oracle.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    samples: list[Sample] = []
    width = num_features + 2
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return samples
        if len(header) != width:
            raise ColumnCountError(f"header has {len(header)} columns, schema needs {width}", row=1)
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ColumnCountError(f"{len(row)} columns, schema needs {width}", row=rowno)
            try:
                feats = tuple(float(v) for v in row[:num_features])
            except ValueError:
                raise NonNumericFeatureError(f"non-numeric feature in {row[:num_features]}", row=rowno) from None
            label_txt = row[num_features].strip()
            try:
                label = int(label_txt) if label_txt else None
            except ValueError:
                raise NonNumericFeatureError(f"label {label_txt!r} is not an integer", row=rowno) from None
            domain = CSV_DOMAINS.get(row[num_features + 1].strip())
            if domain is None:
                raise UnknownDomainError(f"unknown domain tag {row[num_features + 1]!r}", row=rowno)
            samples.append(Sample(feats, label, domain, len(samples)))
    return samples


def split_domains(samples: Sequence[Sample]) -> tuple[Dataset, Dataset]:
    source = [s for s in samples if s.domain is Domain.SOURCE]
    target = [s for s in samples if s.domain is not Domain.SOURCE]
    return Dataset.from_samples(source), Dataset.from_samples(target)


# --------------------------------------------------------------------- pools


def budget_count(budget_percent: float, n_unlabeled: int) -> int:
    """``floor(B% * N)``, tolerant of binary round-off in ``B``."""
    if budget_percent < 0:
        raise ConfigError(f"budget_percent must be >= 0, got {budget_percent}", field="budget_percent")
    return int(math.floor(budget_percent * n_unlabeled / 100.0 + 1e-9))


@dataclass(frozen=True)
class PoolState:
    """Source set, the full target set, and which target ids are labeled.

    Hidden target labels stay inside ``target``; trainers read unlabeled
    samples through :attr:`unlabeled_target`, which carries no labels.
    """

    source: Dataset
    target: Dataset
    labeled_ids: tuple[int, ...]
    total_budget: int
    spent: int = 0

    def __post_init__(self):
        if self.spent > self.total_budget:
            raise BudgetError(f"spent {self.spent} exceeds budget {self.total_budget}")

    @classmethod
    def create(cls, source: Dataset, target: Dataset, total_budget: int) -> "PoolState":
        if len(np.unique(target.ids)) != len(target):
            raise DuplicateIdError("target ids must be unique")
        return cls(source, target, (), int(total_budget), 0)

    def _labeled_mask(self) -> np.ndarray:
        return np.isin(self.target.ids, np.asarray(self.labeled_ids, dtype=np.int64))

    @property
    def labeled_target(self) -> Dataset:
        # keep annotation order so labeled subsets are reproducible
        pos = {int(i): k for k, i in enumerate(self.target.ids)}
        idx = np.array([pos[i] for i in self.labeled_ids], dtype=np.int64)
        return self.target.subset(idx)

    @property
    def unlabeled_target(self) -> Dataset:
        sub = self.target.subset(~self._labeled_mask())
        return Dataset(sub.x, np.full(len(sub), -1, dtype=np.int64), sub.ids)

    def unlabeled_ground_truth(self) -> np.ndarray:
        """True labels of the unlabeled pool, aligned with :attr:`unlabeled_target`.
        For metrics only."""
        return self.target.y[~self._labeled_mask()]

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_ids)

    @property
    def n_unlabeled(self) -> int:
        return len(self.target) - len(self.labeled_ids)

    @property
    def remaining(self) -> int:
        return self.total_budget - self.spent


def annotate(pool: PoolState, ids: Sequence[int]) -> PoolState:
    """Reveal the labels of ``ids`` and move them to the labeled pool."""
    ids = [int(i) for i in ids]
    if not ids:
        return pool
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("annotation request repeats an id")
    unlabeled = set(pool.unlabeled_target.ids.tolist())
    missing = [i for i in ids if i not in unlabeled]
    if missing:
        raise UnknownIdError(f"ids not in the unlabeled pool: {missing[:5]}")
    if pool.spent + len(ids) > pool.total_budget:
        raise BudgetError(f"annotating {len(ids)} would exceed the budget ({pool.remaining} left)")
    return replace(pool, labeled_ids=pool.labeled_ids + tuple(ids), spent=pool.spent + len(ids))
