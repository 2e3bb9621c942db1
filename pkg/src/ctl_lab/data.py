"""Synthetic evolving-domain benchmark and labeled/unlabeled bookkeeping.

Each domain is a pair of isotropic Gaussian clusters.  Positives sit at
``radius * (cos t, sin t)``.  With the default ``antipodal`` layout the
negatives sit on the opposite side of the origin, so moving ``t`` from 0 to
pi rotates the whole labeled configuration and eventually inverts the labels.
The ``mirrored`` layout puts negatives at angle ``-t`` instead.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

LAYOUTS = ("antipodal", "mirrored")


@dataclass(frozen=True)
class GaussianDomainSpec:
    theta: float = 0.0
    n_pos: int = 1000
    n_neg: int = 1000
    radius: float = 1.5
    stdev: float = math.sqrt(0.5)
    seed: int = 42
    layout: str = "antipodal"

    def __post_init__(self):
        if self.n_pos < 0 or self.n_neg < 0:
            raise ValueError("class counts must be non-negative")
        if not self.stdev > 0:
            raise ValueError("stdev must be positive")
        if not math.isfinite(self.radius) or not math.isfinite(self.theta):
            raise ValueError("radius and theta must be finite")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def positive_center(self) -> np.ndarray:
        return self.radius * np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def negative_center(self) -> np.ndarray:
        if self.layout == "mirrored":
            return self.radius * np.array([math.cos(-self.theta), math.sin(-self.theta)])
        return -self.positive_center


@dataclass
class LabeledDomainSample:
    """A finite domain sample.

    ``y`` always holds the true labels.  ``labeled`` marks the points whose
    label a learner may see; ``pseudo_y`` (-1 where absent) carries inferred
    labels for the rest.
    """

    domain_id: str
    time_stamp: int
    x: np.ndarray
    y: np.ndarray
    labeled: np.ndarray
    pseudo_y: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        self.x = x if x.ndim == 2 else x.reshape(len(x), -1) if x.size else np.zeros((0, 2))
        self.y = np.asarray(self.y, dtype=np.int64)
        self.labeled = np.asarray(self.labeled, dtype=bool)
        if self.time_stamp < 0:
            raise ValueError("time_stamp must be >= 0")
        if not (len(self.x) == len(self.y) == len(self.labeled)):
            raise ValueError("x, y and labeled must have equal length")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite feature values")
        if self.pseudo_y is not None:
            self.pseudo_y = np.asarray(self.pseudo_y, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def is_source(self) -> bool:
        return self.time_stamp == 0

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())

    @property
    def has_pseudo(self) -> np.ndarray:
        if self.pseudo_y is None:
            return np.zeros(len(self), dtype=bool)
        return (~self.labeled) & (self.pseudo_y >= 0)

    def training_labels(self) -> np.ndarray:
        """True labels on labeled points, pseudo-labels elsewhere, -1 if neither."""
        out = np.where(self.labeled, self.y, -1)
        if self.pseudo_y is not None:
            out = np.where(self.has_pseudo, self.pseudo_y, out)
        return out

    def subset(self, idx) -> "LabeledDomainSample":
        idx = np.asarray(idx)
        return replace(
            self,
            x=self.x[idx],
            y=self.y[idx],
            labeled=self.labeled[idx],
            pseudo_y=None if self.pseudo_y is None else self.pseudo_y[idx],
        )


def _rng(seed) -> np.random.Generator:
    # PCG64 + numpy's ziggurat normal sampler
    return np.random.default_rng(seed)


def generate_domain(spec: GaussianDomainSpec, domain_id: str = "S1", time_stamp: int = 0) -> LabeledDomainSample:
    rng = _rng(spec.seed)
    pos = spec.positive_center + spec.stdev * rng.standard_normal((spec.n_pos, 2))
    neg = spec.negative_center + spec.stdev * rng.standard_normal((spec.n_neg, 2))
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(spec.n_pos, dtype=np.int64), np.zeros(spec.n_neg, dtype=np.int64)])
    return LabeledDomainSample(domain_id, time_stamp, x, y, np.ones(len(y), dtype=bool))


def stamp_seed(base_seed: int, stamp: int) -> int:
    return int(np.random.SeedSequence([base_seed, stamp]).generate_state(1, dtype=np.uint64)[0])


def generate_evolving_sequence(n_stamps: int, template: GaussianDomainSpec = GaussianDomainSpec(),
                               include_source: bool = False, theta_max: float = math.pi) -> list[LabeledDomainSample]:
    """Target domains ``T1..Tn`` with ``theta_i = i * theta_max / n``.

    With ``include_source`` the theta=0 source ``S1`` (stamp 0) is prepended.
    """
    if n_stamps < 1:
        raise ValueError("n_stamps must be >= 1")
    out = []
    if include_source:
        spec = replace(template, theta=0.0, seed=stamp_seed(template.seed, 0))
        out.append(generate_domain(spec, "S1", 0))
    for i in range(1, n_stamps + 1):
        spec = replace(template, theta=i * theta_max / n_stamps, seed=stamp_seed(template.seed, i))
        out.append(generate_domain(spec, f"T{i}", i))
    return out


def split_labels(sample: LabeledDomainSample, n_labeled: int, seed) -> LabeledDomainSample:
    """Flag exactly ``n_labeled`` points as labeled, split evenly across classes when possible."""
    n = len(sample)
    if not 0 <= n_labeled <= n:
        raise ValueError(f"n_labeled={n_labeled} outside [0, {n}]")
    rng = _rng(seed)
    pos = np.flatnonzero(sample.y == 1)
    neg = np.flatnonzero(sample.y == 0)
    want_neg = min(len(neg), n_labeled // 2)
    want_pos = min(len(pos), n_labeled - want_neg)
    want_neg = n_labeled - want_pos
    chosen = np.concatenate([rng.permutation(pos)[:want_pos], rng.permutation(neg)[:want_neg]])
    labeled = np.zeros(n, dtype=bool)
    labeled[chosen] = True
    return replace(sample, labeled=labeled, pseudo_y=None)


def holdout_mask(sample: LabeledDomainSample, test_fraction: float, seed) -> np.ndarray:
    """Boolean mask of a stratified hold-out set holding ``test_fraction`` of each class."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = _rng(seed)
    mask = np.zeros(len(sample), dtype=bool)
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(sample.y == cls))
        mask[idx[: int(round(test_fraction * len(idx)))]] = True
    return mask


def train_test_split(sample: LabeledDomainSample, test_fraction: float, seed):
    """Stratified hold-out split; returns ``(train, test)``."""
    mask = holdout_mask(sample, test_fraction, seed)
    return sample.subset(np.flatnonzero(~mask)), sample.subset(np.flatnonzero(mask))


# -- CSV persistence ---------------------------------------------------------

def domain_filename(domain_id: str, time_stamp: int) -> str:
    return f"{domain_id}_t{time_stamp}.csv"


def write_domain_csv(sample: LabeledDomainSample, run_dir: str, header_comment: Optional[str] = None) -> str:
    if sample.x.shape[1] != 2:
        raise ValueError("CSV format holds 2-d features only")
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, domain_filename(sample.domain_id, sample.time_stamp))
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "y", "is_labeled"])
        for (a, b), yy, lab in zip(sample.x, sample.y, sample.labeled):
            w.writerow([f"{a:.9g}", f"{b:.9g}", int(yy), int(lab)])
    return path


def read_domain_csv(path: str) -> LabeledDomainSample:
    stem = os.path.splitext(os.path.basename(path))[0]
    domain_id, _, stamp = stem.rpartition("_t")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    x = np.array([[float(r["x1"]), float(r["x2"])] for r in rows]).reshape(-1, 2)
    y = np.array([int(r["y"]) for r in rows], dtype=np.int64)
    lab = np.array([int(r["is_labeled"]) for r in rows], dtype=bool)
    return LabeledDomainSample(domain_id, int(stamp), x, y, lab)
