"""Grid estimators for the label-informed C-divergence, the A-distance and
Rademacher complexity over linear halfspaces in the plane.

A halfspace is ``h(x) = 1[w.x + b > 0]`` with ``w = (cos phi, sin phi)``.
The grid enumerates ``angles`` directions on ``[0, 2pi)`` times ``offsets``
biases on ``offset_range``.  Every estimator reduces to per-cell sums of
point weights over ``I(h) = {x : h(x) = 1}``, which are computed for all
cells at once by binning each point's projection against the sorted
thresholds ``-b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .data import LabeledDomainSample


@dataclass(frozen=True)
class LinearHypothesis:
    w: tuple[float, ...]
    b: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.b)):
            raise ValueError("hypothesis parameters must be finite")
        if np.linalg.norm(w) == 0:
            raise ValueError("w must be nonzero")

    def __call__(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) @ np.asarray(self.w) + self.b > 0).astype(np.int64)

    def complement_like(self) -> "LinearHypothesis":
        return LinearHypothesis(tuple(-np.asarray(self.w)), -self.b)


@dataclass(frozen=True)
class HypothesisGrid:
    angles: int = 360
    offsets: int = 81
    offset_range: tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self):
        if self.angles < 4 or self.offsets < 1:
            raise ValueError("grid needs angles >= 4 and offsets >= 1")
        lo, hi = self.offset_range
        if not lo < hi:
            raise ValueError("offset_range must satisfy lo < hi")

    @property
    def size(self) -> int:
        return self.angles * self.offsets

    @property
    def directions(self) -> np.ndarray:
        phi = 2.0 * np.pi * np.arange(self.angles) / self.angles
        return np.stack([np.cos(phi), np.sin(phi)], axis=1)

    @property
    def biases(self) -> np.ndarray:
        lo, hi = self.offset_range
        if self.offsets == 1:
            return np.array([0.5 * (lo + hi)])
        return np.linspace(lo, hi, self.offsets)

    @property
    def is_symmetric(self) -> bool:
        """True when every cell's complement (up to boundary ties) is also a cell."""
        b = self.biases
        return self.angles % 2 == 0 and np.allclose(b, -b[::-1])

    def hypothesis(self, angle_idx: int, offset_idx: int) -> LinearHypothesis:
        w = self.directions[angle_idx]
        return LinearHypothesis((float(w[0]), float(w[1])), float(self.biases[offset_idx]))

    def unravel(self, flat_idx: int) -> tuple[int, int]:
        return divmod(int(flat_idx), self.offsets)

    def evaluate(self, x) -> np.ndarray:
        """Direct ``m x (angles*offsets)`` table of h(x), angle-major columns."""
        proj = np.asarray(x, dtype=float) @ self.directions.T
        return (proj[:, :, None] + self.biases[None, None, :] > 0).reshape(len(proj), -1)


def region_sums(x, weights, grid: HypothesisGrid, chunk: int = 4096) -> np.ndarray:
    """``out[c, a, o] = sum_i weights[i, c] * h_{a,o}(x_i)`` for every grid cell."""
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[:, None]
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("grid estimators expect 2-d features")
    A, O = grid.angles, grid.offsets
    # point is inside cell (a, o) iff proj_a > -b_o; thresholds sorted ascending
    thresholds = -grid.biases[::-1]
    dirs = grid.directions
    acc = np.zeros((A * (O + 1), weights.shape[1]))
    cols = np.arange(A) * (O + 1)
    for start in range(0, len(x), chunk):
        xs = x[start:start + chunk]
        k = np.searchsorted(thresholds, xs @ dirs.T, side="left")
        n = len(xs)
        mat = sparse.csr_matrix(
            (np.ones(n * A), ((np.arange(n)[:, None].repeat(A, 1)).ravel(), (k + cols).ravel())),
            shape=(n, A * (O + 1)),
        )
        acc += mat.T @ weights[start:start + chunk]
    acc = acc.reshape(A, O + 1, -1)
    total = weights.sum(axis=0)
    below_or_at = np.cumsum(acc, axis=1)[:, :O, :]
    inside = total[None, None, :] - below_or_at
    return np.moveaxis(inside[:, ::-1, :], 2, 0)


@dataclass
class GridStats:
    """Per-cell class counts inside ``I(h)`` for one labeled sample."""

    in_pos: np.ndarray
    in_neg: np.ndarray
    n_pos: int
    n_neg: int

    @classmethod
    def from_xy(cls, x, y, grid: HypothesisGrid) -> "GridStats":
        y = np.asarray(y)
        if len(y) == 0:
            raise ValueError("empty sample")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0/1 on every point used")
        w = np.stack([(y == 1), (y == 0)], axis=1).astype(float)
        in_pos, in_neg = region_sums(x, w, grid)
        return cls(in_pos, in_neg, int((y == 1).sum()), int((y == 0).sum()))

    @property
    def m(self) -> int:
        return self.n_pos + self.n_neg

    def accuracy(self) -> np.ndarray:
        return (self.in_pos + self.n_neg - self.in_neg) / self.m

    def mass(self) -> np.ndarray:
        return (self.in_pos + self.in_neg) / self.m


@dataclass
class DivergenceEstimate:
    value: float
    minimizer: LinearHypothesis
    kind: str
    angle_cells: int
    offset_cells: int
    cell: tuple[int, int]
    scale: float = 1.0

    def __post_init__(self):
        if not -1e-12 <= self.value <= self.scale + 1e-12:
            raise ValueError(f"divergence {self.value} outside [0, {self.scale}]")


@dataclass
class RademacherEstimate:
    value: float
    draws: int
    seed: Optional[int]
    stderr: float = 0.0


def sample_xy(sample: LabeledDomainSample, labels: str = "true"):
    """Features and labels used for estimation.

    ``labels="true"`` uses the stored label column on every point;
    ``"training"`` uses true labels on labeled points and pseudo-labels
    elsewhere, and requires every point to carry one of the two.
    """
    if len(sample) == 0:
        raise ValueError(f"empty sample {sample.domain_id}")
    if labels == "true":
        return sample.x, sample.y
    if labels == "training":
        y = sample.training_labels()
        if np.any(y < 0):
            raise ValueError(f"{sample.domain_id}: unlabeled points without pseudo-labels")
        return sample.x, y
    raise ValueError(f"unknown label mode {labels!r}")


def _estimate_from_minimand(minimand: np.ndarray, grid: HypothesisGrid, kind: str, scale: float = 1.0):
    flat = int(np.argmin(minimand))  # first cell wins ties, angle-major
    a, o = grid.unravel(flat)
    value = 1.0 - float(minimand.ravel()[flat])
    return DivergenceEstimate(scale * value, grid.hypothesis(a, o), kind, grid.angles, grid.offsets, (a, o), scale)


def c_divergence_from_stats(src: GridStats, tgt: GridStats, grid: HypothesisGrid) -> DivergenceEstimate:
    err_src = 1.0 - src.accuracy()
    acc_tgt = tgt.accuracy()
    return _estimate_from_minimand(np.abs(err_src + acc_tgt), grid, "c_divergence")


def c_divergence_grid(src: LabeledDomainSample, tgt: LabeledDomainSample,
                      grid: HypothesisGrid = HypothesisGrid(), labels: str = "true") -> DivergenceEstimate:
    """Empirical C-divergence ``1 - min_h |err_S(h) + acc_T(h)|`` over the grid."""
    s = GridStats.from_xy(*sample_xy(src, labels), grid)
    t = GridStats.from_xy(*sample_xy(tgt, labels), grid)
    return c_divergence_from_stats(s, t, grid)


def a_distance_from_stats(src: GridStats, tgt: GridStats, grid: HypothesisGrid, scale: float = 1.0):
    minimand = np.abs((1.0 - src.mass()) + tgt.mass())
    return _estimate_from_minimand(minimand, grid, "a_distance", scale)


def a_distance_grid(src: LabeledDomainSample, tgt: LabeledDomainSample,
                    grid: HypothesisGrid = HypothesisGrid(), scale: float = 1.0) -> DivergenceEstimate:
    """C-divergence with every label set to 1, i.e. ``sup_h |P_S(I(h)) - P_T(I(h))|``.

    ``scale=2`` gives the conventional ``2 sup |...|`` A-distance.
    """
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("empty sample")
    s = GridStats.from_xy(src.x, np.ones(len(src), dtype=np.int64), grid)
    t = GridStats.from_xy(tgt.x, np.ones(len(tgt), dtype=np.int64), grid)
    return a_distance_from_stats(s, t, grid, scale)


def class_separability(src: GridStats, tgt: GridStats) -> np.ndarray:
    """Pooled ``Pr[y=1 | I(h)] - Pr[y=0 | I(h)]`` per cell; 0 on empty cells."""
    n1 = src.in_pos + tgt.in_pos
    n0 = src.in_neg + tgt.in_neg
    n = n1 + n0
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(n > 0, (n1 - n0) / np.maximum(n, 1), 0.0)
    return s


def c_divergence_relaxed_form(src: LabeledDomainSample, tgt: LabeledDomainSample,
                              grid: HypothesisGrid = HypothesisGrid(), labels: str = "true",
                              separability: Optional[np.ndarray] = None) -> float:
    """C-divergence rewritten under the relaxed covariate shift assumption.

    ``sup_h |(P_S(I) - P_T(I)) * S_h + P_T(y=1) - P_S(y=1)|`` where ``S_h``
    is the class separability of ``I(h)``, pooled over both samples unless a
    table of shape ``(angles, offsets)`` is passed.
    """
    s = GridStats.from_xy(*sample_xy(src, labels), grid)
    t = GridStats.from_xy(*sample_xy(tgt, labels), grid)
    sep = class_separability(s, t) if separability is None else np.asarray(separability)
    label_gap = t.n_pos / t.m - s.n_pos / s.m
    return float(np.max(np.abs((s.mass() - t.mass()) * sep + label_gap)))


def _rademacher_draws(rng: np.random.Generator, draws: int, m: int, batch: int):
    done = 0
    while done < draws:
        n = min(batch, draws - done)
        yield rng.choice(np.array([-1.0, 1.0]), size=(n, m))
        done += n


def empirical_rademacher(values, draws: int, seed=None, batch: int = 256) -> RademacherEstimate:
    """Monte-Carlo ``(2/m) E_sigma sup_f |sum_i sigma_i f(z_i)|`` for an explicit table.

    ``values`` has shape ``(m, n_functions)``.
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if draws < 1 or m == 0:
        raise ValueError("need draws >= 1 and a nonempty sample")
    rng = np.random.default_rng(seed)
    sups = np.concatenate([np.max(np.abs(sig @ values), axis=1)
                           for sig in _rademacher_draws(rng, draws, m, batch)])
    vals = 2.0 * sups / m
    se = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return RademacherEstimate(float(vals.mean()), draws, seed, se)


def rademacher_mc(sample: LabeledDomainSample, grid: HypothesisGrid = HypothesisGrid(), draws: int = 200,
                  seed=0, labels: str = "true", batch: int = 64) -> RademacherEstimate:
    """Empirical Rademacher complexity of ``{(x, y) -> 1[h(x) = y]}`` over the grid."""
    x, y = sample_xy(sample, labels)
    if draws < 1:
        raise ValueError("draws must be >= 1")
    m = len(y)
    rng = np.random.default_rng(seed)
    sign = 2.0 * y - 1.0
    out = []
    # 1[h(x)=y] = (1 - y) + h(x) * (2y - 1)
    for sig in _rademacher_draws(rng, draws, m, batch):
        inside = region_sums(x, (sig * sign).T, grid)
        base = sig @ (1.0 - y)
        out.append(np.max(np.abs(inside + base[:, None, None]), axis=(1, 2)))
    vals = 2.0 * np.concatenate(out) / m
    se = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return RademacherEstimate(float(vals.mean()), draws, seed, se)


def erm_hypothesis(sample: LabeledDomainSample, grid: HypothesisGrid = HypothesisGrid(), labels: str = "true"):
    """Grid cell with the smallest empirical 0-1 risk: ``(hypothesis, error, cell)``."""
    stats = GridStats.from_xy(*sample_xy(sample, labels), grid)
    err = 1.0 - stats.accuracy()
    a, o = grid.unravel(int(np.argmin(err)))
    return grid.hypothesis(a, o), float(err[a, o]), (a, o)


def zero_one_error(h: Callable, sample: LabeledDomainSample) -> float:
    return float(np.mean(h(sample.x) != sample.y))


def c_divergence_adversarial(z_src, z_tgt, discriminator: Callable[[np.ndarray], np.ndarray]) -> float:
    """Latent C-divergence read off a trained domain discriminator.

    Source latents count as domain 0, target latents as domain 1, and a
    point is predicted target when the discriminator output exceeds 0.5.
    Returns ``2 * max(acc, 1 - acc) - 1`` for the class-balanced accuracy.
    """
    z_src = np.asarray(z_src)
    z_tgt = np.asarray(z_tgt)
    if len(z_src) == 0 or len(z_tgt) == 0:
        raise ValueError("both domains must be represented")
    p_src = np.asarray(discriminator(z_src)).ravel()
    p_tgt = np.asarray(discriminator(z_tgt)).ravel()
    acc = 0.5 * (np.mean(p_src <= 0.5) + np.mean(p_tgt > 0.5))
    return float(2.0 * max(acc, 1.0 - acc) - 1.0)
