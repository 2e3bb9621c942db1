"""Target-error bounds built from plug-in empirical quantities.

All logarithms are natural.  Every bound returns a :class:`BoundReport`
whose named terms add up to the reported value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import LabeledDomainSample
from .divergence import HypothesisGrid, LinearHypothesis, erm_hypothesis, sample_xy


@dataclass
class BoundInputs:
    eps_hat_source: float
    d_c_hat: float = 0.0
    eps_hat_targets: Sequence[float] = ()
    rad_source: float = 0.0
    rad_target: float = 0.0
    m_source: int = 1
    m_targets: Sequence[int] = (1,)
    M: float = 1.0
    delta: float = 0.05
    Delta: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if self.m_source < 1 or any(m < 1 for m in self.m_targets):
            raise ValueError("sample sizes must be >= 1")
        if self.Delta < 0:
            raise ValueError("Delta must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for e in (self.eps_hat_source, *self.eps_hat_targets):
            if not 0.0 <= e <= self.M:
                raise ValueError(f"error {e} outside [0, M]")

    @property
    def m_target(self) -> int:
        return self.m_targets[-1]


@dataclass
class BoundReport:
    value: float
    terms: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_terms(cls, terms: dict, **meta) -> "BoundReport":
        return cls(math.fsum(terms.values()), dict(terms), meta)


def population_bound(eps_source: float, d_c: float, M: float = 1.0) -> float:
    return eps_source + M * d_c


def static_bound(inputs: BoundInputs) -> BoundReport:
    """Static bound for the target error; ``m_T`` is the last entry of ``m_targets``."""
    M, delta = inputs.M, inputs.delta
    m_s, m_t = inputs.m_source, inputs.m_target
    terms = {
        "source_error": inputs.eps_hat_source,
        "divergence": M * inputs.d_c_hat,
        "rademacher_source": M * inputs.rad_source,
        "rademacher_target": M * inputs.rad_target,
        "confidence_source": M * 3.0 * math.sqrt(math.log(8.0 / delta) / (2.0 * m_s)),
        "confidence_target": M * 3.0 * math.sqrt(math.log(8.0 / delta) / (2.0 * m_t)),
        "source_estimation": M * math.sqrt(M * M * math.log(4.0 / delta) / (2.0 * m_s)),
    }
    return BoundReport.from_terms(terms)


def continuous_bound(inputs: BoundInputs, t: int) -> BoundReport:
    """Bound on the error at stamp ``t + 1`` from the source and ``t`` historical targets."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if len(inputs.eps_hat_targets) != t or (t and len(inputs.m_targets) != t):
        raise ValueError("need exactly t historical target errors and sizes")
    m_hist = list(inputs.m_targets) if t else []
    M, delta = inputs.M, inputs.delta
    n = t + 1
    m_all = inputs.m_source + sum(m_hist)
    log_term = math.log(2.0 * n / delta)
    terms = {
        "mean_error": (inputs.eps_hat_source + math.fsum(inputs.eps_hat_targets)) / n,
        "drift": (t + 2) * M * inputs.Delta / 2.0,
        "confidence_source": M / n * math.sqrt(log_term / (2.0 * inputs.m_source)),
        "confidence_targets": M / n * math.fsum(math.sqrt(log_term / (2.0 * m)) for m in m_hist),
        "confidence_pooled": M / n * math.sqrt(2.0 * math.log(2.0 / delta) / m_all),
    }
    return BoundReport.from_terms(terms, m_all=m_all)


def transfer_signature_bound(alpha: float, M: float, d_c: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return 2.0 * (1.0 - alpha) * M * d_c


def empirical_transfer_signature(target_errors) -> float:
    """``err(transfer learner) - err(target-only learner)``; positive means negative transfer."""
    with_source, without_source = target_errors
    return float(with_source) - float(without_source)


def delta_cap(divergences: Sequence[float]) -> float:
    """Tightest plug-in for the consecutive-divergence cap: the largest observed value."""
    return float(max(divergences)) if len(divergences) else 0.0


def disagreement_table(x, hyps: np.ndarray) -> np.ndarray:
    """``D[i, j] = mean_x 1[h_i(x) != h_j(x)]`` from a boolean ``m x G`` table."""
    t = np.asarray(hyps, dtype=np.float64)
    n_in = t.sum(axis=0)
    both = t.T @ t
    return (n_in[:, None] + n_in[None, :] - 2.0 * both) / len(t)


def discrepancy_distance(src_x, tgt_x, pair_grid: HypothesisGrid) -> tuple[float, tuple[int, int]]:
    """``max_{h,h'} |E_S[1[h != h']] - E_T[1[h != h']]|`` over all pairs of ``pair_grid`` cells."""
    gap = np.abs(disagreement_table(src_x, pair_grid.evaluate(src_x))
                 - disagreement_table(tgt_x, pair_grid.evaluate(tgt_x)))
    flat = int(np.argmax(gap))
    return float(gap.ravel()[flat]), divmod(flat, pair_grid.size)


def baseline_bound(src: LabeledDomainSample, tgt: LabeledDomainSample, h: Optional[LinearHypothesis] = None,
                   grid: HypothesisGrid = HypothesisGrid(),
                   pair_grid: HypothesisGrid = HypothesisGrid(72, 17)) -> BoundReport:
    """Discrepancy-distance bound with 0-1 loss.

    ``h`` defaults to the source risk minimizer on ``grid``.  The pairwise
    maximum inside the discrepancy distance runs over the coarser
    ``pair_grid``; its size is reported in ``meta``.
    """
    xs, _ = sample_xy(src)
    xt, _ = sample_xy(tgt)
    h_src, _, _ = erm_hypothesis(src, grid)
    h_tgt, err_tgt, _ = erm_hypothesis(tgt, grid)
    if h is None:
        h = h_src
    d_l, _ = discrepancy_distance(xs, xt, pair_grid)
    terms = {
        "target_optimal_error": err_tgt,
        "source_disagreement_h": float(np.mean(h(xs) != h_src(xs))),
        "source_disagreement_optima": float(np.mean(h_tgt(xs) != h_src(xs))),
        "discrepancy": d_l,
    }
    return BoundReport.from_terms(terms, pair_cells=pair_grid.size, pair_grid=(pair_grid.angles, pair_grid.offsets))
