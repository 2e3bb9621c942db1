import math

import mpmath as mp
import numpy as np
import pytest

from conftest import make_sample
from ctl_lab.divergence import HypothesisGrid, c_divergence_grid, erm_hypothesis, zero_one_error
from ctl_lab.bounds import (BoundInputs, baseline_bound, continuous_bound, delta_cap, discrepancy_distance,
                            empirical_transfer_signature, population_bound, static_bound,
                            transfer_signature_bound)

mp.mp.dps = 40


def ref_static(eps, d, rs, rt, ms, mt, M, delta):
    """Separately written high-precision evaluation of the static bound."""
    eps, d, rs, rt, M, delta = map(mp.mpf, (eps, d, rs, rt, M, delta))
    return eps + M * (d + rs + rt + 3 * mp.sqrt(mp.log(8 / delta) / (2 * ms)) + 3 * mp.sqrt(mp.log(8 / delta) / (2 * mt))
                      + mp.sqrt(M ** 2 * mp.log(4 / delta) / (2 * ms)))


def ref_continuous(eps_s, eps_t, ms, mts, M, delta, Delta):
    t = len(eps_t)
    M, delta, Delta = map(mp.mpf, (M, delta, Delta))
    n = t + 1
    m_all = ms + sum(mts)
    lt = mp.log(2 * n / delta)
    tilde = (M / n) * (mp.sqrt(lt / (2 * ms)) + mp.fsum(mp.sqrt(lt / (2 * m)) for m in mts)
                       + mp.sqrt(2 * mp.log(2 / delta) / m_all))
    return (mp.mpf(eps_s) + mp.fsum(map(mp.mpf, eps_t))) / n + (t + 2) * M * Delta / 2 + tilde


def test_population_bound():
    assert population_bound(0.1, 0.2, 1) == pytest.approx(0.3)
    assert population_bound(0, 0, 3.0) == 0
    assert population_bound(0.05, 0.4, 2) == pytest.approx(0.85)


def test_static_pinned_value():
    r = static_bound(BoundInputs(0.0, 0.0, m_source=200, m_targets=(200,), M=1.0, delta=0.05))
    ref = ref_static(0, 0, 0, 0, 200, 200, 1, 0.05)
    assert r.value == pytest.approx(float(ref), rel=1e-14)
    assert r.value == pytest.approx(0.780510846838093, abs=1e-12)


def test_static_large_sample_limit():
    r = static_bound(BoundInputs(0.1, 0.2, m_source=10**14, m_targets=(10**14,)))
    assert r.value == pytest.approx(0.3, abs=1e-5)


def test_static_scaling_in_M():
    # every M-weighted term doubles; the source estimation term carries M twice and quadruples
    base = dict(eps_hat_source=0.1, d_c_hat=0.2, rad_source=0.05, rad_target=0.04, m_source=500,
                m_targets=(300,), delta=0.1)
    one = static_bound(BoundInputs(M=1.0, **base)).terms
    two = static_bound(BoundInputs(M=2.0, **base)).terms
    assert two["source_error"] == one["source_error"]
    for name in ("divergence", "rademacher_source", "rademacher_target", "confidence_source", "confidence_target"):
        assert two[name] == pytest.approx(2 * one[name])
    assert two["source_estimation"] == pytest.approx(4 * one["source_estimation"])


def test_static_terms_sum_and_names():
    r = static_bound(BoundInputs(0.2, 0.3, rad_source=0.1, rad_target=0.2, m_source=100, m_targets=(50,)))
    assert len(r.terms) == 7
    assert math.fsum(r.terms.values()) == pytest.approx(r.value, rel=1e-12)
    assert r.value == pytest.approx(float(ref_static(0.2, 0.3, 0.1, 0.2, 100, 50, 1, 0.05)), rel=1e-13)


@pytest.mark.parametrize("field,lo,hi,direction", [
    ("eps_hat_source", 0.1, 0.2, 1), ("d_c_hat", 0.1, 0.5, 1), ("rad_source", 0.0, 0.3, 1),
    ("rad_target", 0.0, 0.3, 1), ("M", 1.0, 1.5, 1), ("m_source", 100, 400, -1), ("delta", 0.01, 0.2, -1),
])
def test_static_monotone(field, lo, hi, direction):
    base = dict(eps_hat_source=0.1, d_c_hat=0.2, rad_source=0.1, rad_target=0.1, m_source=200,
                m_targets=(200,), M=1.0, delta=0.05)
    a = static_bound(BoundInputs(**{**base, field: lo})).value
    b = static_bound(BoundInputs(**{**base, field: hi})).value
    assert (b - a) * direction > 0


def test_static_monotone_in_target_size():
    a = static_bound(BoundInputs(0.1, m_targets=(50,))).value
    b = static_bound(BoundInputs(0.1, m_targets=(500,))).value
    assert b < a


def test_inputs_validation():
    with pytest.raises(ValueError):
        BoundInputs(0.1, delta=1.0)
    with pytest.raises(ValueError):
        BoundInputs(0.1, delta=0.0)
    with pytest.raises(ValueError):
        BoundInputs(0.1, M=0.0)
    with pytest.raises(ValueError):
        BoundInputs(0.1, m_source=0)
    with pytest.raises(ValueError):
        BoundInputs(1.5)
    with pytest.raises(ValueError):
        BoundInputs(0.1, alpha=1.2)
    with pytest.raises(ValueError):
        BoundInputs(0.1, Delta=-0.1)


def test_continuous_t0():
    delta, ms = 0.05, 800
    r = continuous_bound(BoundInputs(0.1, m_source=ms, M=1.0, delta=delta, Delta=0.2), 0)
    want = 0.1 + 0.2 + math.sqrt(math.log(2 / delta) / (2 * ms)) + math.sqrt(2 * math.log(2 / delta) / ms)
    assert r.value == pytest.approx(want, rel=1e-13)


def test_continuous_identical_errors():
    e, m, t, delta = 0.07, 300, 4, 0.05
    r = continuous_bound(BoundInputs(e, eps_hat_targets=[e] * t, m_source=m, m_targets=[m] * t, delta=delta), t)
    tilde = r.value - e
    assert tilde == pytest.approx(r.terms["confidence_source"] + r.terms["confidence_targets"]
                                  + r.terms["confidence_pooled"])
    assert r.terms["drift"] == 0.0


def test_continuous_pinned_value():
    inputs = BoundInputs(0.1, eps_hat_targets=[0.12, 0.11, 0.13], m_source=2000, m_targets=[2000] * 3,
                         M=1.0, delta=0.05, Delta=0.05)
    r = continuous_bound(inputs, 3)
    ref = ref_continuous(0.1, [0.12, 0.11, 0.13], 2000, [2000] * 3, 1, 0.05, 0.05)
    assert r.value == pytest.approx(float(ref), rel=1e-14)
    assert r.value == pytest.approx(0.28321214536246, abs=1e-12)
    assert math.fsum(r.terms.values()) == pytest.approx(r.value, rel=1e-12)


def test_continuous_length_mismatch():
    with pytest.raises(ValueError):
        continuous_bound(BoundInputs(0.1, eps_hat_targets=[0.1], m_targets=[10]), 2)
    with pytest.raises(ValueError):
        continuous_bound(BoundInputs(0.1, eps_hat_targets=[0.1, 0.2], m_targets=[10]), 2)
    with pytest.raises(ValueError):
        continuous_bound(BoundInputs(0.1), -1)


def test_continuous_t0_dominates_static_terms():
    # with Delta = d_C(S, T1) the t=0 continuous bound's drift covers the static divergence term
    inputs = BoundInputs(0.1, 0.3, m_source=1000, m_targets=(1000,), delta=0.05, Delta=0.3)
    c = continuous_bound(inputs, 0).terms
    s = static_bound(inputs).terms
    assert c["mean_error"] >= s["source_error"]
    assert c["drift"] >= s["divergence"]


def test_transfer_signature():
    assert transfer_signature_bound(1.0, 5.0, 0.9) == 0.0
    assert transfer_signature_bound(0.0, 2.0, 0.3) == pytest.approx(1.2)
    assert transfer_signature_bound(0.5, 1.0, 0.4) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        transfer_signature_bound(-0.1, 1.0, 0.1)
    assert empirical_transfer_signature((0.2, 0.2)) == 0.0
    assert empirical_transfer_signature((0.35, 0.25)) == pytest.approx(0.10)


def test_transfer_signature_consistency(benchmark):
    grid = HypothesisGrid()
    for t in (2, 5, 8):
        src, tgt = benchmark[0], benchmark[t]
        table_s = grid.evaluate(src.x)
        table_t = grid.evaluate(tgt.x)
        err_s = np.mean(table_s != src.y[:, None], axis=0)
        err_t = np.mean(table_t != tgt.y[:, None], axis=0)
        d = c_divergence_grid(src, tgt, grid).value
        for alpha in np.linspace(0, 1, 11):
            h_alpha = np.argmin(alpha * err_t + (1 - alpha) * err_s)
            signature = empirical_transfer_signature((err_t[h_alpha], err_t.min()))
            assert signature <= transfer_signature_bound(alpha, 1.0, d) + 1e-12


def test_delta_cap():
    assert delta_cap([0.1, 0.4, 0.2]) == 0.4
    assert delta_cap([]) == 0.0


def test_baseline_same_domain(benchmark):
    d = benchmark[2]
    h, err, _ = erm_hypothesis(d)
    r = baseline_bound(d, d, h)
    assert r.value == pytest.approx(err)
    assert r.terms["discrepancy"] == 0.0 and r.meta["pair_cells"] == 72 * 17


def test_discrepancy_disjoint_support():
    a = make_sample(np.random.default_rng(0).normal(size=(50, 2)) * 0.1 + [-2, 0], np.zeros(50))
    b = make_sample(np.random.default_rng(1).normal(size=(50, 2)) * 0.1 + [2, 0], np.zeros(50), "B")
    value, _ = discrepancy_distance(a.x, b.x, HypothesisGrid(72, 17))
    assert value == 1.0


def test_baseline_terms(benchmark):
    src, tgt = benchmark[0], benchmark[3]
    h_src, _, _ = erm_hypothesis(src)
    h_tgt, err_tgt, _ = erm_hypothesis(tgt)
    r = baseline_bound(src, tgt)
    assert r.terms["target_optimal_error"] == pytest.approx(err_tgt)
    assert r.terms["source_disagreement_h"] == 0.0
    assert r.terms["source_disagreement_optima"] == pytest.approx(np.mean(h_src(src.x) != h_tgt(src.x)))
    assert math.fsum(r.terms.values()) == pytest.approx(r.value)


def test_static_bound_valid_on_benchmark(benchmark):
    from ctl_lab.divergence import rademacher_mc
    grid = HypothesisGrid()
    src = benchmark[0]
    h, eps_s, _ = erm_hypothesis(src, grid)
    rs = rademacher_mc(src, grid, 50, seed=0).value
    for t in (1, 4, 8):
        tgt = benchmark[t]
        inputs = BoundInputs(eps_s, c_divergence_grid(src, tgt, grid).value, rad_source=rs,
                             rad_target=rademacher_mc(tgt, grid, 50, seed=t).value,
                             m_source=len(src), m_targets=(len(tgt),))
        assert static_bound(inputs).value >= zero_one_error(h, tgt)


def test_baseline_above_static_at_half_turn(benchmark):
    """Benchmark comparison of the two bounds at the final stamp for the source risk minimizer."""
    from ctl_lab.divergence import rademacher_mc
    grid = HypothesisGrid()
    src, tgt = benchmark[0], benchmark[8]
    h, eps_s, _ = erm_hypothesis(src, grid)
    inputs = BoundInputs(eps_s, c_divergence_grid(src, tgt, grid).value,
                         rad_source=rademacher_mc(src, grid, 200, seed=0).value,
                         rad_target=rademacher_mc(tgt, grid, 200, seed=8).value,
                         m_source=len(src), m_targets=(len(tgt),))
    assert baseline_bound(src, tgt, h, grid).value > static_bound(inputs).value
