import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctl_lab.data import (GaussianDomainSpec, LabeledDomainSample, generate_domain, generate_evolving_sequence,
                          read_domain_csv, split_labels, stamp_seed, train_test_split, write_domain_csv)


def test_spec_validation():
    with pytest.raises(ValueError):
        GaussianDomainSpec(n_pos=-1)
    with pytest.raises(ValueError):
        GaussianDomainSpec(stdev=0.0)
    with pytest.raises(ValueError):
        GaussianDomainSpec(radius=math.inf)
    with pytest.raises(ValueError):
        GaussianDomainSpec(layout="spiral")


def test_class_counts_exact():
    d = generate_domain(GaussianDomainSpec(n_pos=37, n_neg=11))
    assert (d.y == 1).sum() == 37 and (d.y == 0).sum() == 11
    assert d.x.shape == (48, 2)


def test_empty_domain():
    d = generate_domain(GaussianDomainSpec(n_pos=0, n_neg=0))
    assert len(d) == 0 and d.x.shape == (0, 2)


def test_source_means_mirrored_layout():
    # negatives at angle -theta: at theta = 0 both clusters share [1.5, 0]
    d = generate_domain(GaussianDomainSpec(theta=0.0, layout="mirrored"))
    tol = 3 * math.sqrt(0.5) / math.sqrt(1000)
    for cls in (0, 1):
        assert np.all(np.abs(d.x[d.y == cls].mean(0) - [1.5, 0.0]) < tol)


def test_quarter_turn_means():
    d = generate_domain(GaussianDomainSpec(theta=math.pi / 2, seed=42))
    assert np.all(np.abs(d.x[d.y == 1].mean(0) - [0.0, 1.5]) < 0.07)
    assert np.all(np.abs(d.x[d.y == 0].mean(0) - [0.0, -1.5]) < 0.07)
    m = generate_domain(GaussianDomainSpec(theta=math.pi / 2, seed=42, layout="mirrored"))
    assert np.all(np.abs(m.x[m.y == 0].mean(0) - [0.0, -1.5]) < 0.07)


def test_antipodal_centers():
    s = GaussianDomainSpec(theta=0.3)
    np.testing.assert_allclose(s.negative_center, -s.positive_center)


def test_covariance_scale():
    d = generate_domain(GaussianDomainSpec(n_pos=20000, n_neg=0, seed=3))
    np.testing.assert_allclose(np.cov(d.x.T), 0.5 * np.eye(2), atol=0.02)


def test_determinism_bitwise():
    a = generate_evolving_sequence(4, GaussianDomainSpec(seed=11))
    b = generate_evolving_sequence(4, GaussianDomainSpec(seed=11))
    for u, v in zip(a, b):
        assert u.x.tobytes() == v.x.tobytes() and u.y.tobytes() == v.y.tobytes()


def test_sequence_angles_and_ids():
    seq = generate_evolving_sequence(8, GaussianDomainSpec(n_pos=4000, n_neg=0), include_source=True)
    assert [d.domain_id for d in seq] == ["S1"] + [f"T{i}" for i in range(1, 9)]
    assert [d.time_stamp for d in seq] == list(range(9))
    for i, d in enumerate(seq):
        angle = math.atan2(*d.x.mean(0)[::-1])
        assert abs(math.remainder(angle - i * math.pi / 8, 2 * math.pi)) < 0.05


def test_single_stamp_is_half_turn():
    (t1,) = generate_evolving_sequence(1, GaussianDomainSpec(n_pos=4000, n_neg=0))
    assert np.allclose(t1.x.mean(0), [-1.5, 0.0], atol=0.05)


def test_zero_stamps_rejected():
    with pytest.raises(ValueError):
        generate_evolving_sequence(0)


def test_stamp_seeds_distinct():
    seeds = {stamp_seed(42, i) for i in range(50)}
    assert len(seeds) == 50


def test_split_labels_stratified(benchmark):
    d = split_labels(benchmark[1], 100, seed=0)
    assert d.n_labeled == 100
    assert (d.y[d.labeled] == 1).sum() == 50
    assert split_labels(benchmark[1], 0, 0).n_labeled == 0
    assert split_labels(benchmark[1], len(benchmark[1]), 0).labeled.all()
    with pytest.raises(ValueError):
        split_labels(benchmark[1], len(benchmark[1]) + 1, 0)


def test_split_labels_unbalanced_pool():
    d = LabeledDomainSample("A", 1, np.zeros((10, 2)), np.array([1] * 8 + [0] * 2), np.zeros(10, bool))
    out = split_labels(d, 6, seed=1)
    assert out.n_labeled == 6 and (out.y[out.labeled] == 0).sum() == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 60), st.integers(0, 2**32 - 1))
def test_split_preserves_pairs(n_labeled, seed):
    d = generate_domain(GaussianDomainSpec(n_pos=30, n_neg=30, seed=5))
    out = split_labels(d, n_labeled, seed)
    assert out.x.tobytes() == d.x.tobytes() and out.y.tobytes() == d.y.tobytes()
    assert out.n_labeled == n_labeled


def test_train_test_split_fraction(benchmark):
    tr, te = train_test_split(benchmark[2], 0.2, seed=1)
    assert len(te) == 400 and len(tr) == 1600
    assert (te.y == 1).sum() == 200
    joined = np.vstack([tr.x, te.x])
    assert sorted(map(tuple, joined)) == sorted(map(tuple, benchmark[2].x))


def test_training_labels_and_pseudo():
    d = LabeledDomainSample("T1", 1, np.zeros((4, 2)), [1, 0, 1, 0], [True, False, False, True],
                            pseudo_y=[-1, 1, -1, -1])
    np.testing.assert_array_equal(d.training_labels(), [1, 1, -1, 0])
    np.testing.assert_array_equal(d.has_pseudo, [False, True, False, False])


def test_sample_validation():
    with pytest.raises(ValueError):
        LabeledDomainSample("A", -1, np.zeros((1, 2)), [0], [True])
    with pytest.raises(ValueError):
        LabeledDomainSample("A", 0, np.zeros((2, 2)), [0], [True])
    with pytest.raises(ValueError):
        LabeledDomainSample("A", 0, [[np.nan, 0.0]], [0], [True])


def test_csv_roundtrip(tmp_path, benchmark):
    d = split_labels(benchmark[3], 100, 0)
    path = write_domain_csv(d, str(tmp_path), "# note")
    assert path.endswith("T3_t3.csv")
    lines = open(path).read().splitlines()
    assert lines[0] == "# note" and lines[1] == "x1,x2,y,is_labeled"
    back = read_domain_csv(path)
    assert back.domain_id == "T3" and back.time_stamp == 3
    np.testing.assert_allclose(back.x, d.x, rtol=1e-8)
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.labeled, d.labeled)


def test_csv_nine_significant_digits(tmp_path):
    d = LabeledDomainSample("S1", 0, [[1 / 3, -2 / 3]], [1], [True])
    path = write_domain_csv(d, str(tmp_path))
    assert open(path).read().splitlines()[1] == "0.333333333,-0.666666667,1,1"
