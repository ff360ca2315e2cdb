import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucgan.data import SpriteSpec, render_templates
from ucgan.diversity import (
    DiversityError,
    EmbeddingSpec,
    birthday_estimate,
    calibrate_threshold,
    dump_pairs,
    duplicate_decision,
    duplicate_rate,
    exact_birthday_probability,
    oracle_threshold,
    top_k_pairs,
    uniform_item_sampler,
    write_report,
)


def brute_force_pairs(emb, k):
    n = len(emb)
    allp = [(float(((emb[i] - emb[j]) ** 2).sum()), i, j) for i in range(n) for j in range(i + 1, n)]
    allp.sort()
    return [(i, j, d) for d, i, j in allp[:k]]


def test_identical_rows_have_zero_distance():
    emb = np.array([[1.0, 2.0], [5.0, 5.0], [1.0, 2.0]])
    assert top_k_pairs(emb, 1) == [(0, 2, 0.0)]


def test_points_on_a_line():
    assert top_k_pairs(np.array([[0.0], [1.0], [3.0]]), 1) == [(0, 1, 1.0)]


def test_all_pairs_and_tie_break():
    emb = np.zeros((5, 2))
    pairs = top_k_pairs(emb, 10)
    assert len(pairs) == 10
    assert [(i, j) for i, j, _ in pairs] == [(i, j) for i in range(5) for j in range(i + 1, 5)]


def test_top_k_errors():
    with pytest.raises(DiversityError):
        top_k_pairs(np.zeros((1, 3)), 1)
    with pytest.raises(DiversityError):
        top_k_pairs(np.zeros((3, 3)), 4)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 500), st.integers(1, 20), st.integers(0, 2**31))
def test_top_k_matches_brute_force(n, k, seed):
    rng = np.random.default_rng(seed)
    emb = rng.integers(0, 4, size=(n, 2)).astype(np.float64)
    k = min(k, n * (n - 1) // 2)
    assert top_k_pairs(emb, k) == brute_force_pairs(emb, k)


def test_duplicate_boundary():
    assert duplicate_decision(0.0, 1e-9)
    assert not duplicate_decision(0.5, 0.5)
    with pytest.raises(ValueError):
        duplicate_decision(0.1, 0.0)


def test_oracle_threshold_separates_sprites():
    templates = render_templates(SpriteSpec(resolution=16, n_sizes=4, n_backgrounds=2)).astype(np.float64) / 255
    tau = oracle_threshold(templates)
    rng = np.random.default_rng(0)
    idx = rng.integers(len(templates), size=120)
    emb = EmbeddingSpec()(templates[idx])
    for i, j, d in top_k_pairs(emb, 120 * 119 // 2):
        assert duplicate_decision(d, tau) == (idx[i] == idx[j])


def test_calibration_skips_exact_repeats():
    emb = np.array([[0.0], [0.0], [1.0], [3.0]])
    assert calibrate_threshold(emb, 0.0) == 1.0
    with pytest.raises(DiversityError):
        calibrate_threshold(np.zeros((3, 2)))


def test_embedding_dimension_is_fixed():
    spec = EmbeddingSpec("encoder-bottleneck", encoder=lambda x: x.reshape(len(x), -1)[:, : x.shape[1]])
    spec(np.zeros((2, 3, 3)))
    with pytest.raises(DiversityError):
        spec(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        EmbeddingSpec("facenet")


def test_single_sample_never_duplicates():
    sampler = uniform_item_sampler(np.zeros((1, 2)))
    assert duplicate_rate(sampler, EmbeddingSpec(), 1.0, 1, 50, rng=np.random.default_rng(0)) == 0.0


def test_exact_birthday_probability():
    assert exact_birthday_probability(365, 23) == pytest.approx(0.5073, abs=1e-4)
    assert exact_birthday_probability(10, 11) == 1.0
    assert exact_birthday_probability(10, 1) == 0.0


def test_duplicate_rate_monotone_in_n():
    items = np.eye(200)
    sampler = uniform_item_sampler(items)
    rng = np.random.default_rng(1)
    rates = [duplicate_rate(sampler, EmbeddingSpec(), 0.5, n, 200, rng=rng) for n in (4, 8, 16, 32, 64)]
    assert all(b >= a - 0.05 for a, b in zip(rates, rates[1:]))
    assert rates[-1] > rates[0]


def test_estimate_on_known_support():
    sampler = uniform_item_sampler(np.eye(256))
    est = birthday_estimate(sampler, EmbeddingSpec(), 0.5, n0=4, trials=20, rng=np.random.default_rng(2))
    assert not est.lower_bound
    assert est.estimate == est.final_n**2
    assert 64 <= est.estimate <= 1024
    assert est.trials[-1].duplicate_rate >= 0.5


def test_estimate_reports_lower_bound_past_cap():
    sampler = uniform_item_sampler(np.eye(5000))
    est = birthday_estimate(sampler, EmbeddingSpec(), 0.5, n0=2, trials=3, n_cap=8, rng=np.random.default_rng(3))
    assert est.lower_bound and est.final_n == 8


def test_estimate_argument_errors():
    sampler = uniform_item_sampler(np.eye(4))
    with pytest.raises(ValueError):
        birthday_estimate(sampler, EmbeddingSpec(), 0.5, n0=1)
    with pytest.raises(ValueError):
        birthday_estimate(sampler, EmbeddingSpec(), 0.5, n0=32, n_cap=16)


def test_sampler_failure_is_reported():
    def broken(n, rng):
        raise OSError("disk gone")

    with pytest.raises(DiversityError):
        birthday_estimate(broken, EmbeddingSpec(), 0.5, n0=2)


def test_report_and_pair_dump(tmp_path):
    images = render_templates(SpriteSpec(resolution=8, n_sizes=1)).astype(np.float64) / 255
    sampler = uniform_item_sampler(images)
    est = birthday_estimate(sampler, EmbeddingSpec(), oracle_threshold(images), n0=4, trials=10,
                            rng=np.random.default_rng(4))
    doc = json.loads(write_report(est, tmp_path / "r.json").read_text())
    assert set(doc) >= {"final_n", "estimate", "trials", "pairs"}
    files = dump_pairs(est, tmp_path / "pairs")
    assert len(files) == 2 * len(est.pairs) > 0
