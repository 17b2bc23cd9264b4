import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segrc.stratification import (StrataModel, assign_stratum, fit_strata, fit_strata_model,
                                  fit_stratum_thresholds)


def toy_scored():
    a = (np.array([[0.9, 0.2, 0.1]]), np.array([[1, 1, 0]]))
    b = (np.array([[0.6, 0.3]]), np.array([[1, 0]]))
    return [a, b]


def test_fit_strata_examples():
    assert fit_strata([10, 20, 30, 40], 2).tolist() == [25.0]
    assert fit_strata([10, 20, 30, 40], 1).size == 0
    assert fit_strata([5, 5, 5, 5], 2).tolist() == [5.0]
    with pytest.raises(ValueError):
        fit_strata([1, 2], 3)


def test_assign_stratum_examples():
    assert assign_stratum([25.0], 15) == 0
    assert assign_stratum([25.0], 25) == 1
    assert assign_stratum([], 1e9) == 0
    assert assign_stratum([10.0, 20.0], -5) == 0
    assert assign_stratum([10.0, 20.0], 1e9) == 2


@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=50), st.integers(1, 6),
       st.floats(0, 2e4))
def test_assignment_is_total(masses, K, probe):
    if K > len(masses):
        return
    edges = fit_strata(masses, K)
    assert np.all(np.diff(edges) >= 0)
    k = assign_stratum(edges, probe)
    assert 0 <= k < K
    counts = np.bincount(assign_stratum(edges, np.array(masses)), minlength=K)
    assert counts.sum() == len(masses)


def test_degenerate_edges_all_in_one_stratum():
    edges = fit_strata([5, 5, 5, 5], 2)
    strata = assign_stratum(edges, np.array([5, 5, 5, 5.0]))
    assert set(strata.tolist()) == {1}
    tau, n, fallback = fit_stratum_thresholds(toy_scored() * 2, [1, 1, 1, 1], 0.5, K=2,
                                              min_size=1)
    assert fallback.tolist() == [True, False] and n.tolist() == [0, 4]


def test_stratum_thresholds_examples():
    tau, n, fallback = fit_stratum_thresholds(toy_scored(), [0, 0], alpha=0.5, min_size=1)
    assert tau.tolist() == [0.6] and n.tolist() == [2] and not fallback[0]
    single = [toy_scored()[1]]
    tau, _, _ = fit_stratum_thresholds(single, [0], alpha=0.1, min_size=1)
    assert tau.tolist() == [0.0]
    # empty stratum 1 falls back to the given global threshold
    tau, n, fallback = fit_stratum_thresholds(toy_scored(), [0, 0], alpha=0.5, K=2,
                                              global_tau=0.33, min_size=1)
    assert tau.tolist() == [0.6, 0.33] and fallback.tolist() == [False, True]


def test_small_strata_use_global(rng):
    imgs = [(rng.random((1, 8)), (rng.random((1, 8)) < 0.5).astype(int) | np.eye(1, 8, dtype=int))
            for _ in range(30)]
    tau, n, fallback = fit_stratum_thresholds(imgs, [0] * 25 + [1] * 5, 0.2, global_tau=0.123)
    assert n.tolist() == [25, 5]
    assert fallback.tolist() == [False, True] and tau[1] == 0.123


def test_model_csv(tmp_path, rng):
    imgs = [(rng.random((1, 6)), np.ones((1, 6), dtype=int)) for _ in range(40)]
    masses = rng.uniform(1, 100, 40)
    model = fit_strata_model(imgs, masses, alpha=0.3, K=2, min_size=5)
    assert model.K == 2 and model.n.sum() == 40
    model.to_csv(tmp_path / "strata.csv")
    text = (tmp_path / "strata.csv").read_text().splitlines()
    assert text[0] == "stratum,lower_edge,upper_edge,n,tau"
    back = StrataModel.from_csv(tmp_path / "strata.csv", model.global_tau, 5)
    assert np.array_equal(back.edges, model.edges) and np.array_equal(back.tau, model.tau)
    assert back.threshold_for(masses[0]) == model.threshold_for(masses[0])
