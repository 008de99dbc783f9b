"""Metric invariances, assignment optimality, phase timing."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrlns import metrics

RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# assignment: scipy result must equal brute-force permutation search
# ---------------------------------------------------------------------------

def _brute_force_cost(cost):
    n = cost.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(cost[i, p] for i, p in enumerate(perm)))
    return best


def test_assignment_matches_brute_force_50_matrices():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        cost = rng.normal(size=(n, n))
        rows, cols = metrics.linear_sum_assignment(cost)
        np.testing.assert_allclose(
            cost[rows, cols].sum(), _brute_force_cost(cost), rtol=0, atol=1e-12
        )


# ---------------------------------------------------------------------------
# mean correlation coefficient
# ---------------------------------------------------------------------------

def test_mcc_identity_is_one():
    z = RNG.normal(size=(500, 4))
    res = metrics.mcc(z, z)
    assert abs(res.value - 1.0) < 1e-10
    np.testing.assert_array_equal(res.assignment[1], res.assignment[0])


def test_mcc_permutation_invariance():
    z = RNG.normal(size=(400, 5))
    perm = [3, 0, 4, 1, 2]
    res = metrics.mcc(z, z[:, perm])
    assert abs(res.value - 1.0) < 1e-10
    # the match must recover the permutation
    recovered = {int(t): int(e) for t, e in zip(*res.assignment)}
    assert recovered == {t: perm.index(t) for t in range(5)}


def test_mcc_sign_flip_invariance():
    z = RNG.normal(size=(300, 3))
    flipped = z * np.array([1.0, -1.0, -1.0])
    for method in ("spearman", "pearson"):
        assert abs(metrics.mcc(z, flipped, method).value - 1.0) < 1e-10


def test_mcc_monotone_invariance_spearman_only():
    z = RNG.normal(size=(300, 3))
    warped = np.stack([z[:, 0] ** 3, np.exp(z[:, 1]), np.arctan(z[:, 2])], axis=1)
    assert abs(metrics.mcc(z, warped, "spearman").value - 1.0) < 1e-10
    assert metrics.mcc(z, warped, "pearson").value < 1.0 - 1e-3


def test_mcc_pearson_affine_invariance():
    z = RNG.normal(size=(300, 3))
    affine = 2.5 * z - 7.0
    assert abs(metrics.mcc(z, affine, "pearson").value - 1.0) < 1e-10


def test_mcc_independent_noise_scores_low():
    a = RNG.normal(size=(3000, 4))
    b = RNG.normal(size=(3000, 4))
    assert metrics.mcc(a, b).value < 0.2


def test_mcc_flattens_leading_axes():
    z = RNG.normal(size=(20, 15, 3))
    res = metrics.mcc(z, z)
    assert abs(res.value - 1.0) < 1e-10
    assert res.corr.shape == (3, 3)


def test_mcc_constant_column_warns_and_scores_zero():
    z = RNG.normal(size=(100, 2))
    est = z.copy()
    est[:, 1] = 3.14
    with pytest.warns(UserWarning, match="constant"):
        res = metrics.mcc(z, est)
    assert res.per_component.min() == 0.0


def test_mcc_rejects_mismatched_rows():
    with pytest.raises(ValueError):
        metrics.mcc(np.zeros((10, 2)), np.zeros((11, 2)))
    with pytest.raises(ValueError):
        metrics.mcc(np.zeros((10, 2)), np.zeros((10, 2)), method="kendall")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_property_spearman_invariant_to_monotone_and_permutation(seed, n):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(200, n))
    perm = rng.permutation(n)
    sign = rng.choice([-1.0, 1.0], size=n)
    warped = np.sinh(z[:, perm]) * sign  # odd monotone warp, then flip
    assert abs(metrics.mcc(z, warped).value - 1.0) < 1e-10


# ---------------------------------------------------------------------------
# regime accuracy
# ---------------------------------------------------------------------------

def test_domain_accuracy_label_swap_invariance():
    true = RNG.integers(0, 3, size=1000)
    relabel = np.array([2, 0, 1])
    res = metrics.domain_accuracy(true, relabel[true])
    assert res.value == 1.0
    assert res.mapping == {2: 0, 0: 1, 1: 2}


def test_domain_accuracy_hand_case():
    true = np.array([0, 0, 1, 1])
    pred = np.array([1, 1, 0, 2])
    res = metrics.domain_accuracy(true, pred)
    assert res.value == 0.75
    assert res.mapping[1] == 0
    assert res.confusion.shape == (2, 3)


def test_domain_accuracy_overprovisioned_predictor():
    true = RNG.integers(0, 2, size=500)
    pred = true.copy()
    pred[::50] = 4  # a rarely used surplus label
    res = metrics.domain_accuracy(true, pred)
    assert res.value == 1.0 - np.mean(np.arange(500) % 50 == 0)
    assert res.confusion.shape == (2, 5)


def test_domain_accuracy_validates_input():
    with pytest.raises(ValueError):
        metrics.domain_accuracy(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        metrics.domain_accuracy(np.zeros(0), np.zeros(0))


# ---------------------------------------------------------------------------
# phase timing
# ---------------------------------------------------------------------------

def test_phase_report_accuracy_leads():
    epochs = [1, 2, 3, 4, 5]
    acc = [0.5, 0.92, 0.95, 0.97, 0.98]
    m = [0.3, 0.5, 0.7, 0.93, 0.95]
    rep = metrics.phase_report(epochs, acc, m)
    assert rep.first_acc_epoch == 2
    assert rep.first_mcc_epoch == 4
    assert rep.acc_leads is True
    assert rep.final_mcc == 0.95


def test_phase_report_tie_is_not_leading():
    rep = metrics.phase_report([1, 2], [0.5, 0.95], [0.5, 0.95])
    assert rep.first_acc_epoch == rep.first_mcc_epoch == 2
    assert rep.acc_leads is False


def test_phase_report_never_crossed():
    rep = metrics.phase_report([1, 2], [0.1, 0.2], [0.1, 0.2])
    assert rep.first_acc_epoch is None
    assert rep.first_mcc_epoch is None
    assert rep.acc_leads is None


def test_phase_report_one_sided_crossings():
    assert metrics.phase_report([1], [0.95], [0.1]).acc_leads is True
    assert metrics.phase_report([1], [0.1], [0.95]).acc_leads is False


def test_phase_report_custom_thresholds():
    rep = metrics.phase_report([1, 2], [0.6, 0.7], [0.2, 0.8],
                               acc_threshold=0.65, mcc_threshold=0.75)
    assert rep.first_acc_epoch == 2
    assert rep.first_mcc_epoch == 2


def test_phase_report_rejects_misaligned_histories():
    with pytest.raises(ValueError):
        metrics.phase_report([1, 2], [0.1], [0.1, 0.2])
