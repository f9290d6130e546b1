import numpy as np
import pytest

from asmlelm import metrics

CM = np.array([[8, 2], [1, 9]])


def test_two_class_example():
    assert metrics.oa(CM) == pytest.approx(0.85)
    assert metrics.aa(CM) == pytest.approx(0.85)
    assert metrics.kappa(CM) == pytest.approx(0.70)


def test_perfect_diagonal():
    cm = np.diag([3, 5, 2])
    assert metrics.oa(cm) == metrics.aa(cm) == metrics.kappa(cm) == 1.0


def test_single_class_perfect():
    assert metrics.kappa(np.array([[7]])) == 1.0


def test_oa_aa_differ_on_imbalance():
    cm = np.array([[90, 0], [5, 5]])
    assert metrics.oa(cm) == pytest.approx(0.95)
    assert metrics.aa(cm) == pytest.approx(0.75)


def test_empty_reference_class_named():
    with pytest.raises(ValueError, match="class 2"):
        metrics.aa(np.array([[3, 1], [0, 0]]))


def test_empty_matrix():
    with pytest.raises(ValueError):
        metrics.oa(np.zeros((2, 2)))


def test_confusion_counts():
    cm = metrics.confusion([1, 1, 2, 3], [1, 2, 2, 1], 3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])


def test_confusion_validation():
    with pytest.raises(ValueError):
        metrics.confusion([1, 4], [1, 1], 3)
    with pytest.raises(ValueError):
        metrics.confusion([1, 2], [1], 3)


def test_kappa_against_sample_formula(rng):
    # chance agreement from independent marginals, computed sample-wise
    truth = rng.integers(1, 5, size=500)
    pred = np.where(rng.uniform(size=500) < 0.7, truth, rng.integers(1, 5, size=500))
    cm = metrics.confusion(truth, pred, 4)
    p_o = np.mean(truth == pred)
    p_e = sum(np.mean(truth == k) * np.mean(pred == k) for k in range(1, 5))
    assert metrics.kappa(cm) == pytest.approx((p_o - p_e) / (1 - p_e), rel=1e-12)


def test_kappa_near_zero_for_random_labels(rng):
    truth = rng.integers(1, 4, size=20000)
    pred = rng.integers(1, 4, size=20000)
    assert abs(metrics.kappa(metrics.confusion(truth, pred, 3))) < 0.03


def test_report_layout():
    lines = metrics.report_csv(CM).splitlines()
    assert lines == ["class,accuracy", "1,80.00", "2,90.00", "OA,85.00", "AA,85.00", "k,70.00"]


def test_confusion_csv():
    lines = metrics.confusion_csv(CM).splitlines()
    assert lines[1:] == ["1,8,2", "2,1,9"]
