import numpy as np
import pytest

from autolabel import calibration as cal
from autolabel.errors import AutoLabelError
from autolabel.nn import Prediction


def naive_two_loop_report(confidence, correct, n_bins):
    """Independent oracle: loop bins, loop samples, right-closed edges."""
    m = len(confidence)
    ece = 0.0
    bins = []
    for r in range(1, n_bins + 1):
        lo, hi = (r - 1) / n_bins, r / n_bins
        members = [i for i in range(m)
                   if (confidence[i] > lo or (r == 1 and confidence[i] == 0.0))
                   and confidence[i] <= hi]
        if not members:
            bins.append((0, 0.0, 0.0))
            continue
        acc = sum(correct[i] for i in members) / len(members)
        conf = sum(confidence[i] for i in members) / len(members)
        bins.append((len(members), acc, conf))
        ece += (len(members) / m) * abs(acc - conf)
    return ece, bins


def make_predictions(confidence, correct):
    preds = []
    labels = []
    for c, ok in zip(confidence, correct):
        probs = np.array([c, 1.0 - c]) if c >= 0.5 else np.array([1.0 - c, c])
        pred_class = int(probs.argmax())
        preds.append(Prediction(probabilities=probs, predicted_class=pred_class,
                                confidence=float(probs[pred_class])))
        labels.append(pred_class if ok else 1 - pred_class)
    return preds, labels


def test_perfect_predictions_have_zero_ece():
    preds, labels = make_predictions([1.0, 1.0, 1.0], [1, 1, 1])
    rep = cal.calibration_report(preds, labels, n_bins=15)
    assert rep.ece == 0.0
    assert rep.accuracy == 1.0
    assert rep.mean_confidence == 1.0


def test_two_sample_hand_example():
    # confidences (0.9, 0.6), correctness (1, 0), R=1: |0.5 - 0.75| = 0.25
    preds, labels = make_predictions([0.9, 0.6], [1, 0])
    rep = cal.calibration_report(preds, labels, n_bins=1)
    assert rep.ece == pytest.approx(0.25, abs=1e-15)
    assert rep.accuracy == 0.5
    assert rep.mean_confidence == pytest.approx(0.75)


def test_matches_naive_oracle_on_random_sets():
    rng = np.random.default_rng(42)
    for _ in range(200):
        m = int(rng.integers(1, 120))
        n_bins = int(rng.integers(1, 25))
        conf = rng.random(m)
        if rng.random() < 0.2:  # exercise edge confidences
            conf[rng.integers(0, m)] = rng.choice([0.0, 1.0, 0.5])
        correct = (rng.random(m) < conf).astype(float)
        rep = cal.report_from_confidence(conf, correct, n_bins)
        ece_oracle, bins_oracle = naive_two_loop_report(conf.tolist(), correct.tolist(),
                                                        n_bins)
        assert abs(rep.ece - ece_oracle) <= 1e-12
        assert sum(b.count for b in rep.bins) == m
        for got, (count, acc, confm) in zip(rep.bins, bins_oracle):
            assert got.count == count
            assert got.acc == pytest.approx(acc, abs=1e-12)
            assert got.conf == pytest.approx(confm, abs=1e-12)


def test_single_bin_ece_equals_acc_conf_gap_exactly():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = int(rng.integers(1, 300))
        conf = rng.random(m)
        correct = (rng.random(m) < 0.7).astype(float)
        rep = cal.report_from_confidence(conf, correct, n_bins=1)
        assert rep.ece == abs(rep.accuracy - rep.mean_confidence)


def test_permutation_invariance():
    rng = np.random.default_rng(9)
    conf = rng.random(64)
    correct = (rng.random(64) < conf).astype(float)
    rep1 = cal.report_from_confidence(conf, correct, 15)
    perm = rng.permutation(64)
    rep2 = cal.report_from_confidence(conf[perm], correct[perm], 15)
    assert rep1.ece == pytest.approx(rep2.ece, abs=1e-15)
    assert rep1.accuracy == rep2.accuracy


def test_accuracy_is_weighted_mean_of_bin_accuracies():
    rng = np.random.default_rng(10)
    conf = rng.random(200)
    correct = (rng.random(200) < conf).astype(float)
    rep = cal.report_from_confidence(conf, correct, 15)
    weighted = sum(b.count * b.acc for b in rep.bins) / rep.n_samples
    assert rep.accuracy == pytest.approx(weighted, abs=1e-12)


def test_zero_confidence_lands_in_first_bin():
    rep = cal.report_from_confidence(np.array([0.0]), np.array([1.0]), 10)
    assert rep.bins[0].count == 1
    assert sum(b.count for b in rep.bins) == 1


def test_empty_prediction_set_rejected():
    with pytest.raises(AutoLabelError):
        cal.calibration_report([], [], 10)
    with pytest.raises(AutoLabelError):
        cal.report_from_confidence(np.array([]), np.array([]), 10)


def test_ece_in_unit_interval_and_zero_iff_bins_match():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = int(rng.integers(1, 80))
        conf = rng.random(m)
        correct = (rng.random(m) < 0.5).astype(float)
        rep = cal.report_from_confidence(conf, correct, 10)
        assert 0.0 <= rep.ece <= 1.0
        if rep.ece == 0.0:
            for b in rep.bins:
                if b.count:
                    assert b.acc == pytest.approx(b.conf, abs=1e-15)


def test_corrupted_aggregate_single_and_pair():
    r1 = cal.report_from_confidence(np.array([0.9]), np.array([1.0]), 1)
    acc, ece = cal.corrupted_aggregate([r1])
    assert acc == r1.accuracy and ece == r1.ece
    r2 = cal.CalibrationReport(ece=0.3, accuracy=0.5, mean_confidence=0.7)
    r1b = cal.CalibrationReport(ece=0.1, accuracy=0.9, mean_confidence=0.8)
    acc, ece = cal.corrupted_aggregate([r1b, r2])
    assert ece == pytest.approx(0.2)
    assert acc == pytest.approx(0.7)


def test_corrupted_aggregate_grid_matches_direct_sum():
    rng = np.random.default_rng(13)
    reports = [cal.CalibrationReport(ece=float(rng.random()),
                                     accuracy=float(rng.random()),
                                     mean_confidence=0.5)
               for _ in range(17 * 5)]
    acc, ece = cal.corrupted_aggregate(reports)
    assert acc == pytest.approx(sum(r.accuracy for r in reports) / 85, abs=1e-12)
    assert ece == pytest.approx(sum(r.ece for r in reports) / 85, abs=1e-12)


def test_accuracy_difference_examples():
    assert cal.accuracy_difference(86.9, 47.6, 95.6, 0.0) == pytest.approx(38.9, abs=1e-9)
    assert cal.accuracy_difference(62.6, 29.0, 79.5, 0.0) == pytest.approx(12.1, abs=1e-9)
    assert cal.accuracy_difference(80.0, 40.0, 80.0, 40.0) == 0.0


def test_bins_csv_shape():
    rep = cal.report_from_confidence(np.array([0.9, 0.2]), np.array([1.0, 0.0]), 5)
    text = cal.bins_csv(rep)
    lines = text.strip().split("\n")
    assert lines[0] == "r,count,acc,conf"
    assert len(lines) == 6
