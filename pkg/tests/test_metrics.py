import numpy as np
import numpy.testing as npt
import pytest

from glassdepth.errors import ContractError, ShapeError
from glassdepth.metrics import (MetricReport, aggregate, evaluate, format_table,
                                report_lines)


def evaluate_loop(pred, gt, mask):
    """Scalar-loop oracle for the masked metric suite."""
    sq = absolute = rel = 0.0
    hits = {1.05: 0, 1.10: 0, 1.25: 0}
    n = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if not mask[i, j]:
                continue
            d, ds = float(pred[i, j]), float(gt[i, j])
            n += 1
            sq += (d - ds) ** 2
            absolute += abs(d - ds)
            rel += abs(d - ds) / ds
            ratio = max(d / ds, ds / d) if d > 0 else float("inf")
            for t in hits:
                if ratio < t:
                    hits[t] += 1
    return dict(rmse=np.sqrt(sq / n), rel=rel / n, mae=absolute / n,
                delta_105=100 * hits[1.05] / n, delta_110=100 * hits[1.10] / n,
                delta_125=100 * hits[1.25] / n, pixel_count=n)


class TestEvaluate:
    def test_perfect_prediction(self):
        gt = np.random.default_rng(0).uniform(0.5, 3.0, (8, 8))
        r = evaluate(gt, gt)
        assert r.rmse == r.rel == r.mae == 0.0
        assert r.delta_105 == r.delta_110 == r.delta_125 == 100.0
        assert r.pixel_count == 64

    def test_frozen_two_pixel_case(self):
        r = evaluate(np.array([[2.0, 2.0]]), np.array([[1.0, 2.0]]))
        assert r.rmse == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert r.rel == pytest.approx(0.5)
        assert r.mae == pytest.approx(0.5)
        assert r.delta_125 == 50.0
        assert r.delta_110 == 50.0
        assert r.delta_105 == 50.0

    def test_threshold_boundaries(self):
        r = evaluate(np.array([[1.06]]), np.array([[1.0]]))
        assert r.delta_105 == 0.0
        assert r.delta_110 == 100.0
        assert r.delta_125 == 100.0

    def test_strict_inequality_at_threshold(self):
        r = evaluate(np.array([[1.05]]), np.array([[1.0]]))
        assert r.delta_105 == 0.0  # ratio == 1.05 is not < 1.05

    def test_nonpositive_prediction_fails_deltas(self):
        r = evaluate(np.array([[-0.5, 1.0]]), np.array([[1.0, 1.0]]))
        assert r.delta_125 == 50.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            gt = rng.uniform(0.3, 4.0, (16, 16))
            pred = gt * rng.uniform(0.7, 1.3, (16, 16))
            mask = (rng.random((16, 16)) < 0.7).astype(np.uint8)
            mask[0, 0] = 1
            r = evaluate(pred, gt, mask)
            o = evaluate_loop(pred, gt, mask)
            for name, val in o.items():
                assert abs(getattr(r, name) - val) < 1e-9, name

    def test_delta_monotone(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gt = rng.uniform(0.3, 4.0, (8, 8))
            pred = gt * rng.uniform(0.5, 1.5, (8, 8))
            r = evaluate(pred, gt)
            assert r.delta_105 <= r.delta_110 <= r.delta_125

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        gt = rng.uniform(0.5, 2.0, (6, 6))
        pred = gt * rng.uniform(0.8, 1.2, (6, 6))
        r1 = evaluate(pred, gt)
        perm = rng.permutation(36)
        r2 = evaluate(pred.ravel()[perm].reshape(6, 6),
                      gt.ravel()[perm].reshape(6, 6))
        for name in ("rmse", "rel", "mae", "delta_105", "delta_110", "delta_125"):
            assert getattr(r1, name) == pytest.approx(getattr(r2, name), abs=1e-12)

    def test_empty_mask_rejected(self):
        with pytest.raises(ContractError):
            evaluate(np.ones((4, 4)), np.ones((4, 4)), np.zeros((4, 4)))

    def test_nonpositive_gt_rejected(self):
        gt = np.ones((4, 4))
        gt[1, 1] = 0.0
        with pytest.raises(ContractError):
            evaluate(np.ones((4, 4)), gt)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            evaluate(np.ones((4, 4)), np.ones((4, 5)))


class TestAggregate:
    def test_single_report_identity(self):
        gt = np.random.default_rng(4).uniform(0.5, 2.0, (8, 8))
        r = evaluate(gt * 1.1, gt)
        a = aggregate([r])
        for name in ("rmse", "rel", "mae", "delta_105", "delta_110",
                     "delta_125", "pixel_count"):
            assert getattr(a, name) == pytest.approx(getattr(r, name), abs=1e-12)

    def test_two_halves_equal_whole(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(0.5, 3.0, (16, 16))
        pred = gt * rng.uniform(0.7, 1.3, (16, 16))
        whole = evaluate(pred, gt)
        top = evaluate(pred[:8], gt[:8])
        bottom = evaluate(pred[8:], gt[8:])
        agg = aggregate([top, bottom])
        for name in ("rmse", "rel", "mae", "delta_105", "delta_110", "delta_125"):
            assert abs(getattr(agg, name) - getattr(whole, name)) < 1e-9, name
        assert agg.pixel_count == whole.pixel_count

    def test_weighted_by_pixel_count(self):
        rng = np.random.default_rng(6)
        gt = rng.uniform(0.5, 3.0, (12, 12))
        pred = gt * rng.uniform(0.8, 1.2, (12, 12))
        parts = [evaluate(pred[:2], gt[:2]), evaluate(pred[2:], gt[2:])]
        agg = aggregate(parts)
        whole = evaluate(pred, gt)
        assert abs(agg.rmse - whole.rmse) < 1e-9

    def test_zero_error_aggregates_to_zero(self):
        gt = np.random.default_rng(7).uniform(1, 2, (4, 4))
        agg = aggregate([evaluate(gt, gt), evaluate(gt, gt)])
        assert agg.rmse == agg.rel == agg.mae == 0.0
        assert agg.delta_105 == 100.0

    def test_empty_list_rejected(self):
        with pytest.raises(ContractError):
            aggregate([])


class TestSerialization:
    def test_machine_lines(self):
        gt = np.full((2, 2), 2.0)
        lines = report_lines(evaluate(gt + 0.5, gt))
        as_dict = dict(line.split("=") for line in lines)
        assert float(as_dict["rmse"]) == pytest.approx(0.5)
        assert float(as_dict["rel"]) == pytest.approx(0.25)
        assert as_dict["pixel_count"] == "4"
        assert float(as_dict["delta_105"]) == 0.0
        assert float(as_dict["delta_125"]) == 0.0  # ratio 1.25 is not < 1.25

    def test_prefixed_lines(self):
        gt = np.ones((2, 2))
        lines = report_lines(evaluate(gt, gt), prefix="agg.")
        assert all(line.startswith("agg.") for line in lines)

    def test_table_contains_all_rows(self):
        gt = np.full((2, 2), 1.0)
        r = evaluate(gt, gt)
        text = format_table([("s0", r), ("aggregate", r)])
        assert "s0" in text and "aggregate" in text
        assert "100.00" in text

    def test_monotonicity_enforced_in_report(self):
        with pytest.raises(ContractError):
            MetricReport(rmse=0, rel=0, mae=0, delta_105=90, delta_110=80,
                         delta_125=100, pixel_count=1)
