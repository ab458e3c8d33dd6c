import numpy as np
import pytest
from hypothesis import given, strategies as st

from greyraman.dataset import LaunchProfile, SampleRecord
from greyraman.errors import DimensionMismatch, EmptyInput
from greyraman.evaluation import (
    EvalReport,
    cdf,
    nested_subset_ids,
    percentile,
    read_summary,
    rmse,
    write_report,
)


class TestRmse:
    def test_identical(self):
        g = np.linspace(-5, 0, 200)
        assert rmse(g, g) == 0.0

    def test_constant_offset(self):
        g = np.linspace(-5, 0, 200)
        assert rmse(g + 1.0, g) == pytest.approx(1.0, abs=1e-12)

    def test_alternating(self):
        err = np.tile([2.0, -2.0], 100)
        assert rmse(err, np.zeros(200)) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            rmse(np.zeros(3), np.zeros(4))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.integers(0, 1000))
    def test_symmetric_nonnegative(self, a, seed):
        a = np.array(a)
        b = a + np.random.default_rng(seed).normal(size=a.size)
        assert rmse(a, b) == rmse(b, a) >= 0
        assert rmse(a, a) == 0


class TestCdf:
    def test_single_value(self):
        assert percentile([0.37], 90) == 0.37

    def test_one_to_ten(self):
        # rank 0.9 * (10 - 1) = 8.1 -> 9 + 0.1 * (10 - 9)
        assert percentile(np.arange(1, 11), 90) == pytest.approx(9.1, abs=1e-12)

    def test_percentile_100_is_max(self):
        e = np.random.default_rng(0).exponential(size=57)
        assert percentile(e, 100) == e.max()

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=50))
    def test_curve_shape(self, e):
        values, frac = cdf(e)
        assert np.all(np.diff(values) >= 0) and np.all(np.diff(frac) > 0)
        assert frac[-1] == 1.0
        assert values[-1] == max(e)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            cdf([])
        with pytest.raises(EmptyInput):
            percentile([], 50)


def test_report_invariants():
    e = np.random.default_rng(1).exponential(0.2, size=200)
    r = EvalReport.from_errors("greybox", 500, e)
    assert r.percentile_90_db <= r.max_rmse_db
    assert r.mean_rmse_db <= r.max_rmse_db


def test_write_report_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    reports = [EvalReport.from_errors(m, 100, rng.exponential(0.3, 200), seed=4, config_digest="d",
                                      sample_ids=range(200)) for m in ("greybox", "conventional")]
    write_report(reports, tmp_path / "a", {"seed": 4})
    summary = read_summary(tmp_path / "a")
    for r, s in zip(reports, summary["reports"]):
        assert s == r.summary()
    rows = (tmp_path / "a" / "cdf_greybox_100.csv").read_text().splitlines()
    assert len(rows) - 1 == 200
    write_report(reports, tmp_path / "b", {"seed": 4})
    for name in ("summary.json", "cdf_greybox_100.csv", "errors_conventional_100.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_nested_subsets():
    flat = LaunchProfile(np.zeros(3))
    ds1 = [SampleRecord(i, "ds1", 0, np.zeros(5), flat, np.zeros(3)) for i in range(800)]
    small = nested_subset_ids(ds1, 100, 7)
    mid = nested_subset_ids(ds1, 200, 7)
    assert set(small) < set(mid) and len(small) == 100
    assert nested_subset_ids(ds1, 200, 7) == mid
    with pytest.raises(ValueError):
        nested_subset_ids(ds1, 801, 7)
