import numpy as np
import pandas as pd
import pytest

from sdeselect.errors import SeriesFormatError
from sdeselect.models.process import CovariateSet, SamplePath
from sdeselect.utils.series import load_series_csv


def write(tmp_path, text, name="series.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestUniformFiles:
    def test_three_rows(self, tmp_path):
        ingested = load_series_csv(write(tmp_path, "t,x\n0,1.0\n1,2.0\n2,4.0\n"))
        assert isinstance(ingested.series, SamplePath)
        assert not ingested.resampled
        assert ingested.series.grid.dt == pytest.approx(1.0)
        assert ingested.series.grid.n_steps == 2
        np.testing.assert_array_equal(ingested.series.values, [1.0, 2.0, 4.0])
        assert "3 rows" in ingested.provenance

    def test_comment_lines_skipped(self, tmp_path):
        text = "# sdeselect 0.1.0 seed=1 config=abc\nt,x\n0.0,0.5\n0.5,0.25\n1.0,0.0\n"
        ingested = load_series_csv(write(tmp_path, text), kind="path")
        assert ingested.series.grid.dt == pytest.approx(0.5)
        assert ingested.series.x0 == 0.5

    def test_covariate_columns(self, tmp_path):
        text = "t,z1,z2\n0,1,4\n1,2,5\n2,3,6\n"
        ingested = load_series_csv(write(tmp_path, text))
        assert isinstance(ingested.series, CovariateSet)
        assert ingested.series.p == 2
        np.testing.assert_array_equal(ingested.series.series[1], [4.0, 5.0, 6.0])

    def test_single_column_as_covariates(self, tmp_path):
        ingested = load_series_csv(write(tmp_path, "t,z1\n0,1\n1,2\n"), kind="covariates")
        assert isinstance(ingested.series, CovariateSet)
        assert ingested.series.p == 1

    def test_daily_dates(self, tmp_path):
        days = pd.date_range("2021-03-01", periods=10, freq="D")
        frame = pd.DataFrame({"date": days.strftime("%Y-%m-%d"), "x": np.arange(10.0)})
        frame.to_csv(tmp_path / "daily.csv", index=False)
        ingested = load_series_csv(tmp_path / "daily.csv")
        assert not ingested.resampled
        assert ingested.series.grid.t0 == 0.0
        assert ingested.series.grid.t_end == pytest.approx(9.0)


class TestIrregularFiles:
    def test_irregular_dates_resampled(self, tmp_path):
        rng = np.random.default_rng(42)
        days = pd.date_range("2020-01-01", periods=500, freq="D")
        keep = np.sort(rng.choice(np.arange(1, 499), size=465, replace=False))
        days = days[np.concatenate([[0], keep, [499]])]
        frame = pd.DataFrame({"date": days.strftime("%Y-%m-%d"), "x": np.linspace(0.0, 1.0, len(days))})
        frame.to_csv(tmp_path / "irregular.csv", index=False)

        ingested = load_series_csv(tmp_path / "irregular.csv")
        assert len(days) == 467
        assert ingested.resampled
        assert "resampled" in ingested.provenance
        grid = ingested.series.grid
        assert grid.n_steps == 466
        assert grid.t_end == pytest.approx(499.0)
        # endpoints are kept exactly
        np.testing.assert_allclose(ingested.series.values[[0, -1]], [0.0, 1.0])


class TestMalformedFiles:
    def test_duplicated_timestamp(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="row 3: duplicated timestamp") as info:
            load_series_csv(write(tmp_path, "t,x\n0,1\n1,2\n1,3\n"))
        assert info.value.row == 3

    def test_decreasing_timestamp(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="row 3: decreasing"):
            load_series_csv(write(tmp_path, "t,x\n0,1\n2,2\n1,3\n"))

    def test_missing_cell(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="row 2"):
            load_series_csv(write(tmp_path, "t,x\n0,1\n1,\n2,3\n"))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="row 1"):
            load_series_csv(write(tmp_path, "t,x\n0,abc\n1,2\n"))

    def test_bad_time_value(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="row 2"):
            load_series_csv(write(tmp_path, "t,x\n2020-01-01,1\nlater,2\n"))

    def test_too_few_rows(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="at least 2 rows"):
            load_series_csv(write(tmp_path, "t,x\n0,1\n"))

    def test_no_value_column(self, tmp_path):
        with pytest.raises(SeriesFormatError):
            load_series_csv(write(tmp_path, "t\n0\n1\n"))

    def test_path_with_two_columns(self, tmp_path):
        with pytest.raises(SeriesFormatError, match="one value column"):
            load_series_csv(write(tmp_path, "t,a,b\n0,1,2\n1,2,3\n"), kind="path")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            load_series_csv(write(tmp_path, "t,x\n0,1\n1,2\n"), kind="matrix")
