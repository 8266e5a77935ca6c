"""
CSV ingestion of observed paths and covariate series.

Files have a header row whose first column is time (numbers, or ISO dates
converted to days since the first row). One further column gives a
SamplePath; several give a CovariateSet. Lines starting with '#' are
ignored.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from sdeselect.errors import SeriesFormatError
from sdeselect.models.process import CovariateSet, SamplePath, TimeGrid

logger = logging.getLogger(__name__)

UNIFORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class IngestedSeries:
    series: SamplePath | CovariateSet
    resampled: bool
    provenance: str


def _time_column(column: pd.Series) -> np.ndarray:
    numeric = pd.to_numeric(column, errors="coerce")
    if not numeric.isna().any():
        return numeric.to_numpy(dtype=float)
    dates = pd.to_datetime(column, errors="coerce")
    bad = dates.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise SeriesFormatError(f"time value {column.iloc[row - 1]!r} is neither a number nor a date", row=row)
    return ((dates - dates.iloc[0]) / pd.Timedelta(days=1)).to_numpy(dtype=float)


def load_series_csv(file, kind: str = "auto") -> IngestedSeries:
    """
    Read a path or covariate CSV onto a uniform grid, resampling if needed.
    kind is "path", "covariates" or "auto" (a single value column is a path).
    """
    if kind not in ("auto", "path", "covariates"):
        raise ValueError(f"unknown series kind '{kind}'")
    try:
        df = pd.read_csv(file, comment="#", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SeriesFormatError(f"unreadable series file: {exc}") from exc

    if df.shape[1] < 2:
        raise SeriesFormatError("need a time column and at least one value column")
    if len(df) < 2:
        raise SeriesFormatError(f"need at least 2 rows, got {len(df)}")

    # Data rows are numbered from 1, the header being row 0
    t = _time_column(df.iloc[:, 0])
    values = df.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    missing = values.isna().any(axis=1).to_numpy()
    if missing.any():
        raise SeriesFormatError("missing or non-numeric cell", row=int(np.flatnonzero(missing)[0]) + 1)
    steps = np.diff(t)
    if np.any(steps <= 0):
        bad = int(np.flatnonzero(steps <= 0)[0]) + 2
        kind = "duplicated" if steps[bad - 2] == 0 else "decreasing"
        raise SeriesFormatError(f"{kind} timestamp {t[bad - 1]!r}", row=bad)

    n = len(t) - 1
    grid = TimeGrid(float(t[0]), float(t[-1]), n)
    data = values.to_numpy(dtype=float).T
    deviation = float(np.max(np.abs(steps - grid.dt)) / grid.dt)
    resampled = deviation >= UNIFORM_TOL
    source = file if isinstance(file, (str, os.PathLike)) else getattr(file, "name", "<stream>")
    provenance = f"{len(t)} rows from {source}"
    if resampled:
        data = np.stack([np.interp(grid.times, t, row) for row in data])
        provenance += (f"; irregular spacing (max relative deviation {deviation:.3g}) "
                       f"linearly resampled to {n + 1} uniform points, dt={grid.dt!r}")
        logger.warning("resampled %s", provenance)

    columns = [str(c) for c in df.columns[1:]]
    if kind == "path" and len(columns) != 1:
        raise SeriesFormatError(f"a path file needs one value column, got {len(columns)}")
    if kind == "path" or (kind == "auto" and len(columns) == 1):
        series = SamplePath(grid, data[0])
    else:
        series = CovariateSet(grid, data)
    logger.info("loaded %s (%s)", ", ".join(columns), provenance)
    return IngestedSeries(series, resampled, provenance)
