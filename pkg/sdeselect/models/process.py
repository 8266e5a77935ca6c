"""
Time grids, sample paths and covariate processes.

All containers are immutable after construction. Arrays handed in are copied
and frozen (``writeable = False``) so a path or covariate set can be shared
between workers without defensive copies.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from sdeselect.errors import GridError, LinkError

logger = logging.getLogger(__name__)

STANDARDIZE_TOL = 1e-12


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise GridError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.t0) or not np.isfinite(self.t_end):
            raise GridError("grid end points must be finite")
        if self.t_end <= self.t0:
            raise GridError(f"t_end ({self.t_end}) must exceed t0 ({self.t0})")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise GridError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def horizon(self) -> float:
        return self.t_end - self.t0

    @cached_property
    def times(self) -> np.ndarray:
        """Grid points t0 + k*dt for k = 0..n_steps"""
        times = self.t0 + np.arange(self.n_steps + 1) * self.dt
        times.setflags(write=False)
        return times

    def check_index(self, k: int) -> int:
        if not 0 <= k <= self.n_steps:
            raise GridError(f"grid index {k} outside 0..{self.n_steps}")
        return int(k)

    def window(self, k0: int, k1: int) -> "TimeGrid":
        """Sub-grid spanning grid indices k0..k1"""
        self.check_index(k0)
        self.check_index(k1)
        if k1 <= k0:
            raise GridError(f"empty window {k0}..{k1}")
        return TimeGrid(self.t0 + k0 * self.dt, self.t0 + k1 * self.dt, k1 - k0)

    def index_of(self, t: float) -> int:
        """Nearest grid index for time t"""
        k = int(round((t - self.t0) / self.dt))
        return self.check_index(k)


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, 1)
        if values.shape[0] != self.grid.n_steps + 1:
            raise GridError(
                f"path has {values.shape[0]} values, grid needs {self.grid.n_steps + 1}")
        if not np.all(np.isfinite(values)):
            raise GridError("path values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def x0(self) -> float:
        return float(self.values[0])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def window(self, k0: int, k1: int) -> "SamplePath":
        return SamplePath(self.grid.window(k0, k1), self.values[k0:k1 + 1])


# Link functions

@dataclass(frozen=True)
class Link:
    """A continuous covariate transform g_l with a closed domain [lower, upper]"""
    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    lower: float = -np.inf
    upper: float = np.inf

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        outside = (values < self.lower) | (values > self.upper)
        if np.any(outside):
            bad = values[outside].flat[0]
            raise LinkError(f"link '{self.name}' undefined at covariate value {bad!r}")
        return np.asarray(self.func(values), dtype=float)


def _identity(values):
    return values


IDENTITY = Link("identity", _identity)

_registry: dict[str, Link] = {"identity": IDENTITY}


def clamp(lo: float, hi: float) -> Link:
    """Clamp-to-interval link; defined everywhere, values mapped into [lo, hi]"""
    if not lo < hi:
        raise LinkError(f"clamp bounds must satisfy lo < hi, got ({lo}, {hi})")
    return Link(f"clamp({lo!r},{hi!r})", lambda v: np.clip(v, lo, hi))


def register_link(name: str, func: Callable, lower: float = -np.inf,
                  upper: float = np.inf) -> Link:
    """Register a user continuous map under a name usable in configs"""
    link = Link(name, func, lower, upper)
    _registry[name] = link
    return link


def get_link(name: str) -> Link:
    """Resolve 'identity', 'clamp(lo,hi)' or a registered name"""
    if name.startswith("clamp(") and name.endswith(")"):
        try:
            lo, hi = (float(part) for part in name[6:-1].split(","))
        except ValueError as exc:
            raise LinkError(f"malformed clamp link '{name}'") from exc
        return clamp(lo, hi)
    try:
        return _registry[name]
    except KeyError:
        raise LinkError(f"unknown link '{name}'") from None


@dataclass(frozen=True, eq=False)
class CovariateSet:
    grid: TimeGrid
    series: np.ndarray
    links: tuple = ()
    standardized: bool = False

    def __post_init__(self):
        series = np.array(self.series, dtype=float).reshape(-1, self.grid.n_steps + 1) \
            if np.size(self.series) else np.empty((0, self.grid.n_steps + 1))
        if series.shape[1] != self.grid.n_steps + 1:
            raise GridError("covariate series length must equal n_steps + 1")
        if not np.all(np.isfinite(series)):
            raise GridError("covariate series must be finite")
        series.setflags(write=False)
        object.__setattr__(self, "series", series)

        links = tuple(self.links) or (IDENTITY,) * series.shape[0]
        links = tuple(get_link(l) if isinstance(l, str) else l for l in links)
        if len(links) != series.shape[0]:
            raise GridError(f"{len(links)} links given for {series.shape[0]} covariates")
        object.__setattr__(self, "links", links)

        # evaluating once validates every link on the observed range
        _ = self.transformed

    @classmethod
    def empty(cls, grid: TimeGrid) -> "CovariateSet":
        return cls(grid, np.empty((0, grid.n_steps + 1)))

    @property
    def p(self) -> int:
        return self.series.shape[0]

    @cached_property
    def transformed(self) -> np.ndarray:
        """g_l(z_l(t_k)) for every covariate and grid point, shape (p, n_steps+1)"""
        out = np.empty_like(self.series)
        for l, link in enumerate(self.links):
            out[l] = link(self.series[l])
        out.setflags(write=False)
        return out

    def check_mask(self, mask: Sequence[int]) -> tuple:
        mask = tuple(int(b) for b in mask)
        if len(mask) != self.p:
            raise GridError(f"mask length {len(mask)} does not match {self.p} covariates")
        if any(b not in (0, 1) for b in mask):
            raise GridError(f"mask must be binary, got {mask}")
        return mask

    def design(self, mask: Sequence[int]) -> np.ndarray:
        """Transformed rows of the included covariates, shape (popcount, n_steps+1)"""
        mask = self.check_mask(mask)
        return self.transformed[[l for l, b in enumerate(mask) if b]]

    def window(self, k0: int, k1: int) -> "CovariateSet":
        return CovariateSet(self.grid.window(k0, k1), self.series[:, k0:k1 + 1],
                            self.links, self.standardized)


def standardize(covs: CovariateSet) -> CovariateSet:
    """
    Affine-transform every series to mean 0 and population variance 1 over
    the grid. Already-standardized series are returned unchanged.
    """
    if covs.p == 0:
        return CovariateSet(covs.grid, covs.series, covs.links, True)

    out = np.empty_like(covs.series)
    for l, row in enumerate(covs.series):
        mean = row.mean()
        var = row.var()
        if var <= 0.0:
            raise GridError(f"covariate z{l + 1} is constant and cannot be standardized")
        if abs(mean) <= STANDARDIZE_TOL and abs(var - 1.0) <= STANDARDIZE_TOL:
            out[l] = row
        else:
            out[l] = (row - mean) / np.sqrt(var)
    return CovariateSet(covs.grid, out, covs.links, True)
