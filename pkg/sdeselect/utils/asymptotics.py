"""
Long-run quantities behind Bayes factor consistency and their empirical
diagnostics.

"Limits as T grows" are always finite-T grid averages here; convergence is
judged from sweeps over several horizons, never from a single T. The
closed-form evaluators assume the constant-ratio family, where
b_beta(t, x) / sigma(t, x) = eta(beta) does not depend on (t, x).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.stats import qmc

from sdeselect.errors import GridError, ModelMismatchError, ReplicateError, SDESelectError
from sdeselect.models.process import CovariateSet, TimeGrid
from sdeselect.models.simulate import (PATH_STREAM, PRIOR_STREAM, REPLICATE_STREAM, TRUTH_STREAM,
                                       derive_seed, euler_maruyama, simulate_paths)
from sdeselect.models.spec import ModelSpec, phi_values
from sdeselect.utils.bayes import Prior, log_marginal_ratio_mc, sample_prior
from sdeselect.utils.girsanov import LikelihoodKernel

logger = logging.getLogger(__name__)

DELTA_TOLERANCE = 1e-4
FULL_GRID_LIMIT = 2 ** 18


def _all_in(covs: CovariateSet, mask):
    return tuple(mask) if mask is not None else (1,) * covs.p


def _left_values(xi, mask, covs: CovariateSet) -> np.ndarray:
    """phi at the n left grid points"""
    return phi_values(xi, _all_in(covs, mask), covs)[:-1]


# Time averages of phi

@dataclass(frozen=True)
class PhiBar:
    phi1: float
    phi2: float
    cross: float | None = None


def phi_bar(xi, covs: CovariateSet, mask=None) -> PhiBar:
    """Left-sum grid means of phi and phi^2"""
    phi = _left_values(xi, mask, covs)
    if phi.size == 0:
        raise GridError("empty grid")
    n = phi.size
    return PhiBar(math.fsum(phi) / n, math.fsum(phi * phi) / n)


def phi_bar_cross(xi0, xi1, covs: CovariateSet, mask0=None, mask1=None) -> float:
    phi0 = _left_values(xi0, mask0, covs)
    phi1 = _left_values(xi1, mask1, covs)
    return math.fsum(phi0 * phi1) / phi0.size


@dataclass(frozen=True)
class ContinuityBound:
    phi1: float
    phi2: float
    cross: float


def phi_bar_continuity_bound(xi, covs: CovariateSet, eps: float, mask=None, xi_other=None,
                             mask_other=None) -> ContinuityBound:
    """
    Bounds on how far phi-bar, phi^2-bar and the cross average can move when
    every xi component is perturbed by at most eps.

    With G = 1 + sum_l |g_l|: |d phi| <= eps G, so
    |d phi1| <= eps mean(G), |d phi2| <= 2 eps mean(|phi| G) + eps^2 mean(G^2)
    and |d cross| <= eps mean(|phi_other| G).
    """
    mask = _all_in(covs, mask)
    design = np.abs(covs.design(mask)[:, :-1])
    G = 1.0 + design.sum(axis=0)
    phi = np.abs(_left_values(xi, mask, covs))
    other = phi if xi_other is None else np.abs(_left_values(xi_other, mask_other, covs))
    return ContinuityBound(
        phi1=eps * float(G.mean()),
        phi2=2.0 * eps * float(np.mean(phi * G)) + eps * eps * float(np.mean(G * G)),
        cross=eps * float(np.mean(other * G)),
    )


# kappa functionals

def _first(beta) -> np.ndarray | float:
    beta = np.asarray(beta, dtype=float)
    return beta[..., 0] if beta.ndim else float(beta)


@dataclass(frozen=True)
class KappaSpec:
    """kappa_j(beta_j) and kappa_bar(beta0, beta1); constants are accepted as well"""
    kappa0: Callable | float
    kappa1: Callable | float
    kappa_bar: Callable | float
    eta0: Callable | None = None
    eta1: Callable | None = None

    @classmethod
    def from_ratio(cls, eta0: Callable = _first, eta1: Callable = _first) -> "KappaSpec":
        return cls(kappa0=lambda b: eta0(b) ** 2,
                   kappa1=lambda b: eta1(b) ** 2,
                   kappa_bar=lambda b0, b1: eta0(b0) * eta1(b1),
                   eta0=eta0, eta1=eta1)

    def evaluate(self, beta0, beta1) -> tuple[float, float, float]:
        k0 = self.kappa0(beta0) if callable(self.kappa0) else self.kappa0
        k1 = self.kappa1(beta1) if callable(self.kappa1) else self.kappa1
        kb = self.kappa_bar(beta0, beta1) if callable(self.kappa_bar) else self.kappa_bar
        return float(k0), float(k1), float(kb)


def kl_rate_special(xi0, xi1, eta0: float, eta1: float, covs: CovariateSet, k: int,
                    mask0=None, mask1=None) -> float:
    """Divergence rate 1/2 (phi0(t_k) eta0 - phi1(t_k) eta1)^2 in the constant-ratio family"""
    k = covs.grid.check_index(k)
    phi0 = phi_values(xi0, _all_in(covs, mask0), covs)[k]
    phi1 = phi_values(xi1, _all_in(covs, mask1), covs)[k]
    gap = phi0 * eta0 - phi1 * eta1
    return 0.5 * gap * gap


def _cell_weights(grid: TimeGrid, a: float, b: float) -> np.ndarray:
    """Length of [a, b] falling in each grid cell [t_k, t_{k+1})"""
    if a < grid.t0 or b > grid.t_end or b < a:
        raise GridError(f"interval [{a}, {b}] outside grid [{grid.t0}, {grid.t_end}]")
    times = grid.times
    return np.clip(np.minimum(times[1:], b) - np.maximum(times[:-1], a), 0.0, None)


def interval_divergence_special(xi0, xi1, eta0: float, eta1: float, covs: CovariateSet,
                                t: float, h: float, mask0=None, mask1=None) -> float:
    """
    Divergence accumulated over [t, t+h] in the constant-ratio family,
    1/2 kappa0 int phi0^2 - kappa_bar int phi0 phi1 + 1/2 kappa1 int phi1^2,
    with phi held at its left grid value inside each cell.
    """
    w = _cell_weights(covs.grid, t, t + h)
    phi0 = _left_values(xi0, mask0, covs)
    phi1 = _left_values(xi1, mask1, covs)
    return (0.5 * eta0 * eta0 * math.fsum(w * phi0 * phi0)
            - eta0 * eta1 * math.fsum(w * phi0 * phi1)
            + 0.5 * eta1 * eta1 * math.fsum(w * phi1 * phi1))


def kl_bar_infinity(phi0: PhiBar, phi1: PhiBar, cross: float, kappas: KappaSpec,
                    beta0, beta1) -> float:
    """phi2_0 kappa0 / 2 - cross kappa_bar + phi2_1 kappa1 / 2"""
    k0, k1, kb = kappas.evaluate(beta0, beta1)
    if k0 < 0 or k1 < 0:
        raise ValueError(f"kappa values must be non-negative, got ({k0}, {k1})")
    return 0.5 * phi0.phi2 * k0 - cross * kb + 0.5 * phi1.phi2 * k1


def kl_bar_lower_bound(phi0: PhiBar, phi1: PhiBar, kappas: KappaSpec, beta0, beta1) -> float:
    """1/2 (sqrt(phi2_0 kappa0) - sqrt(phi2_1 kappa1))^2"""
    k0, k1, _ = kappas.evaluate(beta0, beta1)
    gap = math.sqrt(phi0.phi2 * k0) - math.sqrt(phi1.phi2 * k1)
    return 0.5 * gap * gap


# delta: infimum of the divergence rate over a compact search space

@dataclass(frozen=True)
class DeltaSearchSpace:
    """Boxes for the candidate beta, the candidate xi and the covariate values z"""
    beta_bounds: tuple
    xi_bounds: tuple
    z_bounds: tuple = ()

    def __post_init__(self):
        for name in ("beta_bounds", "xi_bounds", "z_bounds"):
            bounds = tuple(tuple(float(v) for v in pair) for pair in getattr(self, name))
            for lo, hi in bounds:
                if not (np.isfinite(lo) and np.isfinite(hi)):
                    raise ValueError(f"{name} must be finite; unbounded search spaces are not allowed")
                if hi < lo:
                    raise ValueError(f"{name} needs lower <= upper, got ({lo}, {hi})")
            object.__setattr__(self, name, bounds)

    @property
    def box(self) -> np.ndarray:
        return np.array(self.beta_bounds + self.xi_bounds + self.z_bounds, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float
    argmin: dict
    grid_resolution: str


def _delta_objective(space: DeltaSearchSpace, xi0, eta0: float, eta1: Callable,
                     mask0, mask1, links) -> Callable[[np.ndarray], np.ndarray]:
    nb, nx, nz = len(space.beta_bounds), len(space.xi_bounds), len(space.z_bounds)
    mask0 = tuple(mask0) if mask0 is not None else (1,) * nz
    mask1 = tuple(mask1) if mask1 is not None else (1,) * nz
    if len(mask0) != nz or len(mask1) != nz:
        raise ModelMismatchError(f"masks must cover the {nz} covariate dimensions")
    if nx != 1 + sum(mask1):
        raise ModelMismatchError(f"{nx} xi bounds for candidate mask {mask1}")
    xi0 = np.asarray(xi0, dtype=float)
    if xi0.shape[0] != 1 + sum(mask0):
        raise ModelMismatchError(f"xi0 has {xi0.shape[0]} entries for mask {mask0}")
    links = links or [None] * nz
    cols0 = [l for l in range(nz) if mask0[l]]
    cols1 = [l for l in range(nz) if mask1[l]]

    def objective(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        z = points[:, nb + nx:]
        g = np.empty_like(z)
        for l in range(nz):
            g[:, l] = z[:, l] if links[l] is None else links[l](z[:, l])
        phi0 = _paired_phi(np.broadcast_to(xi0, (points.shape[0], xi0.shape[0])), g[:, cols0])
        phi1 = _paired_phi(points[:, nb:nb + nx], g[:, cols1])
        gap = phi0 * eta0 - phi1 * np.asarray(eta1(points[:, :nb]), dtype=float)
        return 0.5 * gap * gap

    return objective


def _paired_phi(xis: np.ndarray, g: np.ndarray) -> np.ndarray:
    """phi for paired rows of xi and covariate values"""
    phi = xis[:, 0].copy()
    for j in range(g.shape[1]):
        phi = phi + xis[:, j + 1] * g[:, j]
    return phi


def _coarse_points(box: np.ndarray, resolution: int, seed: int) -> np.ndarray:
    d = box.shape[0]
    if d == 0:
        return np.empty((1, 0))
    axes = [np.linspace(lo, hi, resolution) if hi > lo else np.array([lo]) for lo, hi in box]
    if math.prod(len(a) for a in axes) <= FULL_GRID_LIMIT:
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    sobol = qmc.Sobol(d, scramble=True, seed=seed)
    unit = sobol.random_base2(int(math.ceil(math.log2(resolution * d * 16))))
    return box[:, 0] + unit * (box[:, 1] - box[:, 0])


def _search(objective: Callable, box: np.ndarray, resolution: int, starts: int,
            seed: int) -> tuple[float, np.ndarray]:
    points = _coarse_points(box, resolution, seed)
    values = objective(points)
    order = np.argsort(values, kind="stable")[:starts]
    best_value, best_point = float(values[order[0]]), points[order[0]]

    free = box[:, 1] > box[:, 0]
    if not free.any():
        return best_value, best_point

    for idx in order:
        start = points[idx]

        def scalar(y, start=start):
            x = start.copy()
            x[free] = np.clip(y, box[free, 0], box[free, 1])
            return float(objective(x)[0])

        result = minimize(scalar, start[free], method="Powell", bounds=box[free])
        if result.fun < best_value:
            best_value = float(result.fun)
            best_point = start.copy()
            best_point[free] = np.clip(result.x, box[free, 0], box[free, 1])
    return best_value, best_point


def delta_inf(space: DeltaSearchSpace, xi0, eta0: float, eta1: Callable = _first,
              resolution: int = 64, mask0=None, mask1=None, links=None, starts: int = 8,
              max_rounds: int = 4, seed: int = 0) -> DeltaEstimate:
    """
    inf of 1/2 (phi_xi0(z) eta0 - phi_xi1(z) eta1(beta1))^2 over beta1, xi1, z.

    Coarse candidates come from a full grid at `resolution` points per free
    dimension (a scrambled Sobol set when that grid gets too large); the best
    `starts` are refined by bounded Powell searches. Resolution doubles until
    successive rounds agree within 1e-4.
    """
    box = space.box
    objective = _delta_objective(space, xi0, eta0, eta1, mask0, mask1, links)

    best_value, best_point = math.inf, None
    previous = None
    res = resolution
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        value, point = _search(objective, box, res, starts, seed)
        if value < best_value:
            best_value, best_point = value, point
        if previous is not None and abs(previous - value) < DELTA_TOLERANCE:
            break
        previous = value
        res *= 2

    nb, nx = len(space.beta_bounds), len(space.xi_bounds)
    argmin = {
        "beta": tuple(best_point[:nb]),
        "xi": tuple(best_point[nb:nb + nx]),
        "z": tuple(best_point[nb + nx:]),
    }
    return DeltaEstimate(max(best_value, 0.0), argmin,
                         f"{resolution} points/dimension, {rounds} round(s), final {res}")


@dataclass(frozen=True, eq=False)
class DeltaInfinity:
    value: float
    trajectory: np.ndarray


def delta_infinity_estimate(deltas: Sequence[float]) -> DeltaInfinity:
    """Running mean of per-individual deltas; the last entry is the estimate"""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size == 0:
        raise ValueError("need at least one delta")
    trajectory = np.cumsum(deltas) / np.arange(1, deltas.size + 1)
    return DeltaInfinity(float(trajectory[-1]), trajectory)


# Monte Carlo sweeps

def _horizon_steps(horizon: float, dt: float) -> int:
    steps = horizon / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise GridError(f"horizon {horizon} is not a multiple of dt={dt}")
    return int(round(steps))


def _summaries(values: np.ndarray) -> tuple[float, float, float]:
    """mean, standard error and sample variance; SE and variance undefined for one value"""
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, math.nan, math.nan
    var = float(np.var(values, ddof=1))
    return mean, math.sqrt(var / values.size), var


@dataclass(frozen=True, eq=False)
class SweepSetup:
    """
    One convergence sweep. Candidate parameters are drawn from `prior` over
    `family`; the data come from `truth`, or from truth re-parameterized by a
    draw of `truth_prior` in every replicate when that is given.
    """
    family: ModelSpec
    truth: ModelSpec
    prior: Prior
    horizons: tuple
    dt: float
    replications: int
    prior_draws: int
    seed: int
    x0: float = 0.0
    covariates: CovariateSet | None = None
    truth_prior: Prior | None = None
    delta_target: float | None = None
    variance_floor: float = 0.5
    n_jobs: int = 1


@dataclass(frozen=True, eq=False)
class SweepResult:
    table: pd.DataFrame
    mean_converging: bool | None
    variance_persistent: bool | None


def _sweep_replicate(setup: SweepSetup, r: int, grid: TimeGrid, steps: list[int]) -> list[float]:
    try:
        return _sweep_values(setup, r, grid, steps)
    except (SDESelectError, ValueError, FloatingPointError) as exc:
        raise ReplicateError(r, exc) from exc


def _sweep_values(setup: SweepSetup, r: int, grid: TimeGrid, steps: list[int]) -> list[float]:
    seed_r = derive_seed(setup.seed, REPLICATE_STREAM, r)
    truth = setup.truth
    if setup.truth_prior is not None:
        truth = truth.with_params(sample_prior(setup.truth_prior, derive_seed(seed_r, TRUTH_STREAM), 1)[0])
    covs = setup.covariates if setup.covariates is not None else CovariateSet.empty(grid)
    path = euler_maruyama(truth, covs, setup.x0, grid, derive_seed(seed_r, PATH_STREAM))
    prior_seed = derive_seed(seed_r, PRIOR_STREAM)
    out = []
    for k in steps:
        est = log_marginal_ratio_mc(path.window(0, k), covs.window(0, k), setup.family, setup.prior,
                                    truth, setup.prior_draws, prior_seed)
        out.append(est.value / (k * grid.dt))
    return out


def convergence_sweep(setup: SweepSetup) -> SweepResult:
    """
    Replicate means, standard errors and variances of (1/T) log I_T over the
    configured horizons. Each replicate simulates one path to the longest
    horizon and evaluates every T on its prefix.
    """
    horizons = sorted(float(t) for t in setup.horizons)
    steps = [_horizon_steps(t, setup.dt) for t in horizons]
    grid = TimeGrid(0.0, steps[-1] * setup.dt, steps[-1])
    if setup.covariates is not None and setup.covariates.grid != grid:
        raise GridError(f"sweep covariates must live on {grid}")

    rows = Parallel(n_jobs=setup.n_jobs)(
        delayed(_sweep_replicate)(setup, r, grid, steps) for r in range(setup.replications))
    values = np.asarray(rows, dtype=float).reshape(setup.replications, len(steps))

    target = setup.delta_target
    records = []
    for j, horizon in enumerate(horizons):
        mean, se, var = _summaries(values[:, j])
        gap = abs(mean + target) if target is not None else math.nan
        records.append({"T": horizon, "mean": mean, "se": se, "var": var,
                        "delta_target": target if target is not None else math.nan, "gap": gap})
        logger.info("T=%g mean=%.6g se=%.3g var=%.3g", horizon, mean, se, var)
    table = pd.DataFrame.from_records(records, columns=["T", "mean", "se", "var", "delta_target", "gap"])

    mean_converging = None
    if target is not None:
        mean_converging = bool(np.all(np.diff(table["gap"].to_numpy()) < 0))
    variance_persistent = None
    if setup.replications >= 2:
        var = table["var"].to_numpy()
        variance_persistent = bool(var[-1] > setup.variance_floor * var[0])
    return SweepResult(table, mean_converging, variance_persistent)


def uv_time_average_diagnostic(m0: ModelSpec, m1: ModelSpec, covs: CovariateSet, x0: float,
                               horizons: Sequence[float], replications: int, seed: int,
                               kappas: KappaSpec | None = None) -> pd.DataFrame:
    """
    Replicate means of V0/T, V01/T, U1/T and V1/T under paths from m0,
    against phi-bar times kappa targets computed on the same window.
    """
    if kappas is None:
        if m0.drift.family != "ratio" or m1.drift.family != "ratio":
            raise ModelMismatchError("closed-form targets need constant-ratio drifts")
        kappas = KappaSpec.from_ratio()
    if m0.diffusion != m1.diffusion:
        raise ModelMismatchError("models must share the diffusion")
    grid = covs.grid
    seeds = [derive_seed(derive_seed(seed, REPLICATE_STREAM, r), PATH_STREAM) for r in range(replications)]
    paths = simulate_paths(m0, covs, x0, grid, seeds)
    k0, k1, kb = kappas.evaluate(np.asarray(m0.drift.beta), np.asarray(m1.drift.beta))

    records = []
    for horizon in sorted(horizons):
        k = _horizon_steps(horizon - grid.t0, grid.dt)
        cw = covs.window(0, k)
        T = cw.grid.horizon
        pb0 = phi_bar(m0.xi, cw, m0.mask)
        pb1 = phi_bar(m1.xi, cw, m1.mask)
        cross = phi_bar_cross(m0.xi, m1.xi, cw, m0.mask, m1.mask)
        stats = {"V0/T": [], "V01/T": [], "U1/T": [], "V1/T": []}
        for path in paths:
            pw = path.window(0, k)
            ker0 = LikelihoodKernel(m0, pw, cw)
            ker1 = LikelihoodKernel(m1, pw, cw)
            d0 = ker0.drift(m0.theta)
            d1 = ker1.drift(m1.theta)
            stats["V0/T"].append(ker0.quad(d0, d0)[0] / T)
            stats["V01/T"].append(ker0.quad(d0, d1)[0] / T)
            stats["U1/T"].append(ker1.ito(d1)[0] / T)
            stats["V1/T"].append(ker1.quad(d1, d1)[0] / T)
        targets = {"V0/T": pb0.phi2 * k0, "V01/T": cross * kb, "U1/T": cross * kb, "V1/T": pb1.phi2 * k1}
        for name, values in stats.items():
            mean, se, _ = _summaries(np.asarray(values))
            records.append({"T": T, "statistic": name, "mean": mean, "se": se,
                            "target": targets[name], "gap": abs(mean - targets[name])})
    return pd.DataFrame.from_records(records, columns=["T", "statistic", "mean", "se", "target", "gap"])


def kl_rate_monte_carlo(m0: ModelSpec, m1: ModelSpec, covs: CovariateSet, x0: float, k: int,
                        h_steps: int, replications: int, seed: int) -> tuple[float, float]:
    """
    Finite-difference divergence rate at t_k for any drift families:
    replicate mean of [log f0 - log f1] over [t_k, t_{k+h}] divided by h,
    with paths simulated under m0. Returns (rate, standard error).
    """
    grid = covs.grid
    grid.check_index(k + h_steps)
    if m0.diffusion != m1.diffusion:
        raise ModelMismatchError("models must share the diffusion")
    sub = grid.window(0, k + h_steps)
    cs = covs.window(0, k + h_steps)
    seeds = [derive_seed(seed, REPLICATE_STREAM, r) for r in range(replications)]
    paths = simulate_paths(m0, cs, x0, sub, seeds)
    h = h_steps * grid.dt
    cw = cs.window(k, k + h_steps)
    values = []
    for path in paths:
        pw = path.window(k, k + h_steps)
        l0 = LikelihoodKernel(m0, pw, cw).log_density(m0.theta)[0]
        l1 = LikelihoodKernel(m1, pw, cw).log_density(m1.theta)[0]
        values.append((l0 - l1) / h)
    mean, se, _ = _summaries(np.asarray(values))
    return mean, se


# Covariate design diagnostics

@dataclass(frozen=True, eq=False)
class DesignReport:
    prefix_means: np.ndarray   # (n, p, len(t)) averages of g_l over the first n' individuals
    prefix_cross: np.ndarray   # (n, p, p, len(t)) averages of g_l g_m
    fluctuation: pd.DataFrame  # dyadic prefix size n' against RMS change
    slope: float


def covariate_design_check(covsets: Sequence[CovariateSet], t_indices: Sequence[int]) -> DesignReport:
    """
    Prefix averages across individuals of the transformed covariates and
    their pairwise products at the given grid indices. The fluctuation at a
    dyadic prefix n' is the RMS of avg(n') - avg(n'/2); its log-log slope
    against n' estimates the rate at which the averages settle.
    """
    n = len(covsets)
    if n < 2:
        raise ValueError("design check needs at least two individuals")
    idx = [covsets[0].grid.check_index(k) for k in t_indices]
    g = np.stack([c.transformed[:, idx] for c in covsets])  # (n, p, t)
    counts = np.arange(1, n + 1)[:, None, None]
    prefix_means = np.cumsum(g, axis=0) / counts
    products = g[:, :, None, :] * g[:, None, :, :]
    prefix_cross = np.cumsum(products, axis=0) / counts[..., None]

    sizes, fluct = [], []
    size = 2
    while size <= n:
        diff = prefix_means[size - 1] - prefix_means[size // 2 - 1]
        sizes.append(size)
        fluct.append(float(np.sqrt(np.mean(diff * diff))))
        size *= 2
    fluctuation = pd.DataFrame({"n": sizes, "fluctuation": fluct})
    slope = math.nan
    if len(sizes) >= 2 and all(f > 0 for f in fluct):
        slope = float(np.polyfit(np.log(sizes), np.log(fluct), 1)[0])
    return DesignReport(prefix_means, prefix_cross, fluctuation, slope)
